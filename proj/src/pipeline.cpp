#include "loresmt/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include "loresmt/checkpoint.hpp"
#include "loresmt/corpus.hpp"
#include "loresmt/eval.hpp"
#include "loresmt/g2p.hpp"
#include "loresmt/hash.hpp"
#include "loresmt/rng.hpp"
#include "loresmt/text.hpp"

namespace loresmt::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k))
      throw ConfigError("unknown key '" + k + "' in " + where);
}

std::string require_string(const json& j, const std::string& key,
                           const std::string& where) {
  if (!j.contains(key))
    throw ConfigError(where + " is missing required key '" + key + "'");
  if (!j.at(key).is_string())
    throw ConfigError(where + "." + key + " must be a string");
  return j.at(key).get<std::string>();
}

CorpusSpec parse_corpus_entry(const json& j, std::size_t index) {
  const std::string where = "data.corpora[" + std::to_string(index) + "]";
  reject_unknown_keys(j,
                      {"name", "src", "tgt", "src_lang", "tgt_lang", "g2p",
                       "backtranslation"},
                      where);
  CorpusSpec c;
  c.name = require_string(j, "name", where);
  c.src = require_string(j, "src", where);
  c.tgt = require_string(j, "tgt", where);
  c.src_lang = require_string(j, "src_lang", where);
  c.tgt_lang = require_string(j, "tgt_lang", where);
  if (j.contains("g2p")) {
    const auto& g = j.at("g2p");
    reject_unknown_keys(g, {"combination", "rules"}, where + ".g2p");
    c.g2p_combination = require_string(g, "combination", where + ".g2p");
    if (c.g2p_combination != "vertical" && c.g2p_combination != "horizontal")
      throw ConfigError(where + ".g2p.combination must be 'vertical' or "
                                "'horizontal', got '" +
                        c.g2p_combination + "'");
    c.g2p_rules = require_string(g, "rules", where + ".g2p");
  }
  if (j.contains("backtranslation")) {
    const auto& b = j.at("backtranslation");
    reject_unknown_keys(b, {"src", "tgt", "ratio"},
                        where + ".backtranslation");
    c.bt_src = require_string(b, "src", where + ".backtranslation");
    c.bt_tgt = require_string(b, "tgt", where + ".backtranslation");
    c.bt_ratio = b.value("ratio", 1.0);
    if (c.bt_ratio < 0)
      throw ConfigError(where + ".backtranslation.ratio must be >= 0");
  }
  return c;
}

EvalSpec parse_eval_entry(const json& j, std::size_t index) {
  const std::string where = "eval[" + std::to_string(index) + "]";
  reject_unknown_keys(j, {"name", "src", "ref", "tgt_lang", "strip_multitask"},
                      where);
  EvalSpec e;
  e.name = require_string(j, "name", where);
  e.src = require_string(j, "src", where);
  e.ref = require_string(j, "ref", where);
  e.tgt_lang = require_string(j, "tgt_lang", where);
  e.strip_multitask = j.value("strip_multitask", false);
  return e;
}

model::ModelConfig resolve_model(const ModelSpec& ms, int vocab) {
  model::ModelConfig mc;
  if (ms.preset == "custom") {
    mc.vocab_size = vocab;
    mc.preset = model::Preset::custom;
  } else {
    mc = model::ModelConfig::from_preset(ms.preset, vocab);
  }
  json j = mc.to_json();
  for (const auto& [k, v] : ms.overrides.items()) {
    if (k == "vocab_size" || k == "preset")
      throw ConfigError("model." + k + " cannot be overridden");
    if (!j.contains(k)) throw ConfigError("unknown model override '" + k + "'");
    j[k] = v;
  }
  j["seed"] = ms.seed;
  return model::ModelConfig::from_json(j);  // re-validates
}

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const json& j) {
  reject_unknown_keys(j,
                      {"name", "run_dir", "data", "subword", "model", "train",
                       "decode", "rescore", "eval"},
                      "config");
  ExperimentConfig cfg;
  cfg.name = require_string(j, "name", "config");
  if (cfg.name.empty()) throw ConfigError("config.name must be non-empty");
  cfg.run_dir = j.value("run_dir", "");

  if (!j.contains("data")) throw ConfigError("config is missing 'data'");
  const auto& data = j.at("data");
  reject_unknown_keys(data, {"corpora", "balance", "shuffle_seed"}, "data");
  cfg.balance = data.value("balance", true);
  cfg.shuffle_seed = data.value("shuffle_seed", std::uint64_t{11});
  if (!data.contains("corpora") || !data.at("corpora").is_array() ||
      data.at("corpora").empty())
    throw ConfigError("data.corpora must be a non-empty array");
  for (std::size_t i = 0; i < data.at("corpora").size(); ++i)
    cfg.corpora.push_back(parse_corpus_entry(data.at("corpora")[i], i));

  if (!j.contains("subword")) throw ConfigError("config is missing 'subword'");
  const auto& sw = j.at("subword");
  reject_unknown_keys(sw, {"mode", "vocab_size"}, "subword");
  const std::string mode = require_string(sw, "mode", "subword");
  if (mode == "chars") {
    cfg.spm_mode = subword::Mode::chars;
  } else if (mode == "bpe") {
    cfg.spm_mode = subword::Mode::bpe;
  } else {
    throw ConfigError("subword.mode must be 'chars' or 'bpe', got '" + mode +
                      "'");
  }
  cfg.spm_vocab = sw.value("vocab_size", 0);
  if (cfg.spm_mode == subword::Mode::bpe && cfg.spm_vocab < 6)
    throw ConfigError("subword.vocab_size must be at least 6 for bpe mode");

  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (!m.is_object()) throw ConfigError("model must be a JSON object");
    cfg.model.preset = m.value("preset", "base");
    cfg.model.seed = m.value("seed", std::uint64_t{1});
    cfg.model.overrides = m;
    cfg.model.overrides.erase("preset");
    cfg.model.overrides.erase("seed");
  }

  if (!j.contains("train")) throw ConfigError("config is missing 'train'");
  const auto& tr = j.at("train");
  reject_unknown_keys(tr, {"stages"}, "train");
  if (!tr.contains("stages") || !tr.at("stages").is_array() ||
      tr.at("stages").empty())
    throw ConfigError("train.stages must be a non-empty array");
  for (const auto& sj : tr.at("stages")) {
    auto stage = train::StageConfig::from_json(sj);
    if (stage.steps <= 0)
      throw ConfigError("train stage '" + stage.name +
                        "' needs a positive step count");
    if (stage.batch_size <= 0)
      throw ConfigError("train stage '" + stage.name +
                        "' needs a positive batch size");
    cfg.stages.push_back(std::move(stage));
  }

  if (j.contains("decode")) {
    const auto& d = j.at("decode");
    reject_unknown_keys(d, {"beam", "lenpen", "nbest", "max_len", "kv_cache"},
                        "decode");
    cfg.beam.beam_size = d.value("beam", cfg.beam.beam_size);
    cfg.beam.lenpen = d.value("lenpen", cfg.beam.lenpen);
    cfg.beam.nbest = d.value("nbest", cfg.beam.nbest);
    cfg.beam.max_len = d.value("max_len", cfg.beam.max_len);
    cfg.beam.use_kv_cache = d.value("kv_cache", cfg.beam.use_kv_cache);
    cfg.beam.validate();
  }

  if (j.contains("rescore")) {
    const auto& r = j.at("rescore");
    reject_unknown_keys(r, {"lambda", "nbest", "model", "spm"}, "rescore");
    cfg.rescore.enabled = true;
    cfg.rescore.lambda = r.value("lambda", 1.0);
    if (cfg.rescore.lambda < 0 || cfg.rescore.lambda > 1)
      throw ConfigError("rescore.lambda must lie in [0, 1]");
    cfg.rescore.nbest = r.value("nbest", 20);
    if (cfg.rescore.nbest < 1)
      throw ConfigError("rescore.nbest must be positive");
    cfg.rescore.model = require_string(r, "model", "rescore");
    cfg.rescore.spm = require_string(r, "spm", "rescore");
  }

  if (j.contains("eval")) {
    if (!j.at("eval").is_array())
      throw ConfigError("eval must be an array of eval sets");
    for (std::size_t i = 0; i < j.at("eval").size(); ++i)
      cfg.evals.push_back(parse_eval_entry(j.at("eval")[i], i));
  }
  return cfg;
}

json RunManifest::to_json() const {
  return json{{"name", name},
              {"config_hash", config_hash},
              {"inputs", inputs},
              {"artifacts", artifacts},
              {"metrics", metrics},
              {"content_hash", content_hash}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.name = j.at("name").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  m.metrics = j.at("metrics");
  m.content_hash = j.at("content_hash").get<std::string>();
  return m;
}

RunManifest run_experiment(const fs::path& config_path,
                           const fs::path& run_dir_override, bool quiet) {
  const json cfg_json = read_json_file(config_path);
  ExperimentConfig cfg;
  try {
    cfg = ExperimentConfig::parse(cfg_json);
  } catch (const ConfigError& e) {
    throw ConfigError(config_path.string() + ": " + e.what());
  }

  const fs::path base =
      config_path.has_parent_path() ? config_path.parent_path() : fs::path(".");
  auto resolve = [&](const std::string& rel) {
    fs::path p(rel);
    return p.is_absolute() ? p : base / p;
  };

  fs::path run_dir;
  if (!run_dir_override.empty()) {
    run_dir = run_dir_override;
  } else if (!cfg.run_dir.empty()) {
    run_dir = resolve(cfg.run_dir);
  } else {
    throw ConfigError(config_path.string() +
                      ": no run_dir in the config and none given");
  }

  auto note = [&](const std::string& s) {
    if (!quiet) std::cerr << "[" << cfg.name << "] " << s << std::endl;
  };

  fs::create_directories(run_dir / "corpus");
  fs::create_directories(run_dir / "decode");
  fs::create_directories(run_dir / "eval");

  RunManifest man;
  man.name = cfg.name;
  {
    // The hash covers the experiment definition, not where it ran.
    json canonical = cfg_json;
    canonical.erase("run_dir");
    man.config_hash = sha256_hex(canonical.dump());
  }
  write_json_file(run_dir / "config.json", cfg_json);

  // --- corpus construction --------------------------------------------------

  std::vector<corpus::ParallelCorpus> parts;
  for (std::size_t ci = 0; ci < cfg.corpora.size(); ++ci) {
    const auto& cs = cfg.corpora[ci];
    man.inputs[cs.src] = sha256_file(resolve(cs.src));
    man.inputs[cs.tgt] = sha256_file(resolve(cs.tgt));
    auto part = corpus::load_plain(resolve(cs.src), resolve(cs.tgt), cs.name,
                                   corpus::LangCode(cs.src_lang),
                                   corpus::LangCode(cs.tgt_lang));
    for (auto& p : part.pairs) p = corpus::tag_source(p);
    if (!cs.bt_src.empty()) {
      man.inputs[cs.bt_src] = sha256_file(resolve(cs.bt_src));
      man.inputs[cs.bt_tgt] = sha256_file(resolve(cs.bt_tgt));
      auto bt = corpus::load_plain(
          resolve(cs.bt_src), resolve(cs.bt_tgt), cs.name + "_bt",
          corpus::LangCode(cs.src_lang), corpus::LangCode(cs.tgt_lang),
          corpus::Origin::backtranslated);
      for (auto& p : bt.pairs) p = corpus::tag_source(p);
      part = corpus::mix_backtranslation(
          part, bt, cs.bt_ratio, mix_seed(cfg.shuffle_seed, 0x62740000ull + ci));
    }
    if (!cs.g2p_combination.empty()) {
      man.inputs[cs.g2p_rules] = sha256_file(resolve(cs.g2p_rules));
      const auto rules = g2p::load_rules(resolve(cs.g2p_rules).string());
      part = cs.g2p_combination == "vertical"
                 ? corpus::make_g2p_vertical(part, rules)
                 : corpus::make_g2p_horizontal(part, rules);
    }
    note("corpus " + cs.name + ": " + std::to_string(part.size()) + " pairs");
    parts.push_back(std::move(part));
  }
  if (cfg.balance && parts.size() > 1)
    parts = corpus::balance_oversample(parts,
                                       mix_seed(cfg.shuffle_seed, 0x62616cull));
  auto mixed =
      corpus::concat_multilingual(parts, mix_seed(cfg.shuffle_seed, 0x636f6eull));
  corpus::save_corpus(mixed, run_dir / "corpus", "train");
  for (const char* rel :
       {"corpus/train.src", "corpus/train.tgt", "corpus/train.json"})
    man.artifacts[rel] = sha256_file(run_dir / rel);
  note("mixed training corpus: " + std::to_string(mixed.size()) + " pairs");

  // --- segmentation ----------------------------------------------------------

  std::vector<std::string> spm_lines;
  spm_lines.reserve(2 * mixed.size());
  std::set<std::string> tagset;
  for (const auto& p : mixed.pairs) {
    spm_lines.push_back(p.source);
    spm_lines.push_back(p.target);
    const auto t = leading_tag(p.source);
    if (!t.empty()) tagset.insert("<" + t + ">");
  }
  const std::vector<std::string> tags(tagset.begin(), tagset.end());
  auto spm = subword::train(spm_lines, cfg.spm_mode, cfg.spm_vocab, tags);
  spm.save(run_dir / "spm.json");
  man.artifacts["spm.json"] = sha256_file(run_dir / "spm.json");
  note("segmentation model: " + std::to_string(spm.vocab.size()) + " tokens");

  std::vector<train::Example> examples;
  examples.reserve(mixed.size());
  for (const auto& p : mixed.pairs) {
    train::Example ex;
    ex.src = subword::encode(p.source, spm);
    ex.src.push_back(subword::Vocab::kEos);
    ex.tgt = subword::encode(p.target, spm);
    ex.tgt.push_back(subword::Vocab::kEos);
    examples.push_back(std::move(ex));
  }

  // --- model + training -------------------------------------------------------

  const auto mc = resolve_model(cfg.model, static_cast<int>(spm.vocab.size()));
  auto params = model::init_model<float>(mc);
  note("model: " + std::to_string(params.parameter_count()) + " parameters");

  std::ofstream metrics_out(run_dir / "metrics.jsonl", std::ios::binary);
  if (!metrics_out)
    throw PipelineError("cannot write " + (run_dir / "metrics.jsonl").string());

  train::Adam<float> opt(params, cfg.stages.front().optim);
  json train_summary = json::array();
  long steps_total = 0;
  for (std::size_t si = 0; si < cfg.stages.size(); ++si) {
    const auto& stage = cfg.stages[si];
    if (si > 0 && stage.reset_optimizer)
      opt = train::Adam<float>(params, stage.optim);
    note("stage " + stage.name + ": " + std::to_string(stage.steps) +
         " steps, batch " + std::to_string(stage.batch_size));
    double last_loss = 0;
    train::train_stage<float>(
        params, mc, examples, stage, opt, [&](const json& rec) {
          metrics_out << rec.dump() << "\n";
          last_loss = rec.at("loss").get<double>();
          ++steps_total;
          const long step = rec.at("step").get<long>();
          if (!quiet && (step % 100 == 0 || step == stage.steps))
            std::cerr << "[" << cfg.name << "]   step " << step << "/"
                      << stage.steps << "  loss " << last_loss << "\n";
        });
    train_summary.push_back({{"stage", stage.name},
                             {"steps", stage.steps},
                             {"final_loss", last_loss}});
  }
  metrics_out.close();
  man.artifacts["metrics.jsonl"] = sha256_file(run_dir / "metrics.jsonl");

  model::save_checkpoint(run_dir / "checkpoint.ckpt", mc, params,
                         {{"name", cfg.name}, {"steps", steps_total}});
  man.artifacts["checkpoint.ckpt"] = sha256_file(run_dir / "checkpoint.ckpt");

  // --- decode + evaluate -------------------------------------------------------

  std::optional<model::Checkpoint<float>> resc;
  subword::Model resc_spm;
  if (cfg.rescore.enabled) {
    man.inputs[cfg.rescore.model] = sha256_file(resolve(cfg.rescore.model));
    man.inputs[cfg.rescore.spm] = sha256_file(resolve(cfg.rescore.spm));
    resc = model::load_checkpoint<float>(resolve(cfg.rescore.model));
    resc_spm = subword::Model::load(resolve(cfg.rescore.spm));
  }

  json eval_metrics = json::object();
  for (const auto& ev : cfg.evals) {
    man.inputs[ev.src] = sha256_file(resolve(ev.src));
    man.inputs[ev.ref] = sha256_file(resolve(ev.ref));
    const auto src_lines = corpus::read_lines(resolve(ev.src));
    const auto refs = corpus::read_lines(resolve(ev.ref));
    if (src_lines.size() != refs.size())
      throw PipelineError("eval set " + ev.name + ": " +
                          std::to_string(src_lines.size()) + " sources vs " +
                          std::to_string(refs.size()) + " references");

    const std::string tag = corpus::LangCode(ev.tgt_lang).tag();
    std::vector<std::string> tagged;
    tagged.reserve(src_lines.size());
    for (const auto& s : src_lines)
      tagged.push_back(tag + " " + normalize_whitespace(s));

    decode::BeamConfig bc = cfg.beam;
    if (cfg.rescore.enabled) bc.nbest = std::max(bc.nbest, cfg.rescore.nbest);
    note("decoding " + ev.name + ": " + std::to_string(tagged.size()) +
         " segments, beam " + std::to_string(bc.beam_size));
    const auto results = decode::translate_lines(params, mc, spm, tagged, bc);

    std::vector<std::string> hyps;
    std::vector<decode::NBestEntry> all_entries;
    hyps.reserve(results.size());
    for (std::size_t i = 0; i < results.size(); ++i) {
      auto group = results[i].nbest;
      if (cfg.rescore.enabled)
        group = decode::rescore_group(group, tagged[i], resc->params,
                                      resc->config, resc_spm,
                                      cfg.rescore.lambda, cfg.beam.lenpen);
      hyps.push_back(group.empty() ? std::string() : group.front().text);
      all_entries.insert(all_entries.end(), group.begin(), group.end());
    }

    corpus::write_lines(run_dir / "decode" / (ev.name + ".hyp"), hyps);
    decode::save_nbest(run_dir / "decode" / (ev.name + ".nbest"), all_entries);
    man.artifacts["decode/" + ev.name + ".hyp"] =
        sha256_file(run_dir / "decode" / (ev.name + ".hyp"));
    man.artifacts["decode/" + ev.name + ".nbest"] =
        sha256_file(run_dir / "decode" / (ev.name + ".nbest"));

    const auto rep = eval::evaluate(hyps, refs, ev.strip_multitask);
    const json rj = rep.to_json();
    write_json_file(run_dir / "eval" / (ev.name + ".json"), rj);
    man.artifacts["eval/" + ev.name + ".json"] =
        sha256_file(run_dir / "eval" / (ev.name + ".json"));
    eval_metrics[ev.name] = rj;
    note(ev.name + ": BLEU " + fmt1(rep.bleu.score) + ", chrF2 " +
         fmt1(rep.chrf.score) + ", exact " + fmt1(100 * rep.exact_match) + "%");
  }

  man.metrics = json{{"train", train_summary}, {"eval", eval_metrics}};
  {
    const json content{{"name", man.name},
                       {"config_hash", man.config_hash},
                       {"inputs", man.inputs},
                       {"artifacts", man.artifacts},
                       {"metrics", man.metrics}};
    man.content_hash = sha256_hex(content.dump());
  }
  write_json_file(run_dir / "run.json", man.to_json());
  note("done, content hash " + man.content_hash.substr(0, 12));
  return man;
}

RunManifest load_manifest(const fs::path& run_dir) {
  return RunManifest::from_json(read_json_file(run_dir / "run.json"));
}

json compare_runs(const std::vector<fs::path>& run_dirs) {
  if (run_dirs.empty()) throw PipelineError("nothing to compare");
  json rows = json::array();
  for (const auto& dir : run_dirs) {
    const auto m = load_manifest(dir);
    rows.push_back({{"name", m.name},
                    {"run_dir", dir.string()},
                    {"content_hash", m.content_hash},
                    {"eval", m.metrics.value("eval", json::object())}});
  }
  return rows;
}

std::string render_comparison(const json& rows) {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-16s %-12s %8s %8s %8s\n", "run", "set",
                "BLEU", "chrF2", "exact%");
  out += buf;
  out += std::string(56, '-') + "\n";
  for (const auto& row : rows) {
    const auto name = row.at("name").get<std::string>();
    const auto& evals = row.at("eval");
    if (evals.empty()) {
      std::snprintf(buf, sizeof buf, "%-16s %-12s %8s %8s %8s\n", name.c_str(),
                    "-", "-", "-", "-");
      out += buf;
      continue;
    }
    for (const auto& [set_name, rep] : evals.items()) {
      std::snprintf(buf, sizeof buf, "%-16s %-12s %8.2f %8.2f %8.1f\n",
                    name.c_str(), set_name.c_str(),
                    rep.at("bleu").at("score").get<double>(),
                    rep.at("chrf").at("score").get<double>(),
                    100 * rep.value("exact_match", 0.0));
      out += buf;
    }
  }
  return out;
}

std::string render_report(const RunManifest& m, const std::string& format) {
  if (format == "json") return m.to_json().dump(2) + "\n";
  if (format != "md")
    throw PipelineError("unknown report format '" + format + "'");

  std::string out;
  out += "# Run " + m.name + "\n\n";
  out += "- content hash: `" + m.content_hash + "`\n";
  out += "- config hash: `" + m.config_hash + "`\n\n";

  const auto evals = m.metrics.value("eval", json::object());
  if (!evals.empty()) {
    out += "## Metrics\n\n";
    out += "| set | BLEU | chrF2 | exact match | segments |\n";
    out += "|-----|------|-------|-------------|----------|\n";
    for (const auto& [name, rep] : evals.items()) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "| %s | %.2f | %.2f | %.1f%% | %zu |\n",
                    name.c_str(), rep.at("bleu").at("score").get<double>(),
                    rep.at("chrf").at("score").get<double>(),
                    100 * rep.value("exact_match", 0.0),
                    rep.at("segments").get<std::size_t>());
      out += buf;
    }
    out += "\n";
  }
  if (m.metrics.contains("train")) {
    out += "## Training\n\n";
    out += "| stage | steps | final loss |\n";
    out += "|-------|-------|------------|\n";
    for (const auto& st : m.metrics.at("train")) {
      char buf[120];
      std::snprintf(buf, sizeof buf, "| %s | %ld | %.4f |\n",
                    st.at("stage").get<std::string>().c_str(),
                    st.at("steps").get<long>(),
                    st.at("final_loss").get<double>());
      out += buf;
    }
    out += "\n";
  }
  out += "## Artifacts\n\n";
  out += "| file | sha256 |\n";
  out += "|------|--------|\n";
  for (const auto& [rel, hash] : m.artifacts)
    out += "| " + rel + " | `" + hash.substr(0, 12) + "` |\n";
  return out;
}

}  // namespace loresmt::pipeline
