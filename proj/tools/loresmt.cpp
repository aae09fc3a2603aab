// Command-line front end. Every subcommand is a thin wrapper over the
// library; anything worth testing lives there, not here.
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "loresmt/checkpoint.hpp"
#include "loresmt/corpus.hpp"
#include "loresmt/decode.hpp"
#include "loresmt/eval.hpp"
#include "loresmt/fixtures.hpp"
#include "loresmt/g2p.hpp"
#include "loresmt/pipeline.hpp"
#include "loresmt/subword.hpp"
#include "loresmt/text.hpp"
#include "loresmt/transformer.hpp"

namespace {

using namespace loresmt;

std::vector<std::string> read_input(const std::string& path) {
  if (path.empty() || path == "-") {
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(std::cin, line)) lines.push_back(line);
    return lines;
  }
  return corpus::read_lines(path);
}

void write_output(const std::string& path,
                  const std::vector<std::string>& lines) {
  if (path.empty() || path == "-") {
    for (const auto& l : lines) std::cout << l << "\n";
    return;
  }
  corpus::write_lines(path, lines);
}

std::string tag_line(const std::string& line, const std::string& tag) {
  const std::string body = normalize_whitespace(line);
  if (tag.empty()) return body;
  return corpus::LangCode(tag).tag() + " " + body;
}

// --- corpus ------------------------------------------------------------------

struct CorpusTagArgs {
  std::string src, tgt, src_lang, tgt_lang, name = "corpus", out_dir, stem;
};

void cmd_corpus_tag(const CorpusTagArgs& a) {
  auto c = corpus::load_plain(a.src, a.tgt, a.name, corpus::LangCode(a.src_lang),
                              corpus::LangCode(a.tgt_lang));
  for (auto& p : c.pairs) p = corpus::tag_source(p);
  corpus::save_corpus(c, a.out_dir, a.stem.empty() ? a.name : a.stem);
}

void cmd_corpus_concat(const std::vector<std::string>& manifests,
                       std::uint64_t seed, const std::string& out_dir,
                       const std::string& stem) {
  std::vector<corpus::ParallelCorpus> parts;
  for (const auto& m : manifests) parts.push_back(corpus::load_corpus(m));
  auto mixed = corpus::concat_multilingual(parts, seed);
  corpus::save_corpus(mixed, out_dir, stem);
}

void cmd_corpus_balance(const std::vector<std::string>& manifests,
                        std::uint64_t seed, const std::string& out_dir) {
  std::vector<corpus::ParallelCorpus> parts;
  for (const auto& m : manifests) parts.push_back(corpus::load_corpus(m));
  auto balanced = corpus::balance_oversample(parts, seed);
  for (const auto& c : balanced) corpus::save_corpus(c, out_dir, c.name);
}

struct MixBtArgs {
  std::string parallel, bt, out_dir, stem;
  double ratio = 1.0;
  std::uint64_t seed = 1;
};

void cmd_corpus_mix_bt(const MixBtArgs& a) {
  auto par = corpus::load_corpus(a.parallel);
  auto bt = corpus::load_corpus(a.bt);
  auto mixed = corpus::mix_backtranslation(par, bt, a.ratio, a.seed);
  corpus::save_corpus(mixed, a.out_dir, a.stem);
}

void cmd_corpus_g2p(const std::string& manifest, const std::string& rules_path,
                    bool vertical, const std::string& out_dir,
                    const std::string& stem) {
  auto c = corpus::load_corpus(manifest);
  const auto rules = g2p::load_rules(rules_path);
  auto combined = vertical ? corpus::make_g2p_vertical(c, rules)
                           : corpus::make_g2p_horizontal(c, rules);
  corpus::save_corpus(combined, out_dir, stem);
}

void cmd_corpus_strip(const std::string& in, const std::string& out) {
  auto lines = read_input(in);
  for (auto& l : lines) l = corpus::strip_phoneme_suffix(l);
  write_output(out, lines);
}

// --- g2p -----------------------------------------------------------------------

void cmd_g2p(const std::string& rules_path, const std::string& in,
             const std::string& out) {
  const auto rules = g2p::load_rules(rules_path);
  for (const auto& w : rules.warnings) std::cerr << "g2p: " << w << "\n";
  auto lines = read_input(in);
  for (auto& l : lines) l = g2p::phonemize(l, rules);
  write_output(out, lines);
}

// --- spm -----------------------------------------------------------------------

struct SpmTrainArgs {
  std::vector<std::string> inputs;
  std::string mode = "bpe";
  int vocab_size = 0;
  std::vector<std::string> tags;
  std::string out;
};

void cmd_spm_train(const SpmTrainArgs& a) {
  std::vector<std::string> lines;
  for (const auto& f : a.inputs) {
    auto part = corpus::read_lines(f);
    lines.insert(lines.end(), part.begin(), part.end());
  }
  const auto mode =
      a.mode == "chars" ? subword::Mode::chars : subword::Mode::bpe;
  auto model = subword::train(lines, mode, a.vocab_size, a.tags);
  model.save(a.out);
  std::cout << "vocab " << model.vocab.size() << ", merges "
            << model.merges.size() << "\n";
}

void cmd_spm_encode(const std::string& model_path, const std::string& in,
                    const std::string& out, bool ids) {
  const auto model = subword::Model::load(model_path);
  auto lines = read_input(in);
  for (auto& l : lines) {
    const auto encoded = subword::encode(l, model);
    std::string row;
    for (std::size_t i = 0; i < encoded.size(); ++i) {
      if (i) row += ' ';
      row += ids ? std::to_string(encoded[i]) : model.vocab.token(encoded[i]);
    }
    l = row;
  }
  write_output(out, lines);
}

void cmd_spm_decode(const std::string& model_path, const std::string& in,
                    const std::string& out) {
  const auto model = subword::Model::load(model_path);
  auto lines = read_input(in);
  for (auto& l : lines) {
    std::istringstream ss(l);
    std::vector<int> encoded;
    int id;
    while (ss >> id) encoded.push_back(id);
    l = subword::decode(encoded, model);
  }
  write_output(out, lines);
}

// --- decode / rescore / gridsearch / evaluate -----------------------------------

struct DecodeArgs {
  std::string model, spm, in, out, nbest_out, tag;
  decode::BeamConfig beam;
};

void cmd_decode(const DecodeArgs& a) {
  const auto ckpt = model::load_checkpoint<float>(a.model);
  const auto spm = subword::Model::load(a.spm);
  auto lines = read_input(a.in);
  for (auto& l : lines) l = tag_line(l, a.tag);
  const auto results =
      decode::translate_lines(ckpt.params, ckpt.config, spm, lines, a.beam);
  std::vector<std::string> hyps;
  std::vector<decode::NBestEntry> entries;
  for (const auto& r : results) {
    hyps.push_back(r.text);
    entries.insert(entries.end(), r.nbest.begin(), r.nbest.end());
  }
  write_output(a.out, hyps);
  if (!a.nbest_out.empty()) decode::save_nbest(a.nbest_out, entries);
}

struct RescoreArgs {
  std::string nbest, src, model, spm, out, top_out, tag;
  double lambda = 1.0;
  double lenpen = 1.0;
};

void cmd_rescore(const RescoreArgs& a) {
  const auto ckpt = model::load_checkpoint<float>(a.model);
  const auto spm = subword::Model::load(a.spm);
  const auto entries = decode::load_nbest(a.nbest);
  auto srcs = corpus::read_lines(a.src);
  for (auto& s : srcs) s = tag_line(s, a.tag);

  std::map<std::size_t, std::vector<decode::NBestEntry>> groups;
  for (const auto& e : entries) groups[e.id].push_back(e);

  std::vector<decode::NBestEntry> rescored;
  std::vector<std::string> top(srcs.size());
  for (auto& [id, group] : groups) {
    if (id >= srcs.size())
      throw decode::NBestParseError("n-best id " + std::to_string(id) +
                                    " out of range for " +
                                    std::to_string(srcs.size()) + " sources");
    auto ranked = decode::rescore_group(group, srcs[id], ckpt.params,
                                        ckpt.config, spm, a.lambda, a.lenpen);
    top[id] = ranked.empty() ? std::string() : ranked.front().text;
    rescored.insert(rescored.end(), ranked.begin(), ranked.end());
  }
  decode::save_nbest(a.out, rescored);
  if (!a.top_out.empty()) write_output(a.top_out, top);
}

struct GridArgs {
  std::string model, spm, src, ref, tag;
  std::vector<int> beams;
  std::vector<double> lenpens;
  int max_len = 64;
  bool strip_multitask = false;
};

void cmd_gridsearch(const GridArgs& a) {
  const auto ckpt = model::load_checkpoint<float>(a.model);
  const auto spm = subword::Model::load(a.spm);
  auto srcs = read_input(a.src);
  for (auto& s : srcs) s = tag_line(s, a.tag);
  const auto refs = corpus::read_lines(a.ref);

  decode::BeamConfig base;
  base.max_len = a.max_len;
  const auto grid =
      decode::grid_search(ckpt.params, ckpt.config, spm, srcs, refs, a.beams,
                          a.lenpens, base, a.strip_multitask);
  std::printf("%6s %8s %8s %8s\n", "beam", "lenpen", "BLEU", "chrF2");
  for (const auto& p : grid.points)
    std::printf("%6d %8.2f %8.2f %8.2f\n", p.beam, p.lenpen, p.bleu, p.chrf);
  std::printf("best: beam %d, lenpen %.2f (BLEU %.2f)\n", grid.best.beam,
              grid.best.lenpen, grid.best.bleu);
}

void cmd_evaluate(const std::string& hyp, const std::string& ref,
                  bool strip_multitask) {
  const auto hyps = corpus::read_lines(hyp);
  const auto refs = corpus::read_lines(ref);
  const auto rep = eval::evaluate(hyps, refs, strip_multitask);
  std::cout << rep.to_json().dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"low-resource multilingual NMT toolkit"};
  app.require_subcommand(1);

  // corpus ---------------------------------------------------------------
  auto* corpus_cmd = app.add_subcommand("corpus", "corpus construction");
  corpus_cmd->require_subcommand(1);

  CorpusTagArgs tag_args;
  auto* tag_cmd =
      corpus_cmd->add_subcommand("tag", "tag sources with the target language");
  tag_cmd->add_option("--src", tag_args.src, "source line file")->required();
  tag_cmd->add_option("--tgt", tag_args.tgt, "target line file")->required();
  tag_cmd->add_option("--src-lang", tag_args.src_lang)->required();
  tag_cmd->add_option("--tgt-lang", tag_args.tgt_lang)->required();
  tag_cmd->add_option("--name", tag_args.name, "corpus name");
  tag_cmd->add_option("--out", tag_args.out_dir, "output directory")
      ->required();
  tag_cmd->add_option("--stem", tag_args.stem, "output stem (default: name)");

  std::vector<std::string> concat_in;
  std::uint64_t concat_seed = 1;
  std::string concat_out, concat_stem = "mixed";
  auto* concat_cmd = corpus_cmd->add_subcommand(
      "concat", "concatenate tagged corpora and shuffle");
  concat_cmd->add_option("--in", concat_in, "corpus manifests")->required();
  concat_cmd->add_option("--seed", concat_seed);
  concat_cmd->add_option("--out", concat_out)->required();
  concat_cmd->add_option("--stem", concat_stem);

  std::vector<std::string> balance_in;
  std::uint64_t balance_seed = 1;
  std::string balance_out;
  auto* balance_cmd = corpus_cmd->add_subcommand(
      "balance", "oversample corpora to the largest size");
  balance_cmd->add_option("--in", balance_in, "corpus manifests")->required();
  balance_cmd->add_option("--seed", balance_seed);
  balance_cmd->add_option("--out", balance_out)->required();

  MixBtArgs mix_args;
  auto* mix_cmd = corpus_cmd->add_subcommand(
      "mix-bt", "mix back-translated data into a parallel corpus");
  mix_cmd->add_option("--parallel", mix_args.parallel)->required();
  mix_cmd->add_option("--bt", mix_args.bt)->required();
  mix_cmd->add_option("--ratio", mix_args.ratio,
                      "bt pairs as a fraction of parallel size");
  mix_cmd->add_option("--seed", mix_args.seed);
  mix_cmd->add_option("--out", mix_args.out_dir)->required();
  mix_cmd->add_option("--stem", mix_args.stem)->required();

  std::string gv_in, gv_rules, gv_out, gv_stem;
  auto* gv_cmd = corpus_cmd->add_subcommand(
      "g2p-vertical", "append a tagged phonemization task (2x pairs)");
  gv_cmd->add_option("--in", gv_in, "corpus manifest")->required();
  gv_cmd->add_option("--rules", gv_rules)->required();
  gv_cmd->add_option("--out", gv_out)->required();
  gv_cmd->add_option("--stem", gv_stem)->required();

  std::string gh_in, gh_rules, gh_out, gh_stem;
  auto* gh_cmd = corpus_cmd->add_subcommand(
      "g2p-horizontal", "append phonemes to each target after <sep>");
  gh_cmd->add_option("--in", gh_in, "corpus manifest")->required();
  gh_cmd->add_option("--rules", gh_rules)->required();
  gh_cmd->add_option("--out", gh_out)->required();
  gh_cmd->add_option("--stem", gh_stem)->required();

  std::string strip_in = "-", strip_out = "-";
  auto* strip_cmd = corpus_cmd->add_subcommand(
      "strip", "remove everything from <sep> onwards in each line");
  strip_cmd->add_option("--in", strip_in, "input lines (default stdin)");
  strip_cmd->add_option("--out", strip_out, "output (default stdout)");

  // g2p --------------------------------------------------------------------
  std::string g2p_rules, g2p_in = "-", g2p_out = "-";
  auto* g2p_cmd = app.add_subcommand("g2p", "apply rewrite rules to text");
  g2p_cmd->add_option("--rules", g2p_rules)->required();
  g2p_cmd->add_option("--in", g2p_in, "input lines (default stdin)");
  g2p_cmd->add_option("--out", g2p_out, "output (default stdout)");

  // spm --------------------------------------------------------------------
  auto* spm_cmd = app.add_subcommand("spm", "subword segmentation");
  spm_cmd->require_subcommand(1);

  SpmTrainArgs spm_train_args;
  auto* spm_train_cmd = spm_cmd->add_subcommand("train", "train a model");
  spm_train_cmd->add_option("--in", spm_train_args.inputs, "text files")
      ->required();
  spm_train_cmd
      ->add_option("--mode", spm_train_args.mode, "bpe or chars")
      ->check(CLI::IsMember({"bpe", "chars"}));
  spm_train_cmd->add_option("--vocab-size", spm_train_args.vocab_size,
                            "total vocabulary size (bpe)");
  spm_train_cmd->add_option("--tags", spm_train_args.tags,
                            "reserved tag tokens like <oc>");
  spm_train_cmd->add_option("--out", spm_train_args.out)->required();

  std::string spm_enc_model, spm_enc_in = "-", spm_enc_out = "-";
  bool spm_enc_ids = false;
  auto* spm_enc_cmd = spm_cmd->add_subcommand("encode", "text to pieces/ids");
  spm_enc_cmd->add_option("--model", spm_enc_model)->required();
  spm_enc_cmd->add_option("--in", spm_enc_in);
  spm_enc_cmd->add_option("--out", spm_enc_out);
  spm_enc_cmd->add_flag("--ids", spm_enc_ids, "emit numeric ids");

  std::string spm_dec_model, spm_dec_in = "-", spm_dec_out = "-";
  auto* spm_dec_cmd = spm_cmd->add_subcommand("decode", "id lines to text");
  spm_dec_cmd->add_option("--model", spm_dec_model)->required();
  spm_dec_cmd->add_option("--in", spm_dec_in);
  spm_dec_cmd->add_option("--out", spm_dec_out);

  // decode -------------------------------------------------------------------
  DecodeArgs dec_args;
  auto* dec_cmd = app.add_subcommand("decode", "beam-search translation");
  dec_cmd->add_option("--model", dec_args.model, "checkpoint")->required();
  dec_cmd->add_option("--spm", dec_args.spm, "segmentation model")->required();
  dec_cmd->add_option("--in", dec_args.in, "source lines (default stdin)");
  dec_cmd->add_option("--out", dec_args.out, "hypotheses (default stdout)");
  dec_cmd->add_option("--nbest-out", dec_args.nbest_out, "n-best list file");
  dec_cmd->add_option("--tag", dec_args.tag, "target language tag to prepend");
  dec_cmd->add_option("--beam", dec_args.beam.beam_size);
  dec_cmd->add_option("--lenpen", dec_args.beam.lenpen,
                      "length-normalization exponent");
  dec_cmd->add_option("--nbest", dec_args.beam.nbest);
  dec_cmd->add_option("--max-len", dec_args.beam.max_len);

  // rescore --------------------------------------------------------------------
  RescoreArgs res_args;
  auto* res_cmd =
      app.add_subcommand("rescore", "re-rank n-best lists with a char model");
  res_cmd->add_option("--nbest", res_args.nbest)->required();
  res_cmd->add_option("--src", res_args.src, "source lines used for decoding")
      ->required();
  res_cmd->add_option("--model", res_args.model, "char model checkpoint")
      ->required();
  res_cmd->add_option("--spm", res_args.spm, "char segmentation model")
      ->required();
  res_cmd->add_option("--tag", res_args.tag, "target language tag to prepend");
  res_cmd->add_option("--lambda", res_args.lambda, "char score weight [0,1]");
  res_cmd->add_option("--lenpen", res_args.lenpen);
  res_cmd->add_option("--out", res_args.out, "rescored n-best file")
      ->required();
  res_cmd->add_option("--top-out", res_args.top_out, "top-1 text per segment");

  // gridsearch -------------------------------------------------------------------
  GridArgs grid_args;
  auto* grid_cmd =
      app.add_subcommand("gridsearch", "(beam, lenpen) sweep on a dev set");
  grid_cmd->add_option("--model", grid_args.model)->required();
  grid_cmd->add_option("--spm", grid_args.spm)->required();
  grid_cmd->add_option("--src", grid_args.src)->required();
  grid_cmd->add_option("--ref", grid_args.ref)->required();
  grid_cmd->add_option("--tag", grid_args.tag);
  grid_cmd->add_option("--beams", grid_args.beams)->required()->delimiter(',');
  grid_cmd->add_option("--lenpens", grid_args.lenpens)->required()->delimiter(',');
  grid_cmd->add_option("--max-len", grid_args.max_len);
  grid_cmd->add_flag("--strip-multitask", grid_args.strip_multitask);

  // evaluate ---------------------------------------------------------------------
  std::string eval_hyp, eval_ref;
  bool eval_strip = false;
  auto* eval_cmd = app.add_subcommand("evaluate", "BLEU/chrF2 against refs");
  eval_cmd->add_option("--hyp", eval_hyp)->required();
  eval_cmd->add_option("--ref", eval_ref)->required();
  eval_cmd->add_flag("--strip-multitask", eval_strip);

  // run / compare / report ----------------------------------------------------
  std::string run_config, run_dir_override;
  bool run_quiet = false;
  auto* run_cmd = app.add_subcommand("run", "run an experiment config");
  run_cmd->add_option("config", run_config, "experiment JSON")->required();
  run_cmd->add_option("--run-dir", run_dir_override,
                      "override the config's run_dir");
  run_cmd->add_flag("--quiet", run_quiet, "suppress progress output");

  std::vector<std::string> compare_dirs;
  auto* compare_cmd =
      app.add_subcommand("compare", "metric table for finished runs");
  compare_cmd->add_option("runs", compare_dirs, "run directories")->required();

  std::string report_dir, report_format = "md";
  auto* report_cmd = app.add_subcommand("report", "report for a finished run");
  report_cmd->add_option("run", report_dir, "run directory")->required();
  report_cmd->add_option("--format", report_format)
      ->check(CLI::IsMember({"md", "json"}));

  // fixtures -------------------------------------------------------------------
  fixtures::FixtureSpec fx;
  std::string fx_out;
  auto* fx_cmd =
      app.add_subcommand("fixtures", "generate the synthetic benchmark");
  fx_cmd->add_option("--out", fx_out, "output directory")->required();
  fx_cmd->add_option("--seed", fx.seed);
  fx_cmd->add_option("--train-a", fx.train_a);
  fx_cmd->add_option("--train-b", fx.train_b);
  fx_cmd->add_option("--bt-b", fx.bt_b);
  fx_cmd->add_option("--dev", fx.dev);
  fx_cmd->add_option("--test", fx.test);
  fx_cmd->add_option("--steps", fx.steps);
  fx_cmd->add_option("--batch-size", fx.batch_size);
  fx_cmd->add_option("--bpe-vocab", fx.bpe_vocab);

  CLI11_PARSE(app, argc, argv);

  try {
    if (tag_cmd->parsed()) cmd_corpus_tag(tag_args);
    if (concat_cmd->parsed())
      cmd_corpus_concat(concat_in, concat_seed, concat_out, concat_stem);
    if (balance_cmd->parsed())
      cmd_corpus_balance(balance_in, balance_seed, balance_out);
    if (mix_cmd->parsed()) cmd_corpus_mix_bt(mix_args);
    if (gv_cmd->parsed()) cmd_corpus_g2p(gv_in, gv_rules, true, gv_out, gv_stem);
    if (gh_cmd->parsed())
      cmd_corpus_g2p(gh_in, gh_rules, false, gh_out, gh_stem);
    if (strip_cmd->parsed()) cmd_corpus_strip(strip_in, strip_out);
    if (g2p_cmd->parsed()) cmd_g2p(g2p_rules, g2p_in, g2p_out);
    if (spm_train_cmd->parsed()) cmd_spm_train(spm_train_args);
    if (spm_enc_cmd->parsed())
      cmd_spm_encode(spm_enc_model, spm_enc_in, spm_enc_out, spm_enc_ids);
    if (spm_dec_cmd->parsed())
      cmd_spm_decode(spm_dec_model, spm_dec_in, spm_dec_out);
    if (dec_cmd->parsed()) cmd_decode(dec_args);
    if (res_cmd->parsed()) cmd_rescore(res_args);
    if (grid_cmd->parsed()) cmd_gridsearch(grid_args);
    if (eval_cmd->parsed()) cmd_evaluate(eval_hyp, eval_ref, eval_strip);
    if (run_cmd->parsed()) {
      const auto man = pipeline::run_experiment(run_config, run_dir_override,
                                                run_quiet);
      std::cout << "content_hash " << man.content_hash << "\n";
    }
    if (compare_cmd->parsed()) {
      std::vector<std::filesystem::path> dirs(compare_dirs.begin(),
                                              compare_dirs.end());
      std::cout << pipeline::render_comparison(pipeline::compare_runs(dirs));
    }
    if (report_cmd->parsed()) {
      const auto man = pipeline::load_manifest(report_dir);
      std::cout << pipeline::render_report(man, report_format);
    }
    if (fx_cmd->parsed()) {
      fx.out_dir = fx_out;
      const auto gen = fixtures::generate(fx);
      std::cout << "wrote " << gen.file_hashes.size() << " files under "
                << fx_out << "\n";
    }
  } catch (const pipeline::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const g2p::ParseError& e) {
    std::cerr << "rule error: " << e.what() << "\n";
    return 2;
  } catch (const model::InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
