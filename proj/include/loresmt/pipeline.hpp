#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "loresmt/decode.hpp"
#include "loresmt/subword.hpp"
#include "loresmt/train.hpp"
#include "loresmt/transformer.hpp"

namespace loresmt::pipeline {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One training bitext in an experiment config. Paths are as written in the
// config file; they are resolved against the config's directory at run time.
struct CorpusSpec {
  std::string name;
  std::string src;
  std::string tgt;
  std::string src_lang;
  std::string tgt_lang;

  // optional multi-task combination ("" | "vertical" | "horizontal")
  std::string g2p_combination;
  std::string g2p_rules;

  // optional back-translated data, tagged and mixed into the parallel pairs
  std::string bt_src;
  std::string bt_tgt;
  double bt_ratio = 0.0;
};

struct EvalSpec {
  std::string name;
  std::string src;  // untagged source lines
  std::string ref;  // plain references
  std::string tgt_lang;
  bool strip_multitask = false;
};

struct RescoreSpec {
  bool enabled = false;
  double lambda = 1.0;
  int nbest = 20;
  std::string model;  // checkpoint of the character-level rescoring model
  std::string spm;    // its segmentation model
};

struct ModelSpec {
  std::string preset = "base";
  nlohmann::json overrides;  // applied on top of the preset
  std::uint64_t seed = 1;
};

struct ExperimentConfig {
  std::string name;
  std::string run_dir;  // default, may be overridden on the command line
  bool balance = true;
  std::uint64_t shuffle_seed = 11;
  std::vector<CorpusSpec> corpora;
  subword::Mode spm_mode = subword::Mode::chars;
  int spm_vocab = 0;
  ModelSpec model;
  std::vector<train::StageConfig> stages;
  decode::BeamConfig beam;
  RescoreSpec rescore;
  std::vector<EvalSpec> evals;

  static ExperimentConfig parse(const nlohmann::json& j);
};

// Everything a finished run claims about itself. `content_hash` covers the
// config, input hashes, artifact hashes and metrics — not paths on this
// machine and not wall-clock anything — so two runs of the same config are
// byte-comparable by this one string.
struct RunManifest {
  std::string name;
  std::string config_hash;
  std::map<std::string, std::string> inputs;     // config path -> sha256
  std::map<std::string, std::string> artifacts;  // run-relative -> sha256
  nlohmann::json metrics;
  std::string content_hash;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

// Runs prepare -> segment -> train -> decode -> (rescore) -> evaluate,
// leaving artifacts and run.json under the run directory. `run_dir_override`
// replaces the config's run_dir; relative paths resolve against the config
// file's directory. Progress goes to stderr unless `quiet`.
RunManifest run_experiment(const std::filesystem::path& config_path,
                           const std::filesystem::path& run_dir_override = {},
                           bool quiet = false);

RunManifest load_manifest(const std::filesystem::path& run_dir);

// Side-by-side metric table for several finished runs.
nlohmann::json compare_runs(const std::vector<std::filesystem::path>& run_dirs);
std::string render_comparison(const nlohmann::json& rows);

// Single-run report, format "md" or "json".
std::string render_report(const RunManifest& m, const std::string& format);

}  // namespace loresmt::pipeline
