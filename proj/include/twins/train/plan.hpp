#pragma once

#include <optional>
#include <string>
#include <vector>

#include "twins/train/trainer.hpp"

namespace twins {

// Flat key = value config text, '#' comments. Unknown keys are rejected with
// their line number once the consumer has pulled everything it understands.
class ConfigMap {
 public:
  static ConfigMap parse_text(const std::string& text);
  static ConfigMap parse_file(const std::string& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& def);
  int get_int(const std::string& key, int def);
  float get_float(const std::string& key, float def);
  bool get_bool(const std::string& key, bool def);
  std::vector<int> get_int_list(const std::string& key,
                                const std::vector<int>& def);
  // Keys with this prefix, in file order (consumed by the caller).
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

  // Throws ConfigError naming the first unconsumed key and its line.
  void reject_unknown() const;
  int line_of(const std::string& key) const;

 private:
  struct Entry {
    std::string key, value;
    int line = 0;
    mutable bool consumed = false;
  };
  const Entry* find(const std::string& key) const;
  std::vector<Entry> entries_;
};

struct PhaseSpec {
  enum class Mode { kSupervised, kSemi };
  Mode mode = Mode::kSupervised;
  std::string split = "train";
  int steps = 0;
  std::string eval_split;          // empty: skip phase-end evaluation
  std::optional<float> lr;         // phase overrides
  std::optional<float> alpha;
};

struct ExperimentPlan {
  ModelConfig model;
  TrainConfig train;
  uint64_t seed = 0;
  std::vector<PhaseSpec> phases;
  int log_interval = 10;
  int ckpt_interval = 0;  // 0: checkpoint at phase boundaries only
  int eval_limit = -1;
  // Defaults used when the CLI forces a single phase via --mode.
  std::string train_split = "train";
  std::string train_eval_split;
  int train_steps = 1000;
};

// Parses and validates a plan: >= 1 phase when phases are declared, semi
// phases must follow a supervised phase, alpha in (0.5, 1).
ExperimentPlan parse_plan(const std::string& text);
ExperimentPlan parse_plan_file(const std::string& path);

// Model/train configuration embedded in checkpoints so eval/pseudo can
// rebuild the network without the original config file.
void embed_configs(CheckpointData& data, const ModelConfig& m,
                   const TrainConfig& t);
std::pair<ModelConfig, TrainConfig> extract_configs(const CheckpointData& data);

struct RunResult {
  int exit_code = 0;
  std::vector<MetricReport> phase_reports;
};

// Executes phases sequentially with per-phase checkpoints, CSV loss logs
// (step,term,value) and metric reports under out_dir. Resumes from
// out_dir/ckpt_latest.twck when present.
RunResult run_plan(const ExperimentPlan& plan, const std::string& data_root,
                   const std::string& out_dir, bool dry_run = false);

// Scene generation config for the dataset CLI.
struct GenSpec {
  SceneSpec scene;
  CorrMode mode = CorrMode::kStereo;
  std::string split = "train";
  uint64_t seed = 1;
  bool with_correspondence = true;  // off: segmentation-only split
};
GenSpec parse_gen_spec(const std::string& path);

}  // namespace twins
