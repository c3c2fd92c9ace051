#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "twins/train/plan.hpp"

namespace fs = std::filesystem;
using namespace twins;

namespace {

std::string pad_id(int n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", n);
  return buf;
}

int cmd_gen(const std::string& spec_path, int count, const std::string& out,
            int start_index) {
  GenSpec g = parse_gen_spec(spec_path);
  const std::string split_dir = out + "/" + g.split;
  fs::create_directories(split_dir);
  for (int i = 0; i < count; ++i) {
    SceneSpec s = g.scene;
    s.texture_seed = g.seed + uint64_t(start_index + i);
    auto c = generate_scene(s, g.mode);
    if (!g.with_correspondence) {
      c.gt_correspondence = Tensor();
      c.gt_validity = Tensor();
    }
    write_collection(c, split_dir + "/" + pad_id(start_index + i));
  }
  std::cout << "wrote " << count << " collections to " << split_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& out, const std::string& mode,
              const std::string& init_ckpt, bool dry_run) {
  ExperimentPlan plan = parse_plan_file(config_path);
  if (!mode.empty()) {
    // Single-phase run built from the top-level train.* keys.
    PhaseSpec ph;
    if (mode == "supervised") {
      ph.mode = PhaseSpec::Mode::kSupervised;
    } else if (mode == "semi") {
      ph.mode = PhaseSpec::Mode::kSemi;
      if (init_ckpt.empty() && plan.phases.empty())
        throw ConfigError(
            "semi mode needs --ckpt (a pre-trained teacher) or supervised "
            "phases in the config");
    } else {
      throw ConfigError("--mode must be supervised or semi");
    }
    ph.split = plan.train_split;
    ph.steps = plan.train_steps;
    ph.eval_split = plan.train_eval_split;
    plan.phases = {ph};
  }
  if (!init_ckpt.empty() && !dry_run) {
    // Seed the output directory so run_plan resumes from this state.
    fs::create_directories(out);
    auto data_in = load_checkpoint(init_ckpt);
    data_in.meta["step"] = 0;
    data_in.meta["adam_step"] = 0;
    embed_configs(data_in, plan.model, plan.train);
    save_checkpoint(out + "/ckpt_latest.twck", data_in);
  }
  auto result = run_plan(plan, data, out, dry_run);
  return result.exit_code;
}

int cmd_eval(const std::string& ckpt, const std::string& data,
             const std::string& split, int limit) {
  auto ckdata = load_checkpoint(ckpt);
  auto [mcfg, tcfg] = extract_configs(ckdata);
  Trainer trainer(mcfg, tcfg, 0);
  trainer.from_checkpoint(ckdata);
  auto report = evaluate_split(trainer.student(), data + "/" + split, limit);
  std::cout << format_report(report);
  return 0;
}

int cmd_pseudo(const std::string& ckpt, const std::string& data, float alpha,
               const std::string& split, std::string out) {
  auto ckdata = load_checkpoint(ckpt);
  auto [mcfg, tcfg] = extract_configs(ckdata);
  Trainer trainer(mcfg, tcfg, 0);
  trainer.from_checkpoint(ckdata);
  if (out.empty()) out = data + "/pseudo_" + split;
  fs::create_directories(out);
  const std::string split_dir = data + "/" + split;
  auto ids = list_collections(split_dir);
  std::ofstream coverage(out + "/coverage.txt");
  double mean_cov = 0.0;
  NoGradGuard off;
  for (const auto& id : ids) {
    auto c = read_collection(split_dir + "/" + id);
    auto tout = trainer.teacher().forward(c.target_image, c.source_image);
    if (!tout.sigma.defined())
      throw ConfigError("pseudo labels need a model trained with K >= 2");
    auto labels = make_pseudo_labels(tout.trace, tout.sigma, alpha);
    fs::create_directories(out + "/" + id);
    write_field_bin(out + "/" + id + "/corr.bin", labels.correspondences);
    write_field_bin(out + "/" + id + "/valid.bin", labels.validity);
    coverage << id << " coverage=" << labels.coverage
             << " threshold=" << labels.threshold_used << "\n";
    mean_cov += labels.coverage;
  }
  if (!ids.empty()) mean_cov /= double(ids.size());
  coverage << "mean_coverage=" << mean_cov << "\n";
  std::cout << "pseudo labels for " << ids.size() << " collections, mean "
            << "coverage " << mean_cov << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TwInS: two-stream joint scene parsing and correspondence"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset split");
  std::string gen_spec, gen_out;
  int gen_count = 10, gen_start = 0;
  gen->add_option("--spec", gen_spec, "scene spec file")->required();
  gen->add_option("--count", gen_count, "number of collections")->required();
  gen->add_option("--out", gen_out, "dataset root")->required();
  gen->add_option("--start-index", gen_start, "first collection id");

  auto* train = app.add_subcommand("train", "run a training plan");
  std::string tr_config, tr_data, tr_out, tr_mode, tr_ckpt;
  bool tr_dry = false;
  train->add_option("--config", tr_config, "plan config file")->required();
  train->add_option("--data", tr_data, "dataset root")->required();
  train->add_option("--out", tr_out, "output directory")->required();
  train->add_option("--mode", tr_mode,
                    "force a single phase: supervised|semi");
  train->add_option("--ckpt", tr_ckpt, "initial checkpoint (teacher source)");
  train->add_flag("--dry-run", tr_dry, "validate everything, train nothing");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string ev_ckpt, ev_data, ev_split = "val";
  int ev_limit = -1;
  eval->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  eval->add_option("--data", ev_data, "dataset root")->required();
  eval->add_option("--split", ev_split, "split name")->required();
  eval->add_option("--limit", ev_limit, "max collections");

  auto* pseudo = app.add_subcommand("pseudo", "emit uncertainty-filtered "
                                              "pseudo labels");
  std::string ps_ckpt, ps_data, ps_split = "train", ps_out;
  float ps_alpha = 0.75f;
  pseudo->add_option("--ckpt", ps_ckpt, "checkpoint file")->required();
  pseudo->add_option("--data", ps_data, "dataset root")->required();
  pseudo->add_option("--alpha", ps_alpha, "confidence percentile")->required();
  pseudo->add_option("--split", ps_split, "split name");
  pseudo->add_option("--out", ps_out, "output directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_gen(gen_spec, gen_count, gen_out, gen_start);
    if (train->parsed())
      return cmd_train(tr_config, tr_data, tr_out, tr_mode, tr_ckpt, tr_dry);
    if (eval->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_split, ev_limit);
    if (pseudo->parsed())
      return cmd_pseudo(ps_ckpt, ps_data, ps_alpha, ps_split, ps_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
