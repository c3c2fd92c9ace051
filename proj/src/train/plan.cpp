#include "twins/train/plan.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace twins {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

ConfigMap ConfigMap::parse_text(const std::string& text) {
  ConfigMap cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    Entry e;
    e.key = trim(line.substr(0, eq));
    e.value = trim(line.substr(eq + 1));
    e.line = lineno;
    if (e.key.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    for (const auto& prev : cfg.entries_)
      if (prev.key == e.key)
        throw ConfigError("line " + std::to_string(lineno) +
                          ": duplicate key '" + e.key + "'");
    cfg.entries_.push_back(std::move(e));
  }
  return cfg;
}

ConfigMap ConfigMap::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_text(ss.str());
}

const ConfigMap::Entry* ConfigMap::find(const std::string& key) const {
  for (const auto& e : entries_)
    if (e.key == key) {
      e.consumed = true;
      return &e;
    }
  return nullptr;
}

bool ConfigMap::has(const std::string& key) const {
  for (const auto& e : entries_)
    if (e.key == key) return true;
  return false;
}

int ConfigMap::line_of(const std::string& key) const {
  for (const auto& e : entries_)
    if (e.key == key) return e.line;
  return 0;
}

std::string ConfigMap::get_string(const std::string& key,
                                  const std::string& def) {
  const Entry* e = find(key);
  return e ? e->value : def;
}

int ConfigMap::get_int(const std::string& key, int def) {
  const Entry* e = find(key);
  if (!e) return def;
  try {
    size_t pos = 0;
    const int v = std::stoi(e->value, &pos);
    if (pos != e->value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("line " + std::to_string(e->line) + ": '" + key +
                      "' expects an integer, got '" + e->value + "'");
  }
}

float ConfigMap::get_float(const std::string& key, float def) {
  const Entry* e = find(key);
  if (!e) return def;
  try {
    size_t pos = 0;
    const float v = std::stof(e->value, &pos);
    if (pos != e->value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("line " + std::to_string(e->line) + ": '" + key +
                      "' expects a number, got '" + e->value + "'");
  }
}

bool ConfigMap::get_bool(const std::string& key, bool def) {
  const Entry* e = find(key);
  if (!e) return def;
  if (e->value == "true" || e->value == "1") return true;
  if (e->value == "false" || e->value == "0") return false;
  throw ConfigError("line " + std::to_string(e->line) + ": '" + key +
                    "' expects true/false, got '" + e->value + "'");
}

std::vector<int> ConfigMap::get_int_list(const std::string& key,
                                         const std::vector<int>& def) {
  const Entry* e = find(key);
  if (!e) return def;
  std::vector<int> out;
  std::istringstream is(e->value);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    tok = trim(tok);
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ConfigError("line " + std::to_string(e->line) + ": '" + key +
                        "' expects a comma-separated integer list");
    }
  }
  return out;
}

std::vector<std::string> ConfigMap::keys_with_prefix(
    const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& e : entries_)
    if (e.key.rfind(prefix, 0) == 0) out.push_back(e.key);
  return out;
}

void ConfigMap::reject_unknown() const {
  for (const auto& e : entries_)
    if (!e.consumed)
      throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" +
                        e.key + "'");
}

namespace {

CorrMode parse_mode_string(const std::string& s, int line) {
  if (s == "stereo") return CorrMode::kStereo;
  if (s == "flow") return CorrMode::kFlow;
  throw ConfigError("line " + std::to_string(line) +
                    ": mode must be stereo|flow, got '" + s + "'");
}

void read_model_train(ConfigMap& cfg, ModelConfig& m, TrainConfig& t) {
  m.mode = parse_mode_string(cfg.get_string("model.mode", "stereo"),
                             cfg.line_of("model.mode"));
  m.num_classes = cfg.get_int("model.num_classes", 5);
  m.context_infusion = cfg.get_bool("model.context_infusion", true);
  m.corr_source = cfg.get_string("model.corr_source", "stage");
  auto ch = cfg.get_int_list("backbone.channels", {48, 96, 192, 384});
  if (ch.size() != 4)
    throw ConfigError("backbone.channels expects 4 entries");
  std::copy(ch.begin(), ch.end(), m.backbone.channels.begin());
  m.backbone.gn_groups = cfg.get_int("backbone.groups", 8);
  m.backbone.use_norm = cfg.get_bool("backbone.norm", true);
  m.refine.lookup_radius = cfg.get_int("corr.radius", 4);
  m.refine.corr_levels = cfg.get_int("corr.levels", 3);
  m.refine.iters = cfg.get_int("refine.iters", 8);
  m.refine.hidden_width = cfg.get_int("refine.hidden_width", 96);
  m.refine.gamma = cfg.get_float("refine.gamma", 0.9f);
  const bool cta_enabled = cfg.get_bool("cta.enabled", true);
  const std::string cta_mode = cfg.get_string("cta.mode", "attention");
  m.cta.mode = cta_enabled ? parse_cta_mode(cta_mode) : CtaMode::kIdentity;
  m.cta.heads = cfg.get_int("cta.heads", 1);
  m.cta.eps = cfg.get_float("cta.eps", 1e-6f);
  m.cta.residual = cfg.get_bool("cta.residual", true);
  m.decoder.num_queries = cfg.get_int("decoder.num_queries", 0);
  m.decoder.dim = cfg.get_int("decoder.dim", 128);
  m.unc.hidden = cfg.get_int("unc.hidden", 64);
  m.unc.bins = cfg.get_int("unc.bins", 32);
  m.unc.lambda_kl = cfg.get_float("unc.lambda_kl", 0.1f);
  m.unc.logsig_clamp = cfg.get_float("unc.logsig_clamp", 6.0f);

  t.optim.lr = cfg.get_float("optim.lr", 1e-4f);
  t.optim.eps = cfg.get_float("optim.eps", 1e-8f);
  t.optim.weight_decay = cfg.get_float("optim.weight_decay", 1e-5f);
  t.optim.clip_norm = cfg.get_float("optim.clip", 1.0f);
  t.seg_weight = cfg.get_float("loss.seg_weight", 1.0f);
  t.corr_weight = cfg.get_float("loss.corr_weight", 1.0f);
  t.nll_weight = cfg.get_float("loss.nll_weight", 1.0f);
  t.alpha = cfg.get_float("semi.alpha", 0.75f);
  if (!(t.alpha > 0.5f && t.alpha < 1.0f)) {
    const int line = cfg.line_of("semi.alpha");
    throw ConfigError("line " + std::to_string(line) +
                      ": semi.alpha must lie in (0.5, 1), got " +
                      std::to_string(t.alpha));
  }
  t.ema_momentum = cfg.get_float("semi.ema_momentum", 0.999f);
  t.aug.enabled = cfg.get_bool("aug.enabled", true);
  t.aug.crop_h = cfg.get_int("aug.crop_h", 0);
  t.aug.crop_w = cfg.get_int("aug.crop_w", 0);
  t.aug.allow_flip = cfg.get_bool("aug.flip", true);
  t.aug.photometric = cfg.get_bool("aug.photometric", true);
}

}  // namespace

ExperimentPlan parse_plan(const std::string& text) {
  ConfigMap cfg = ConfigMap::parse_text(text);
  ExperimentPlan plan;
  read_model_train(cfg, plan.model, plan.train);
  plan.seed = uint64_t(cfg.get_int("seed", 0));
  plan.log_interval = cfg.get_int("log.interval", 10);
  plan.ckpt_interval = cfg.get_int("ckpt.interval", 0);
  plan.eval_limit = cfg.get_int("eval.limit", -1);
  plan.train_split = cfg.get_string("train.split", "train");
  plan.train_eval_split = cfg.get_string("train.eval_split", "");
  plan.train_steps = cfg.get_int("train.steps", 1000);

  // Phases in first-appearance order of their index prefix.
  std::vector<int> order;
  for (const auto& key : cfg.keys_with_prefix("phase")) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) continue;
    const std::string idx = key.substr(5, dot - 5);
    try {
      const int n = std::stoi(idx);
      if (std::find(order.begin(), order.end(), n) == order.end())
        order.push_back(n);
    } catch (const std::exception&) {
      throw ConfigError("line " + std::to_string(cfg.line_of(key)) +
                        ": malformed phase key '" + key + "'");
    }
  }
  for (int n : order) {
    const std::string p = "phase" + std::to_string(n) + ".";
    PhaseSpec ph;
    const std::string mode = cfg.get_string(p + "mode", "supervised");
    if (mode == "supervised") {
      ph.mode = PhaseSpec::Mode::kSupervised;
    } else if (mode == "semi") {
      ph.mode = PhaseSpec::Mode::kSemi;
    } else {
      throw ConfigError("line " + std::to_string(cfg.line_of(p + "mode")) +
                        ": phase mode must be supervised|semi");
    }
    ph.split = cfg.get_string(p + "split", "train");
    ph.steps = cfg.get_int(p + "steps", 0);
    if (ph.steps <= 0)
      throw ConfigError("phase" + std::to_string(n) +
                        ".steps must be positive");
    ph.eval_split = cfg.get_string(p + "eval_split", "");
    if (cfg.has(p + "lr")) ph.lr = cfg.get_float(p + "lr", 0.0f);
    if (cfg.has(p + "alpha")) {
      const float a = cfg.get_float(p + "alpha", 0.75f);
      if (!(a > 0.5f && a < 1.0f))
        throw ConfigError("line " + std::to_string(cfg.line_of(p + "alpha")) +
                          ": alpha must lie in (0.5, 1), got " +
                          std::to_string(a));
      ph.alpha = a;
    }
    plan.phases.push_back(std::move(ph));
  }
  // A semi phase needs a pre-trained teacher from an earlier phase.
  bool seen_supervised = false;
  for (size_t i = 0; i < plan.phases.size(); ++i) {
    if (plan.phases[i].mode == PhaseSpec::Mode::kSemi && !seen_supervised)
      throw ConfigError(
          "plan validation: a semi phase requires a preceding supervised "
          "phase (the teacher must exist)");
    if (plan.phases[i].mode == PhaseSpec::Mode::kSupervised)
      seen_supervised = true;
  }
  cfg.reject_unknown();
  return plan;
}

ExperimentPlan parse_plan_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_plan(ss.str());
}

namespace {

int64_t enc_f(float v) { return int64_t(std::bit_cast<uint32_t>(v)); }
float dec_f(int64_t v) { return std::bit_cast<float>(uint32_t(v)); }

}  // namespace

void embed_configs(CheckpointData& d, const ModelConfig& m,
                   const TrainConfig& t) {
  auto& mm = d.meta;
  mm["cfg.mode"] = m.mode == CorrMode::kStereo ? 0 : 1;
  mm["cfg.num_classes"] = m.num_classes;
  mm["cfg.context_infusion"] = m.context_infusion ? 1 : 0;
  mm["cfg.corr_source"] =
      m.corr_source == "stage" ? 0 : (m.corr_source == "early" ? 1 : 2);
  for (int i = 0; i < 4; ++i)
    mm["cfg.bb.ch" + std::to_string(i)] = m.backbone.channels[size_t(i)];
  mm["cfg.bb.groups"] = m.backbone.gn_groups;
  mm["cfg.bb.norm"] = m.backbone.use_norm ? 1 : 0;
  mm["cfg.refine.iters"] = m.refine.iters;
  mm["cfg.refine.hidden"] = m.refine.hidden_width;
  mm["cfg.refine.gamma"] = enc_f(m.refine.gamma);
  mm["cfg.refine.radius"] = m.refine.lookup_radius;
  mm["cfg.refine.levels"] = m.refine.corr_levels;
  mm["cfg.cta.mode"] = int(m.cta.mode);
  mm["cfg.cta.heads"] = m.cta.heads;
  mm["cfg.cta.eps"] = enc_f(m.cta.eps);
  mm["cfg.cta.residual"] = m.cta.residual ? 1 : 0;
  mm["cfg.dec.queries"] = m.decoder.num_queries;
  mm["cfg.dec.dim"] = m.decoder.dim;
  mm["cfg.unc.hidden"] = m.unc.hidden;
  mm["cfg.unc.bins"] = m.unc.bins;
  mm["cfg.unc.lambda"] = enc_f(m.unc.lambda_kl);
  mm["cfg.unc.clamp"] = enc_f(m.unc.logsig_clamp);
  mm["cfg.opt.lr"] = enc_f(t.optim.lr);
  mm["cfg.opt.eps"] = enc_f(t.optim.eps);
  mm["cfg.opt.wd"] = enc_f(t.optim.weight_decay);
  mm["cfg.opt.clip"] = enc_f(t.optim.clip_norm);
  mm["cfg.loss.seg"] = enc_f(t.seg_weight);
  mm["cfg.loss.corr"] = enc_f(t.corr_weight);
  mm["cfg.loss.nll"] = enc_f(t.nll_weight);
  mm["cfg.alpha"] = enc_f(t.alpha);
  mm["cfg.ema"] = enc_f(t.ema_momentum);
  mm["cfg.aug.enabled"] = t.aug.enabled ? 1 : 0;
  mm["cfg.aug.crop_h"] = t.aug.crop_h;
  mm["cfg.aug.crop_w"] = t.aug.crop_w;
  mm["cfg.aug.flip"] = t.aug.allow_flip ? 1 : 0;
  mm["cfg.aug.photo"] = t.aug.photometric ? 1 : 0;
}

std::pair<ModelConfig, TrainConfig> extract_configs(const CheckpointData& d) {
  auto req = [&](const std::string& key) {
    auto it = d.meta.find(key);
    if (it == d.meta.end())
      throw FormatError("checkpoint missing config entry " + key);
    return it->second;
  };
  ModelConfig m;
  TrainConfig t;
  m.mode = req("cfg.mode") == 0 ? CorrMode::kStereo : CorrMode::kFlow;
  m.num_classes = int(req("cfg.num_classes"));
  m.context_infusion = req("cfg.context_infusion") != 0;
  const int64_t cs = req("cfg.corr_source");
  m.corr_source = cs == 0 ? "stage" : (cs == 1 ? "early" : "late");
  for (int i = 0; i < 4; ++i)
    m.backbone.channels[size_t(i)] = int(req("cfg.bb.ch" + std::to_string(i)));
  m.backbone.gn_groups = int(req("cfg.bb.groups"));
  m.backbone.use_norm = req("cfg.bb.norm") != 0;
  m.refine.iters = int(req("cfg.refine.iters"));
  m.refine.hidden_width = int(req("cfg.refine.hidden"));
  m.refine.gamma = dec_f(req("cfg.refine.gamma"));
  m.refine.lookup_radius = int(req("cfg.refine.radius"));
  m.refine.corr_levels = int(req("cfg.refine.levels"));
  m.cta.mode = CtaMode(req("cfg.cta.mode"));
  m.cta.heads = int(req("cfg.cta.heads"));
  m.cta.eps = dec_f(req("cfg.cta.eps"));
  m.cta.residual = req("cfg.cta.residual") != 0;
  m.decoder.num_queries = int(req("cfg.dec.queries"));
  m.decoder.dim = int(req("cfg.dec.dim"));
  m.unc.hidden = int(req("cfg.unc.hidden"));
  m.unc.bins = int(req("cfg.unc.bins"));
  m.unc.lambda_kl = dec_f(req("cfg.unc.lambda"));
  m.unc.logsig_clamp = dec_f(req("cfg.unc.clamp"));
  t.optim.lr = dec_f(req("cfg.opt.lr"));
  t.optim.eps = dec_f(req("cfg.opt.eps"));
  t.optim.weight_decay = dec_f(req("cfg.opt.wd"));
  t.optim.clip_norm = dec_f(req("cfg.opt.clip"));
  t.seg_weight = dec_f(req("cfg.loss.seg"));
  t.corr_weight = dec_f(req("cfg.loss.corr"));
  t.nll_weight = dec_f(req("cfg.loss.nll"));
  t.alpha = dec_f(req("cfg.alpha"));
  t.ema_momentum = dec_f(req("cfg.ema"));
  t.aug.enabled = req("cfg.aug.enabled") != 0;
  t.aug.crop_h = int(req("cfg.aug.crop_h"));
  t.aug.crop_w = int(req("cfg.aug.crop_w"));
  t.aug.allow_flip = req("cfg.aug.flip") != 0;
  t.aug.photometric = req("cfg.aug.photo") != 0;
  return {m, t};
}

RunResult run_plan(const ExperimentPlan& plan, const std::string& data_root,
                   const std::string& out_dir, bool dry_run) {
  if (plan.phases.empty())
    throw ConfigError("plan has no phases");
  if (!fs::exists(data_root))
    throw IoError("data root not found: " + data_root);
  for (const auto& ph : plan.phases) {
    if (!fs::exists(data_root + "/" + ph.split))
      throw IoError("dataset split not found: " + data_root + "/" + ph.split);
    if (!ph.eval_split.empty() &&
        !fs::exists(data_root + "/" + ph.eval_split))
      throw IoError("eval split not found: " + data_root + "/" +
                    ph.eval_split);
  }

  Trainer trainer(plan.model, plan.train, plan.seed);
  RunResult result;
  if (dry_run) {
    std::cout << "dry run: " << plan.phases.size() << " phase(s), "
              << trainer.student().params().total_params()
              << " parameters per model, data root ok\n";
    return result;
  }
  fs::create_directories(out_dir);

  // Resume from the latest checkpoint when present.
  int64_t global_step = 0;
  const std::string latest = out_dir + "/ckpt_latest.twck";
  if (fs::exists(latest)) {
    auto data = load_checkpoint(latest);
    trainer.from_checkpoint(data);
    global_step = trainer.step_count();
    std::cout << "resumed from " << latest << " at step " << global_step
              << "\n";
  }

  // Map the global step onto (phase, step-in-phase).
  int64_t consumed = 0;
  std::map<std::string, ImageCollection> cache;
  for (size_t pi = 0; pi < plan.phases.size(); ++pi) {
    const PhaseSpec& ph = plan.phases[pi];
    const int64_t phase_start = consumed;
    consumed += ph.steps;
    if (global_step >= consumed) continue;  // phase already finished

    if (ph.lr) trainer.optimizer().config().lr = *ph.lr;
    if (ph.alpha) trainer.config().alpha = *ph.alpha;

    const std::string split_dir = data_root + "/" + ph.split;
    auto ids = list_collections(split_dir);
    if (ids.empty()) throw IoError("empty dataset split: " + split_dir);

    std::ofstream csv(out_dir + "/phase" + std::to_string(pi) + "_losses.csv",
                      global_step > phase_start ? std::ios::app
                                                : std::ios::trunc);
    if (global_step == phase_start) csv << "step,term,value\n";

    while (trainer.step_count() < consumed) {
      const int64_t step = trainer.step_count();
      Rng pick = Rng::derive(plan.seed, 0xDA7A, uint64_t(step));
      const auto& id = ids[size_t(pick.next_u64() % ids.size())];
      auto it = cache.find(split_dir + "/" + id);
      if (it == cache.end())
        it = cache
                 .emplace(split_dir + "/" + id,
                          read_collection(split_dir + "/" + id))
                 .first;
      LossReport report = ph.mode == PhaseSpec::Mode::kSupervised
                              ? trainer.supervised_step(it->second)
                              : trainer.semi_supervised_step(it->second);
      if (report.skipped) {
        // Zero-coverage batch: counted, not trained on.
        trainer.set_step_count(step + 1);
      }
      const int64_t done = trainer.step_count();
      if (plan.log_interval > 0 &&
          (done % plan.log_interval == 0 || done == consumed)) {
        csv << done << ",total," << report.total << "\n";
        csv << done << ",seg_ce," << report.seg_ce << "\n";
        csv << done << ",l1_seq," << report.l1_seq << "\n";
        csv << done << ",nll," << report.nll << "\n";
        csv << done << ",kl," << report.kl << "\n";
        if (report.coverage >= 0.0f)
          csv << done << ",coverage," << report.coverage << "\n";
      }
      if (plan.ckpt_interval > 0 && done % plan.ckpt_interval == 0 &&
          done < consumed) {
        auto data = trainer.to_checkpoint();
        embed_configs(data, plan.model, plan.train);
        save_checkpoint(latest, data);
      }
    }

    auto data = trainer.to_checkpoint();
    embed_configs(data, plan.model, plan.train);
    save_checkpoint(out_dir + "/ckpt_phase" + std::to_string(pi) + ".twck",
                    data);
    save_checkpoint(latest, data);

    MetricReport report;
    if (!ph.eval_split.empty()) {
      report = evaluate_split(trainer.student(),
                              data_root + "/" + ph.eval_split,
                              plan.eval_limit);
      std::ofstream rf(out_dir + "/phase" + std::to_string(pi) +
                       "_metrics.txt");
      rf << format_report(report);
    }
    result.phase_reports.push_back(report);
  }
  return result;
}

GenSpec parse_gen_spec(const std::string& path) {
  ConfigMap cfg = ConfigMap::parse_file(path);
  GenSpec g;
  g.scene.num_objects = cfg.get_int("scene.objects", 4);
  g.scene.depth_min = cfg.get_float("scene.depth_min", 1.0f);
  g.scene.depth_max = cfg.get_float("scene.depth_max", 4.0f);
  g.scene.height = cfg.get_int("scene.height", 96);
  g.scene.width = cfg.get_int("scene.width", 128);
  g.scene.num_classes = cfg.get_int("scene.classes", 5);
  g.scene.max_displacement = cfg.get_float("scene.max_disp", 24.0f);
  g.mode = parse_mode_string(cfg.get_string("mode", "stereo"),
                             cfg.line_of("mode"));
  g.split = cfg.get_string("split", "train");
  g.seed = uint64_t(cfg.get_int("seed", 1));
  g.with_correspondence = cfg.get_bool("with_correspondence", true);
  cfg.reject_unknown();
  return g;
}

}  // namespace twins
