// Copyright 2026 The MTSCI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: synth, simulate, train, impute, baseline, evaluate.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtsci/checkpoint.hpp"
#include "mtsci/common.hpp"
#include "mtsci/config.hpp"
#include "mtsci/dataset.hpp"
#include "mtsci/denoiser.hpp"
#include "mtsci/pipeline.hpp"
#include "mtsci/reports.hpp"
#include "mtsci/sampler.hpp"
#include "mtsci/synthetic.hpp"
#include "mtsci/training.hpp"

namespace fs = std::filesystem;
using namespace mtsci;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitDivergence = 2;
constexpr int kExitCheckpoint = 3;
constexpr int kExitJoin = 4;

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::string masks;
  int workers = 0;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config, "Config file (key = value lines)");
  cmd->add_option("--set", o.sets, "Override a config key, key=value (repeatable)");
  cmd->add_option("-o,--out", o.out, "Output directory (default: output.dir)");
  cmd->add_option("--masks", o.masks, "Directory of frozen mask sidecars (default: <out>/masks)");
  cmd->add_option("--workers", o.workers, "Worker threads for imputation");
  cmd->add_flag("--deterministic", o.deterministic, "Force single-threaded numeric paths");
}

RunConfig load_config(const CommonOptions& o) {
  RunConfig cfg;
  if (!o.config.empty()) cfg.merge_file(o.config);
  for (const auto& s : o.sets) cfg.set_assignment(s);
  if (!o.out.empty()) cfg.set("output.dir", o.out);
  if (o.workers > 0) cfg.set("run.workers", std::to_string(o.workers));
  if (o.deterministic) cfg.set("run.deterministic", "true");
  return cfg;
}

std::string out_dir(const RunConfig& cfg) {
  const std::string dir = cfg.get_string("output.dir");
  fs::create_directories(dir);
  return dir;
}

std::string masks_dir(const CommonOptions& o, const RunConfig& cfg) {
  return o.masks.empty() ? cfg.get_string("output.dir") + "/masks" : o.masks;
}

int workers(const RunConfig& cfg) {
  return cfg.get_bool("run.deterministic") ? 1 : static_cast<int>(std::max(1L, cfg.get_int("run.workers")));
}

void echo_config(const RunConfig& cfg, const std::string& dir, const std::string& command) {
  std::ofstream(dir + "/" + command + ".config.txt") << cfg.serialize();
}

SeriesTable load_dataset(const RunConfig& cfg) {
  const std::string& path = cfg.get_string("dataset.path");
  if (path.empty()) throw ConfigError("dataset.path is not set");
  return load_series(path, cfg.load_options());
}

/// Data with evaluation masks: frozen sidecars when present, otherwise the
/// same deterministic simulation `simulate` would have written.
DataBundle load_bundle(const RunConfig& cfg, const std::string& mask_dir) {
  const SeriesTable series = load_dataset(cfg);
  const MissingPattern pattern = cfg.missing_pattern();
  const std::uint64_t seed = cfg.seed("missing.seed");
  DataBundle b = prepare_data(series, cfg.split_spec(), static_cast<int>(cfg.get_int("dataset.window")),
                              pattern, seed);
  for (const auto& split : split_names()) {
    const fs::path p = fs::path(mask_dir) / mask_sidecar_name(split, to_string(pattern.kind), seed);
    if (!fs::exists(p)) continue;
    std::ifstream in(p);
    apply_frozen_masks(b.split(split), read_mask_sidecar(in, static_cast<int>(cfg.get_int("dataset.window"))));
  }
  return b;
}

Checkpoint load_checked(const std::string& path, const RunConfig& cfg, int features) {
  Checkpoint ck = Checkpoint::load(path);
  const DiffusionSchedule sched = cfg.schedule();
  ck.check_compatible(cfg.denoiser(features), sched.steps(), cfg.get_double("diffusion.beta_1"),
                      cfg.get_double("diffusion.beta_K"), parse_schedule_shape(cfg.get_string("diffusion.shape")),
                      parse_objective(cfg.get_string("train.objective")));
  return ck;
}

// ---------------------------------------------------------------------------

struct SynthOptions {
  std::string out = "synthetic.csv";
  SyntheticSpec spec;
};

int cmd_synth(const SynthOptions& o) {
  const SeriesTable t = generate_synthetic(o.spec);
  std::ofstream out(o.out);
  if (!out) throw Error("cannot write '" + o.out + "'");
  write_series(out, t);
  std::cout << "wrote " << t.num_steps() << " steps x " << t.num_features() << " features to " << o.out << '\n';
  return kExitOk;
}

struct SimulateOptions {
  CommonOptions common;
  std::string pattern;
  long seed = -1;
  bool force = false;
};

int cmd_simulate(const SimulateOptions& o) {
  RunConfig cfg = load_config(o.common);
  if (!o.pattern.empty()) cfg.set("missing.pattern", o.pattern);
  if (o.seed >= 0) cfg.set("missing.seed", std::to_string(o.seed));
  const MissingPattern pattern = cfg.missing_pattern();
  const std::uint64_t seed = cfg.seed("missing.seed");
  const SeriesTable series = load_dataset(cfg);
  const DataBundle b = prepare_data(series, cfg.split_spec(), static_cast<int>(cfg.get_int("dataset.window")),
                                    pattern, seed);
  const std::string dir = out_dir(cfg);
  const fs::path mdir = masks_dir(o.common, cfg);
  fs::create_directories(mdir);
  std::vector<fs::path> paths;
  for (const auto& split : split_names()) {
    paths.push_back(mdir / mask_sidecar_name(split, to_string(pattern.kind), seed));
    if (fs::exists(paths.back()) && !o.force)
      throw ConfigError("refusing to overwrite " + paths.back().string() + " (pass --force)");
  }
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const auto& windows = b.split(split_names()[i]);
    std::ofstream out(paths[i]);
    write_mask_sidecar(out, windows, b.feature_names);
    long held = 0, observed = 0;
    for (const auto& w : windows) {
      held += w.eval_mask.count();
      observed += w.obs_mask.count();
    }
    std::cout << split_names()[i] << ": " << windows.size() << " windows, " << held << " of " << observed
              << " observed cells held out (" << (observed ? 100.0 * held / observed : 0.0) << "%) -> "
              << paths[i].string() << '\n';
  }
  echo_config(cfg, dir, "simulate");
  return kExitOk;
}

struct TrainOptions {
  CommonOptions common;
  std::string ablation;
  int epochs = -1;
  std::string resume;
  long seed = -1;
};

int cmd_train(const TrainOptions& o) {
  RunConfig cfg = load_config(o.common);
  if (!o.ablation.empty()) cfg.apply_ablation(o.ablation);
  if (o.epochs >= 0) cfg.set("train.epochs", std::to_string(o.epochs));
  if (o.seed >= 0) cfg.set("train.seed", std::to_string(o.seed));
  const DataBundle data = load_bundle(cfg, masks_dir(o.common, cfg));
  const int features = static_cast<int>(data.feature_names.size());
  const DenoiserConfig mcfg = cfg.denoiser(features);
  const DiffusionSchedule sched = cfg.schedule();
  const TrainConfig tcfg = cfg.train_config();
  const std::string dir = out_dir(cfg);
  echo_config(cfg, dir, "train");

  Denoiser<float> model(mcfg, tcfg.seed);
  std::optional<ResumeState> resume;
  if (!o.resume.empty()) {
    Checkpoint ck = load_checked(o.resume, cfg, features);
    if (!ck.resume) throw CheckpointMismatch("checkpoint '" + o.resume + "' carries no resume state");
    model.load_parameters(ck.resume->last_params);
    resume = *ck.resume;
  }

  const std::string log_path = dir + "/train_log.csv";
  const bool append = resume && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!append) log << "epoch,train_loss,denoise_loss,contrastive_loss,val_loss\n";
  log << std::setprecision(10);
  auto on_epoch = [&](const EpochRecord& r) {
    log << r.epoch << ',' << r.train_loss << ',' << r.denoise_loss << ',' << r.contrastive_loss << ','
        << r.val_loss << '\n';
    log.flush();
    std::cerr << "epoch " << r.epoch << "  train " << r.train_loss << "  val " << r.val_loss << '\n';
  };
  const TrainResult result = train_denoiser(model, data, sched, tcfg, resume ? &*resume : nullptr, on_epoch);

  Checkpoint ck;
  ck.model = mcfg;
  ck.steps = sched.steps();
  ck.beta_1 = cfg.get_double("diffusion.beta_1");
  ck.beta_K = cfg.get_double("diffusion.beta_K");
  ck.shape = parse_schedule_shape(cfg.get_string("diffusion.shape"));
  ck.objective = tcfg.objective;
  ck.norm = data.norm;
  ck.feature_names = data.feature_names;
  ck.params = result.state.best_params;
  ck.resume = result.state;
  ck.meta = {{"ablation", cfg.ablation_name()}, {"config", cfg.serialize()}};
  ck.save(dir + "/model.ckpt");
  std::cout << "trained " << result.history.size() << " epochs (best epoch " << result.state.best_epoch
            << ", val " << result.state.best_val << ")" << (result.stopped_early ? ", stopped early" : "")
            << "; checkpoint " << dir << "/model.ckpt\n";
  return kExitOk;
}

struct ImputeOptions {
  CommonOptions common;
  std::string checkpoint;
  int samples = 0;
  long seed = -1;
};

int cmd_impute(const ImputeOptions& o) {
  RunConfig cfg = load_config(o.common);
  if (o.samples > 0) cfg.set("infer.samples", std::to_string(o.samples));
  if (o.seed >= 0) cfg.set("infer.seed", std::to_string(o.seed));
  const DataBundle data = load_bundle(cfg, masks_dir(o.common, cfg));
  const int features = static_cast<int>(data.feature_names.size());
  const std::string dir = out_dir(cfg);
  const std::string ck_path = o.checkpoint.empty() ? dir + "/model.ckpt" : o.checkpoint;
  const Checkpoint ck = load_checked(ck_path, cfg, features);
  if (ck.feature_names != data.feature_names)
    throw CheckpointMismatch("checkpoint features differ from the dataset columns");
  echo_config(cfg, dir, "impute");

  Denoiser<float> model(ck.model, 0);
  model.load_parameters(ck.params);
  const int samples = static_cast<int>(cfg.get_int("infer.samples"));
  const auto results = impute_dataset(make_queries(data.test, ck.norm), model, ck.schedule(), ck.norm, samples,
                                      cfg.seed("infer.seed"), workers(cfg), ck.objective);
  {
    std::ofstream out(dir + "/imputations.csv");
    write_imputations(out, data.test, results, data.feature_names,
                      std::vector<double>(kCsvQuantiles.begin(), kCsvQuantiles.end()));
  }
  {
    std::ofstream out(dir + "/imputations.quantiles.csv");
    write_imputations(out, data.test, results, data.feature_names, default_quantile_levels(), false);
  }
  std::cout << "imputed " << results.size() << " windows with " << samples << " samples -> " << dir
            << "/imputations.csv\n";
  return kExitOk;
}

struct BaselineOptions {
  CommonOptions common;
  std::string method = "mean";
};

int cmd_baseline(const BaselineOptions& o) {
  const RunConfig cfg = load_config(o.common);
  const BaselineKind kind = parse_baseline(o.method);
  const DataBundle data = load_bundle(cfg, masks_dir(o.common, cfg));
  const std::string dir = out_dir(cfg);
  echo_config(cfg, dir, "baseline");
  const auto est = run_baseline(kind, make_queries(data.test, data.norm), data.norm);
  std::vector<ImputationResult> results(est.size());
  for (std::size_t i = 0; i < est.size(); ++i) {
    results[i].point_estimate = est[i];
    results[i].samples = {est[i]};
  }
  const std::string path = dir + "/baseline_" + o.method + ".csv";
  std::ofstream out(path);
  write_imputations(out, data.test, results, data.feature_names,
                    std::vector<double>(kCsvQuantiles.begin(), kCsvQuantiles.end()));
  std::cout << o.method << " baseline -> " << path << '\n';
  return kExitOk;
}

struct EvaluateOptions {
  CommonOptions common;
  std::string predictions;
  std::string quantiles;
  std::string model;
};

int cmd_evaluate(const EvaluateOptions& o) {
  const RunConfig cfg = load_config(o.common);
  const DataBundle data = load_bundle(cfg, masks_dir(o.common, cfg));
  const std::string dir = out_dir(cfg);
  const std::string pred = o.predictions.empty() ? dir + "/imputations.csv" : o.predictions;
  std::ifstream in(pred);
  if (!in) throw ConfigError("cannot open predictions '" + pred + "'");
  std::vector<double> levels;
  const auto rows = read_imputations(in, &levels);

  std::string qpath = o.quantiles;
  if (qpath.empty()) {
    fs::path p(pred);
    p.replace_extension(".quantiles.csv");
    if (fs::exists(p)) qpath = p.string();
  }
  std::optional<std::map<CellKey, ImputationRow>> qrows;
  std::vector<double> qlevels;
  if (!qpath.empty()) {
    std::ifstream qin(qpath);
    if (!qin) throw ConfigError("cannot open quantiles '" + qpath + "'");
    qrows = read_imputations(qin, &qlevels);
  }
  const ScoreReport rep = evaluate_predictions(data.test, data.feature_names, rows, levels,
                                               qrows ? &*qrows : nullptr, qlevels,
                                               cfg.get_double("metrics.mape_floor"));
  const ReportKey key{cfg.get_string("dataset.name"), cfg.get_string("missing.pattern"),
                      o.model.empty() ? cfg.ablation_name() : o.model, cfg.seed("missing.seed")};
  echo_config(cfg, dir, "evaluate");
  update_reports(dir, key, rep);
  std::cout << report_to_json(key, rep).dump() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional diffusion imputation for multivariate time series"};
  app.require_subcommand(1);

  SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic sinusoid-mixture series as CSV");
  c_synth->add_option("-o,--out", synth.out, "Output CSV path");
  c_synth->add_option("--steps", synth.spec.steps, "Number of time steps");
  c_synth->add_option("--features", synth.spec.features, "Number of features");
  c_synth->add_option("--latents", synth.spec.latents, "Number of latent sinusoids");
  c_synth->add_option("--noise", synth.spec.noise, "Observation noise std");
  c_synth->add_option("--seed", synth.spec.seed, "Generator seed");

  SimulateOptions sim;
  auto* c_sim = app.add_subcommand("simulate", "Freeze evaluation masks for every split");
  add_common(c_sim, sim.common);
  c_sim->add_option("--pattern", sim.pattern, "point or block");
  c_sim->add_option("--seed", sim.seed, "Mask seed (missing.seed)");
  c_sim->add_flag("--force", sim.force, "Overwrite existing sidecars");

  TrainOptions train;
  auto* c_train = app.add_subcommand("train", "Train a denoiser and write a checkpoint");
  add_common(c_train, train.common);
  c_train->add_option("--ablation", train.ablation, "none, wo_intra, wo_inter or wo_cons");
  c_train->add_option("--epochs", train.epochs, "Epochs to run (added to a resumed run)");
  c_train->add_option("--resume", train.resume, "Checkpoint to continue from");
  c_train->add_option("--seed", train.seed, "Training seed (train.seed)");

  ImputeOptions imp;
  auto* c_imp = app.add_subcommand("impute", "Impute the test split from a checkpoint");
  add_common(c_imp, imp.common);
  c_imp->add_option("--checkpoint", imp.checkpoint, "Checkpoint path (default: <out>/model.ckpt)");
  c_imp->add_option("--samples", imp.samples, "Samples per window (infer.samples)");
  c_imp->add_option("--seed", imp.seed, "Sampling seed (infer.seed)");

  BaselineOptions base;
  auto* c_base = app.add_subcommand("baseline", "Write mean or linear-interpolation imputations");
  add_common(c_base, base.common);
  c_base->add_option("--method", base.method, "mean or linear");

  EvaluateOptions eval;
  auto* c_eval = app.add_subcommand("evaluate", "Score an imputation CSV against held-out truth");
  add_common(c_eval, eval.common);
  c_eval->add_option("--predictions", eval.predictions, "Imputation CSV (default: <out>/imputations.csv)");
  c_eval->add_option("--quantiles", eval.quantiles, "Quantile CSV used for CRPS");
  c_eval->add_option("--model", eval.model, "Model label in the report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth);
    if (c_sim->parsed()) return cmd_simulate(sim);
    if (c_train->parsed()) return cmd_train(train);
    if (c_imp->parsed()) return cmd_impute(imp);
    if (c_base->parsed()) return cmd_baseline(base);
    if (c_eval->parsed()) return cmd_evaluate(eval);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const CheckpointMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckpoint;
  } catch (const JoinError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitJoin;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
