#include "tscn/cli.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>

#include <CLI11.hpp>

#include "tscn/checkpoint.hpp"
#include "tscn/config.hpp"
#include "tscn/errors.hpp"
#include "tscn/eval.hpp"
#include "tscn/grad.hpp"
#include "tscn/localize.hpp"
#include "tscn/rng.hpp"

namespace tscn {

namespace fs = std::filesystem;

namespace {

// Flag values live in their own RunConfig so --help can show defaults; after
// parsing, only flags that were actually given overwrite the resolved config.
class Flags {
 public:
  Flags() = default;
  Flags(const Flags&) = delete;
  Flags& operator=(const Flags&) = delete;

  template <typename Get>
  void add(CLI::App* app, const std::string& name, Get get, const std::string& desc) {
    CLI::Option* opt = app->add_option(name, get(storage_), desc)->capture_default_str();
    apply_.push_back([opt, get, this](RunConfig& dst) {
      if (opt->count() > 0) get(dst) = get(storage_);
    });
  }

  void apply(RunConfig& dst) const {
    for (const auto& f : apply_) f(dst);
  }

 private:
  RunConfig storage_;
  std::vector<std::function<void(RunConfig&)>> apply_;
};

#define TSCN_FIELD(expr) [](RunConfig& c) -> auto& { return c.expr; }

void add_common_flags(CLI::App* app, Flags& flags, std::string& config_path) {
  app->add_option("--config", config_path, "JSON run configuration; flags override it");
  flags.add(app, "--seed", TSCN_FIELD(seed), "Seed for every random choice");
  flags.add(app, "--workers", TSCN_FIELD(workers), "Threads for per-video work (output is identical for any value)");
}

void add_synth_flags(CLI::App* app, Flags& flags) {
  flags.add(app, "--num-train", TSCN_FIELD(synth.num_train), "Synthetic training videos");
  flags.add(app, "--num-val", TSCN_FIELD(synth.num_val), "Synthetic validation videos");
  flags.add(app, "--classes", TSCN_FIELD(synth.num_classes), "Number of action classes");
  flags.add(app, "--feature-dim", TSCN_FIELD(synth.feature_dim), "Feature channels per modality");
  flags.add(app, "--snippet-seconds", TSCN_FIELD(synth.snippet_seconds), "Seconds covered by one snippet");
  flags.add(app, "--noise-sigma", TSCN_FIELD(synth.background_noise_sigma), "Feature noise standard deviation");
  flags.add(app, "--class-separation", TSCN_FIELD(synth.class_separation), "Minimum distance between class means");
}

void add_train_flags(CLI::App* app, Flags& flags) {
  flags.add(app, "--epochs", TSCN_FIELD(train.epochs_per_iteration), "Epochs per refinement iteration");
  flags.add(app, "--iterations", TSCN_FIELD(train.refinement_iterations), "Refinement iterations, including iteration 0");
  flags.add(app, "--lr", TSCN_FIELD(train.adamw.lr), "AdamW learning rate (fixed)");
  flags.add(app, "--weight-decay", TSCN_FIELD(train.adamw.weight_decay), "AdamW decoupled weight decay");
  flags.add(app, "--lambda1", TSCN_FIELD(train.loss_weights.lambda1), "Smooth loss weight");
  flags.add(app, "--lambda2", TSCN_FIELD(train.loss_weights.lambda2), "Attention normalization loss weight");
  flags.add(app, "--lambda3", TSCN_FIELD(train.loss_weights.lambda3), "Distinctness loss weight");
  flags.add(app, "--lambda4", TSCN_FIELD(train.loss_weights.lambda4), "Guide loss weight");
  flags.add(app, "--lambda5", TSCN_FIELD(train.loss_weights.lambda5), "Pseudo ground truth loss weight");
  flags.add(app, "--k", TSCN_FIELD(train.loss_weights.k), "Normalization window divisor, l = max(1, T / k)");
  flags.add(app, "--m", TSCN_FIELD(train.loss_weights.m), "Distinctness cosine margin");
  flags.add(app, "--fusion-beta", TSCN_FIELD(train.fusion.beta), "RGB weight when fusing attention for pseudo labels");
  flags.add(app, "--theta", TSCN_FIELD(train.fusion.theta), "Pseudo ground truth threshold");
  flags.add(app, "--ema-weight", TSCN_FIELD(train.ema_weight), "Successive weight of the EMA ensemble");
  flags.add(app, "--embed-dim", TSCN_FIELD(train.embed_dim), "Embedding width E (0 means E = D)");
}

void add_localize_flags(CLI::App* app, Flags& flags) {
  flags.add(app, "--beta", TSCN_FIELD(localize.beta), "RGB weight for test-time fusion");
  flags.add(app, "--upsample", TSCN_FIELD(localize.upsample_factor), "Linear upsampling factor");
  flags.add(app, "--top-k", TSCN_FIELD(localize.top_k_classes), "Classes localized per video");
  flags.add(app, "--threshold-step", TSCN_FIELD(localize.threshold_step), "Attention threshold sweep step");
  flags.add(app, "--nms-iou", TSCN_FIELD(localize.nms_iou), "NMS IoU threshold");
}

void add_path_flag(CLI::App* app, Flags& flags, const std::string& name, std::string PathConfig::*member,
                   const std::string& desc) {
  flags.add(app, name, [member](RunConfig& c) -> std::string& { return c.paths.*member; }, desc);
}

const std::string& require_path(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ValidationError("missing required " + flag);
  return value;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

LabelMap label_map(const RunConfig& cfg) {
  return cfg.paths.label_map.empty() ? LabelMap{} : LabelMap::load(cfg.paths.label_map);
}

std::vector<std::string> video_ids(const Dataset& ds) {
  std::vector<std::string> ids;
  for (const auto& v : ds.videos) ids.push_back(v.meta.id);
  return ids;
}

void gen_data(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
  const SyntheticData data = generate_synthetic(cfg.synth);
  save_dataset(data.train, out_dir / "train");
  save_dataset(data.val, out_dir / "val");
  out << "wrote " << data.train.videos.size() << " train and " << data.val.videos.size() << " val videos to "
      << out_dir.string() << "\n";
}

struct TrainOutcome {
  std::vector<Checkpoint> iterations;
  Checkpoint final_model;
};

TrainOutcome train(const RunConfig& cfg, const Dataset& ds, const fs::path& out_dir, std::ostream& out) {
  make_dir(out_dir);
  std::vector<TrainLogEntry> log;
  const Checkpoint base = train_base(ds, cfg.train, &log);
  TrainOutcome res;
  res.iterations = refine_loop(ds, base, cfg.train, &log);
  for (const auto& ck : res.iterations) save_checkpoint(ck, out_dir / checkpoint_filename(ck));
  if (res.iterations.size() > 1) {
    res.final_model = ema_ensemble(res.iterations, cfg.train.ema_weight);
    save_checkpoint(res.final_model, out_dir / checkpoint_filename(res.final_model));
  } else {
    res.final_model = res.iterations.front();
  }

  std::string lines;
  for (const auto& e : log) lines += to_json_line(e) + "\n";
  write_text(out_dir / "train_log.jsonl", lines);
  write_text(out_dir / "config.json", run_config_to_json(cfg));

  // Mean classification loss over each iteration's last epoch.
  std::map<std::pair<int, Stream>, std::pair<double, int>> last;
  for (const auto& e : log) {
    if (e.epoch + 1 != cfg.train.epochs_per_iteration) continue;
    auto& acc = last[{e.iteration, e.stream}];
    acc.first += e.loss.cls;
    ++acc.second;
  }
  for (const auto& ck : res.iterations) {
    out << "iteration " << ck.refinement_iteration << ": saved " << checkpoint_filename(ck);
    for (Stream s : {Stream::Rgb, Stream::Flow}) {
      const auto it = last.find({ck.refinement_iteration, s});
      if (it != last.end()) {
        out << ", " << to_string(s) << " L_cls " << std::fixed << std::setprecision(4)
            << it->second.first / it->second.second << std::defaultfloat;
      }
    }
    out << "\n";
  }
  if (res.iterations.size() > 1) out << "ensemble: saved " << checkpoint_filename(res.final_model) << "\n";
  return res;
}

int run_grad_check(int T, int D, int E, int C, const std::string& mode_name, double h, double tol, int instances,
                   std::uint64_t seed, std::ostream& out) {
  if (T < 1 || D < 1 || E < 1 || C < 1 || instances < 1) throw ValidationError("grad-check sizes must be positive");
  std::vector<LossMode> modes;
  if (mode_name == "base" || mode_name == "both") modes.push_back(LossMode::Base);
  if (mode_name == "refine" || mode_name == "both") modes.push_back(LossMode::Refine);
  if (modes.empty()) throw ValidationError("--mode must be base, refine or both");
  const LossWeights w;
  double worst = 0.0;
  int crossings = 0;
  for (int i = 0; i < instances; ++i) {
    for (LossMode mode : modes) {
      const auto inst = random_grad_instance(derive_seed(seed, static_cast<std::uint64_t>(i)), {D, E, C}, T, mode, w,
                                             10.0 * h);
      const Eigen::VectorXd* g = inst.pseudo_gt ? &*inst.pseudo_gt : nullptr;
      const auto rep = grad_check(inst.params, inst.features, inst.labels, w, g, mode, h);
      out << "instance " << i << " " << (mode == LossMode::Base ? "base" : "refine") << ": max_rel_error "
          << std::scientific << std::setprecision(3) << rep.max_rel_error << " (coordinate " << rep.worst_index
          << ", analytic " << rep.analytic_at_worst << ", numeric " << rep.numeric_at_worst << "), kink_margin "
          << rep.kink_margin << std::defaultfloat << ", kink_crossings " << rep.kink_crossings << ", resamples "
          << inst.resamples << "\n";
      worst = std::max(worst, rep.max_rel_error);
      crossings += rep.kink_crossings;
    }
  }
  out << "max relative error " << std::scientific << std::setprecision(3) << worst << " (tolerance " << tol << ")"
      << std::defaultfloat << ", kink crossings " << crossings << "\n";
  return worst < tol ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stream weakly-supervised temporal action localization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Flags flags;
  std::string config_path;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset (train/ and val/ manifests) under --out");
  add_common_flags(gen, flags, config_path);
  add_path_flag(gen, flags, "--out", &PathConfig::out, "Output directory");
  add_synth_flags(gen, flags);

  auto* trn = app.add_subcommand("train", "Base training, pseudo ground truth refinement and EMA ensemble");
  add_common_flags(trn, flags, config_path);
  add_path_flag(trn, flags, "--manifest", &PathConfig::manifest, "Training manifest.json");
  add_path_flag(trn, flags, "--out", &PathConfig::out, "Directory for checkpoints and the training log");
  add_train_flags(trn, flags);

  auto* loc = app.add_subcommand("localize", "Checkpoint + manifest -> detections JSON");
  add_common_flags(loc, flags, config_path);
  add_path_flag(loc, flags, "--checkpoint", &PathConfig::checkpoint, "Checkpoint file");
  add_path_flag(loc, flags, "--manifest", &PathConfig::manifest, "Manifest of the videos to localize");
  add_path_flag(loc, flags, "--out", &PathConfig::out, "Detections JSON to write");
  add_path_flag(loc, flags, "--label-map", &PathConfig::label_map, "JSON array of class names");
  add_localize_flags(loc, flags);

  auto* evl = app.add_subcommand("eval", "Detections + annotated manifest -> mAP report");
  add_common_flags(evl, flags, config_path);
  add_path_flag(evl, flags, "--detections", &PathConfig::detections, "Detections JSON");
  add_path_flag(evl, flags, "--manifest", &PathConfig::manifest, "Manifest with ground-truth segments");
  add_path_flag(evl, flags, "--out", &PathConfig::out, "Report JSON to write");
  add_path_flag(evl, flags, "--label-map", &PathConfig::label_map, "JSON array of class names");

  auto* gc = app.add_subcommand("grad-check", "Compare analytic gradients with central finite differences");
  int gc_T = 12, gc_D = 6, gc_E = 5, gc_C = 3, gc_instances = 1;
  double gc_h = 1e-5, gc_tol = 1e-4;
  std::uint64_t gc_seed = 0;
  std::string gc_mode = "both";
  gc->add_option("--T", gc_T, "Snippets per instance")->capture_default_str();
  gc->add_option("--D", gc_D, "Feature width")->capture_default_str();
  gc->add_option("--E", gc_E, "Embedding width")->capture_default_str();
  gc->add_option("--C", gc_C, "Classes")->capture_default_str();
  gc->add_option("--mode", gc_mode, "base, refine or both")->capture_default_str();
  gc->add_option("--step", gc_h, "Finite-difference step")->capture_default_str();
  gc->add_option("--tol", gc_tol, "Maximum accepted relative error")->capture_default_str();
  gc->add_option("--instances", gc_instances, "Random instances per mode")->capture_default_str();
  gc->add_option("--seed", gc_seed, "Instance seed")->capture_default_str();

  auto* pipe = app.add_subcommand("pipeline", "gen-data (unless --data), train, localize and eval in sequence");
  add_common_flags(pipe, flags, config_path);
  add_path_flag(pipe, flags, "--data", &PathConfig::data, "Existing directory with train/ and val/ manifests");
  add_path_flag(pipe, flags, "--out", &PathConfig::out, "Output directory");
  add_path_flag(pipe, flags, "--label-map", &PathConfig::label_map, "JSON array of class names");
  add_synth_flags(pipe, flags);
  add_train_flags(pipe, flags);
  add_localize_flags(pipe, flags);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gc->parsed()) return run_grad_check(gc_T, gc_D, gc_E, gc_C, gc_mode, gc_h, gc_tol, gc_instances, gc_seed, out);

    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    flags.apply(cfg);
    cfg.resolve();
    cfg.validate();

    if (gen->parsed()) {
      gen_data(cfg, require_path(cfg.paths.out, "--out"), out);
    } else if (trn->parsed()) {
      const Dataset ds = load_dataset(require_path(cfg.paths.manifest, "--manifest"));
      train(cfg, ds, require_path(cfg.paths.out, "--out"), out);
    } else if (loc->parsed()) {
      const Dataset ds = load_dataset(require_path(cfg.paths.manifest, "--manifest"));
      const Checkpoint ck = load_checkpoint(require_path(cfg.paths.checkpoint, "--checkpoint"));
      const fs::path target = require_path(cfg.paths.out, "--out");
      const auto dets = localize_dataset(ds, ck, cfg.localize, cfg.workers);
      if (target.has_parent_path()) make_dir(target.parent_path());
      write_detections(target, video_ids(ds), dets, label_map(cfg));
      out << "wrote " << dets.size() << " detections for " << ds.videos.size() << " videos to " << target.string()
          << "\n";
    } else if (evl->parsed()) {
      const Dataset ds = load_dataset(require_path(cfg.paths.manifest, "--manifest"));
      const auto dets = read_detections(require_path(cfg.paths.detections, "--detections"), label_map(cfg));
      const EvalReport rep = evaluate(dets, ds, default_iou_thresholds(), cfg.workers);
      const fs::path target = require_path(cfg.paths.out, "--out");
      if (target.has_parent_path()) make_dir(target.parent_path());
      write_text(target, report_to_json(rep));
      out << format_table(rep);
    } else if (pipe->parsed()) {
      const fs::path out_dir = require_path(cfg.paths.out, "--out");
      fs::path data_dir = cfg.paths.data;
      if (data_dir.empty()) {
        data_dir = out_dir / "data";
        gen_data(cfg, data_dir, out);
      }
      const Dataset train_ds = load_dataset(data_dir / "train" / "manifest.json");
      const Dataset val_ds = load_dataset(data_dir / "val" / "manifest.json");
      const TrainOutcome trained = train(cfg, train_ds, out_dir / "train", out);
      const LabelMap labels = label_map(cfg);

      for (const auto& ck : trained.iterations) {
        const auto rep = evaluate(localize_dataset(val_ds, ck, cfg.localize, cfg.workers), val_ds,
                                  default_iou_thresholds(), cfg.workers);
        out << "iteration " << ck.refinement_iteration << " fusion avg mAP " << std::fixed << std::setprecision(2)
            << 100.0 * rep.average_map << std::defaultfloat << "\n";
      }
      const auto dets = localize_dataset(val_ds, trained.final_model, cfg.localize, cfg.workers);
      write_detections(out_dir / "detections.json", video_ids(val_ds), dets, labels);
      const EvalReport rep = evaluate(dets, val_ds, default_iou_thresholds(), cfg.workers);
      write_text(out_dir / "report.json", report_to_json(rep));
      out << format_table(rep, trained.final_model.is_ensemble() ? "Ensemble" : "Fusion");
    }
    return 0;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace tscn
