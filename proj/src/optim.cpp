#include "tscn/optim.hpp"

#include <cmath>
#include <future>
#include <numeric>

#include <json.hpp>

#include "tscn/errors.hpp"
#include "tscn/grad.hpp"
#include "tscn/parallel.hpp"
#include "tscn/rng.hpp"

namespace tscn {

namespace {

constexpr std::uint64_t kInitTag = 1;
constexpr std::uint64_t kShuffleTag = 2;

struct StreamRun {
  BaseModelParams params;
  std::vector<TrainLogEntry> log;
};

// Trains one stream for cfg.epochs_per_iteration epochs, one step per video.
StreamRun train_stream(const Dataset& ds, BaseModelParams params, Stream stream, int iteration,
                       const std::vector<PseudoGT>* pseudo, const TrainConfig& cfg, bool keep_log,
                       const StepObserver& observer) {
  StreamRun run;
  AdamWState state;
  const LossMode mode = pseudo ? LossMode::Refine : LossMode::Base;
  std::vector<std::size_t> order(ds.videos.size());
  for (int epoch = 0; epoch < cfg.epochs_per_iteration; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, kShuffleTag + static_cast<std::uint64_t>(stream), iteration, epoch));
    rng.shuffle(std::span(order));
    for (std::size_t idx : order) {
      const VideoRecord& video = ds.videos[idx];
      const Eigen::MatrixXd& feats = stream == Stream::Rgb ? video.rgb : video.flow;
      const Eigen::VectorXd* g = pseudo ? &(*pseudo)[idx].g : nullptr;
      BackwardResult res = backward(params, feats, video.meta.labels, cfg.loss_weights, g, mode);
      if (!std::isfinite(res.loss.total) || !res.grads.data().allFinite()) {
        throw TrainingError("non-finite loss or gradient: stream " + std::string(to_string(stream)) +
                            ", iteration " + std::to_string(iteration) + ", epoch " + std::to_string(epoch) +
                            ", video '" + video.meta.id + "', loss " + std::to_string(res.loss.total));
      }
      adamw_step(params, res.grads, state, cfg.adamw);
      if (observer) observer({iteration, epoch, stream, video, res.loss, state, g});
      if (keep_log) run.log.push_back({iteration, epoch, video.meta.id, stream, res.loss});
    }
  }
  run.params = std::move(params);
  return run;
}

// Both streams share no mutable state, so they may train concurrently.
Checkpoint train_both(const Dataset& ds, const Checkpoint& start, int iteration, const std::vector<PseudoGT>* pseudo,
                      const TrainConfig& cfg, std::vector<TrainLogEntry>* log, const StepObserver& observer) {
  StreamRun rgb;
  StreamRun flow;
  const bool keep = log != nullptr;
  if (cfg.workers > 1) {
    auto fut = std::async(std::launch::async, [&] {
      return train_stream(ds, start.flow, Stream::Flow, iteration, pseudo, cfg, keep, observer);
    });
    rgb = train_stream(ds, start.rgb, Stream::Rgb, iteration, pseudo, cfg, keep, observer);
    flow = fut.get();
  } else {
    rgb = train_stream(ds, start.rgb, Stream::Rgb, iteration, pseudo, cfg, keep, observer);
    flow = train_stream(ds, start.flow, Stream::Flow, iteration, pseudo, cfg, keep, observer);
  }
  if (log) {
    log->insert(log->end(), rgb.log.begin(), rgb.log.end());
    log->insert(log->end(), flow.log.begin(), flow.log.end());
  }
  return {std::move(rgb.params), std::move(flow.params), iteration};
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

std::string_view to_string(Stream s) { return s == Stream::Rgb ? "rgb" : "flow"; }

void AdamWConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) throw ValidationError("betas must lie in (0, 1)");
  if (!(eps > 0.0)) throw ValidationError("eps must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight decay must be non-negative");
}

void TrainConfig::validate() const {
  adamw.validate();
  loss_weights.validate();
  fusion.validate();
  if (epochs_per_iteration < 0) throw ValidationError("epochs_per_iteration must be non-negative");
  if (refinement_iterations < 1) throw ValidationError("refinement_iterations must be at least 1");
  if (!(ema_weight > 0.0 && ema_weight <= 1.0)) throw ValidationError("ema weight must lie in (0, 1]");
  if (embed_dim < 0) throw ValidationError("embed_dim must be non-negative");
  if (workers < 1) throw ValidationError("workers must be at least 1");
}

void adamw_step(BaseModelParams& params, const Gradients& grads, AdamWState& state, const AdamWConfig& cfg) {
  Eigen::VectorXd& p = params.data();
  const Eigen::VectorXd& g = grads.data();
  if (g.size() != p.size()) throw ValidationError("gradient shape does not match parameters");
  if (state.step_count == 0 && state.m.size() == 0) {
    state.m = Eigen::VectorXd::Zero(p.size());
    state.v = Eigen::VectorXd::Zero(p.size());
  }
  if (state.m.size() != p.size() || state.v.size() != p.size()) {
    throw ValidationError("optimizer state shape does not match parameters");
  }
  ++state.step_count;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));
  const auto m_hat = state.m.array() / c1;
  const auto v_hat = state.v.array() / c2;
  p.array() -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p.array());
}

std::string to_json_line(const TrainLogEntry& e) {
  nlohmann::json loss{{"cls", e.loss.cls},
                      {"smooth", optional_json(e.loss.smooth)},
                      {"norm", optional_json(e.loss.norm)},
                      {"dist", optional_json(e.loss.dist)},
                      {"guide", optional_json(e.loss.guide)},
                      {"pseudo", optional_json(e.loss.pseudo)},
                      {"total", e.loss.total}};
  nlohmann::json j{{"iteration", e.iteration},
                   {"epoch", e.epoch},
                   {"video_id", e.video_id},
                   {"stream", to_string(e.stream)},
                   {"loss", std::move(loss)}};
  return j.dump();
}

Checkpoint train_base(const Dataset& dataset, const TrainConfig& cfg, std::vector<TrainLogEntry>* log,
                      const StepObserver& observer) {
  cfg.validate();
  if (dataset.videos.empty()) throw ValidationError("training needs a non-empty dataset");
  const ModelShape shape = cfg.model_shape(dataset.feature_dim, dataset.num_classes);
  Checkpoint init{init_params(shape, derive_seed(cfg.seed, kInitTag, 0)),
                  init_params(shape, derive_seed(cfg.seed, kInitTag, 1)), 0};
  return train_both(dataset, init, 0, nullptr, cfg, log, observer);
}

std::vector<PseudoGT> generate_pseudo_gt(const Dataset& dataset, const Checkpoint& ckpt, const FusionConfig& fusion,
                                         int workers) {
  return parallel_map(dataset.videos.size(), workers, [&](std::size_t i) {
    const VideoRecord& v = dataset.videos[i];
    const StreamOutput rgb = forward(ckpt.rgb, v.rgb);
    const StreamOutput flow = forward(ckpt.flow, v.flow);
    return make_pseudo_gt(fuse(rgb.a, flow.a, fusion.beta), fusion.theta, ckpt.refinement_iteration);
  });
}

std::vector<Checkpoint> refine_loop(const Dataset& dataset, const Checkpoint& ckpt0, const TrainConfig& cfg,
                                    std::vector<TrainLogEntry>* log, const StepObserver& observer,
                                    const std::function<void(int, const std::vector<PseudoGT>&)>& on_pseudo_gt) {
  cfg.validate();
  if (dataset.videos.empty()) throw ValidationError("refinement needs a non-empty dataset");
  std::vector<Checkpoint> ckpts{ckpt0};
  for (int n = 0; n + 1 < cfg.refinement_iterations; ++n) {
    const std::vector<PseudoGT> pseudo = generate_pseudo_gt(dataset, ckpts.back(), cfg.fusion, cfg.workers);
    if (on_pseudo_gt) on_pseudo_gt(n + 1, pseudo);
    ckpts.push_back(train_both(dataset, ckpts.back(), n + 1, &pseudo, cfg, log, observer));
  }
  return ckpts;
}

Checkpoint ema_ensemble(const std::vector<Checkpoint>& checkpoints, double weight) {
  if (checkpoints.empty()) throw ValidationError("ensemble needs at least one checkpoint");
  if (!(weight > 0.0 && weight <= 1.0)) throw ValidationError("ensemble weight must lie in (0, 1]");
  Checkpoint acc = checkpoints.front();
  for (std::size_t n = 1; n < checkpoints.size(); ++n) {
    for (Stream s : {Stream::Rgb, Stream::Flow}) {
      const BaseModelParams& next = checkpoints[n].stream(s);
      if (!(next.shape() == acc.stream(s).shape())) {
        throw ValidationError("checkpoint " + std::to_string(n) + " has mismatched " + std::string(to_string(s)) +
                              " dimensions");
      }
      // incremental form keeps identical inputs exactly fixed
      acc.stream(s).data() += weight * (next.data() - acc.stream(s).data());
    }
  }
  acc.refinement_iteration = Checkpoint::kEnsembleIteration;
  return acc;
}

}  // namespace tscn
