#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "tscn/dataio.hpp"
#include "tscn/losses.hpp"
#include "tscn/model.hpp"
#include "tscn/pseudo.hpp"

namespace tscn {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Stream { Rgb = 0, Flow = 1 };

std::string_view to_string(Stream s);

struct AdamWConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

struct AdamWState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step_count = 0;
};

/// Decoupled weight decay Adam, applied in place:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
void adamw_step(BaseModelParams& params, const Gradients& grads, AdamWState& state, const AdamWConfig& cfg);

struct TrainConfig {
  AdamWConfig adamw;
  int epochs_per_iteration = 10;
  int refinement_iterations = 5;
  LossWeights loss_weights;
  FusionConfig fusion;
  double ema_weight = 0.2;
  int embed_dim = 0;  // 0 selects E = D
  Activation activation = Activation::None;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
  ModelShape model_shape(int D, int C) const { return {D, embed_dim > 0 ? embed_dim : D, C, activation}; }
};

/// Parameters of both streams after one refinement iteration.
struct Checkpoint {
  static constexpr int kEnsembleIteration = -1;

  BaseModelParams rgb;
  BaseModelParams flow;
  int refinement_iteration = 0;

  bool is_ensemble() const { return refinement_iteration == kEnsembleIteration; }
  const BaseModelParams& stream(Stream s) const { return s == Stream::Rgb ? rgb : flow; }
  BaseModelParams& stream(Stream s) { return s == Stream::Rgb ? rgb : flow; }
};

struct TrainLogEntry {
  int iteration = 0;
  int epoch = 0;
  std::string video_id;
  Stream stream = Stream::Rgb;
  LossBreakdown loss;
};

/// One JSON object per line: {iteration, epoch, video_id, stream, loss:{...}}.
std::string to_json_line(const TrainLogEntry& e);

/// Per optimizer step instrumentation. May be called concurrently for the two
/// streams when cfg.workers > 1.
struct StepInfo {
  int iteration;
  int epoch;
  Stream stream;
  const VideoRecord& video;
  const LossBreakdown& loss;
  const AdamWState& optimizer;
  const Eigen::VectorXd* pseudo_gt;
};
using StepObserver = std::function<void(const StepInfo&)>;

/// Iteration 0: both streams trained from video-level labels only.
Checkpoint train_base(const Dataset& dataset, const TrainConfig& cfg, std::vector<TrainLogEntry>* log = nullptr,
                      const StepObserver& observer = {});

/// Fused attention of both streams thresholded into a per-video target,
/// computed over the dataset in manifest order.
std::vector<PseudoGT> generate_pseudo_gt(const Dataset& dataset, const Checkpoint& ckpt, const FusionConfig& fusion,
                                         int workers);

/// Returns checkpoints for iterations 0..N-1, starting with ckpt0. Each later
/// iteration warm-starts from the previous one with a fresh optimizer and a
/// pseudo ground truth frozen for the whole iteration.
std::vector<Checkpoint> refine_loop(const Dataset& dataset, const Checkpoint& ckpt0, const TrainConfig& cfg,
                                    std::vector<TrainLogEntry>* log = nullptr, const StepObserver& observer = {},
                                    const std::function<void(int, const std::vector<PseudoGT>&)>& on_pseudo_gt = {});

/// acc <- params(0); acc <- (1 - weight) acc + weight params(n) for n = 1..N-1.
Checkpoint ema_ensemble(const std::vector<Checkpoint>& checkpoints, double weight);

}  // namespace tscn
