#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dres/annotation.hpp"
#include "dres/detailbase.hpp"
#include "dres/superpoint.hpp"

namespace dres {

struct LossConfig {
  double bce_weight = 1.0;    // lambda_1
  double dice_weight = 1.0;   // lambda_2
  double score_weight = 0.5;  // lambda_3
  bool supervise_all_layers = true;
  double gt_pool_threshold = 0.5;
  double dice_eps = 1.0;
};

struct LayerLoss {
  int layer = 0;
  double bce = 0;
  double dice = 0;
  double score = 0;
};

struct LossBreakdown {
  std::vector<LayerLoss> layers;
  double total = 0;
};

/// Supervised query rows and their superpoint-level targets (rows x N_s of 0/1).
struct Supervision {
  std::vector<int> rows;
  Matrix targets;
};

/// Unit ground truth: union of target instances, pooled onto superpoints. Rows are the
/// phrase head rows (+1 for [CLS]) followed by row 0 for a sentence-level target.
Supervision make_supervision(const AnnotatedDescription& desc, const Scene& scene,
                             const SuperpointPartition& part, double threshold = 0.5);

/// Mean elementwise binary cross-entropy on logits.
double bce_loss(const Matrix& logits, const Matrix& targets);
/// 1 - (2 sum(p t) + eps) / (sum p + sum t + eps) per row, averaged over rows.
double dice_loss(const Matrix& logits, const Matrix& targets, double eps = 1.0);
/// Mean squared error between predicted scores and achieved IoUs.
double score_loss(const std::vector<double>& predicted, const std::vector<double>& actual_iou);

/// IoU of each binarized logit row against its target row (no gradient).
std::vector<double> achieved_iou(const Matrix& logits, const Matrix& targets, double threshold);

LossBreakdown total_loss(const ForwardTrace& trace, const Supervision& sup, const LossConfig& cfg,
                         double binarize_threshold = 0.0);

/// Everything the model consumes for one description.
struct Sample {
  std::string description_id;
  Matrix pooled;          // N_s x c
  Matrix token_features;  // (L+2) x e
  SuperpointPartition partition;
  Supervision supervision;
  AnnotatedDescription description;
  std::vector<PointMask> gt_masks;  // one per unit, point level
  bool long_text = false;
  bool complex_text = false;
};

using Gradients = std::map<std::string, Matrix>;

struct GradientResult {
  Gradients grads;
  LossBreakdown loss;
};

/// Exact reverse-mode gradients of LossBreakdown::total for every model parameter.
GradientResult gradients(const ModelState& state, const Sample& sample, const ModelConfig& model_cfg,
                         const LossConfig& loss_cfg);

/// Loss of one sample computed by a value-only forward pass.
LossBreakdown sample_loss(const ModelState& state, const Sample& sample, const ModelConfig& model_cfg,
                          const LossConfig& loss_cfg);

struct TrainSchedule {
  double base_lr = 1e-4;
  std::vector<int> decay_epochs{26, 34, 42};
  double decay_rate = 0.5;
  int epochs = 50;
  int batch_size = 16;
  std::uint64_t seed = 0;
  /// Stop after this many optimizer steps; 0 means no limit.
  int max_steps = 0;

  void validate() const;
  /// base_lr * decay_rate^(number of decay epochs <= epoch).
  double lr_at(int epoch) const;
};

class Optimizer {
public:
  virtual ~Optimizer() = default;
  virtual void step(ModelState& state, const Gradients& grads, double lr) = 0;
};

class SgdOptimizer final : public Optimizer {
public:
  void step(ModelState& state, const Gradients& grads, double lr) override;
};

class AdamOptimizer final : public Optimizer {
public:
  AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ModelState& state, const Gradients& grads, double lr) override;

private:
  double beta1_, beta2_, eps_;
  long step_ = 0;
  std::map<std::string, Matrix> m_, v_;
};

enum class OptimizerKind { Adam, Sgd };

struct EpochLog {
  int epoch = 0;
  int steps = 0;  // cumulative optimizer steps at the end of the epoch
  double lr = 0;
  double bce = 0;    // per-sample means, summed over supervised layers
  double dice = 0;
  double score = 0;
  double total = 0;
  double miou = 0;  // phrase-level, point masks, after the epoch
};

struct TrainOptions {
  OptimizerKind optimizer = OptimizerKind::Adam;
  /// Evaluate training-set mIoU after each epoch (costs one forward per sample).
  bool track_miou = true;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  ModelState state;
  std::vector<EpochLog> log;
  int steps = 0;
};

/// Seeded minibatch training. Samples are ordered by description_id, shuffled per epoch
/// by the schedule seed; batch gradients are averaged in that fixed order.
TrainResult train(const std::vector<Sample>& samples, const TrainSchedule& schedule,
                  const ModelConfig& model_cfg, const LossConfig& loss_cfg, ModelState initial,
                  const TrainOptions& options = {});

/// Predicted unit masks (phrases, then [CLS]) for a sample.
PhraseMaskSet predict_sample(const ModelState& state, const Sample& sample, const ModelConfig& cfg);

/// Flat phrase-level mIoU of the model over samples.
double training_miou(const ModelState& state, const std::vector<Sample>& samples,
                     const ModelConfig& cfg);

}  // namespace dres
