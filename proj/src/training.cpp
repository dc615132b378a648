#include "dres/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dres/error.hpp"
#include "dres/rng.hpp"

namespace dres {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                    " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

Matrix select_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= m.rows()) throw Error(ErrorCode::IndexOutOfRange, "supervised row");
    out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  }
  return out;
}

std::vector<int> supervised_layers(int snapshots, const LossConfig& cfg) {
  if (!cfg.supervise_all_layers) return {snapshots - 1};
  std::vector<int> out(static_cast<std::size_t>(snapshots));
  std::iota(out.begin(), out.end(), 0);
  return out;
}

}  // namespace

Supervision make_supervision(const AnnotatedDescription& desc, const Scene& scene,
                             const SuperpointPartition& part, double threshold) {
  Supervision sup;
  const auto units = desc.units();
  sup.targets = Matrix::Zero(static_cast<Eigen::Index>(units.size()), part.num_superpoints);
  for (std::size_t u = 0; u < units.size(); ++u) {
    sup.rows.push_back(AnnotatedDescription::query_row(units[u]));
    const auto bits = pool_gt_mask(union_instance_mask(scene, units[u].target_ids), part, threshold);
    for (std::size_t s = 0; s < bits.size(); ++s) {
      sup.targets(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(s)) = bits[s] ? 1.0 : 0.0;
    }
  }
  return sup;
}

double bce_loss(const Matrix& logits, const Matrix& targets) {
  require_same_shape(logits, targets, "bce_loss");
  if (logits.size() == 0) return 0.0;
  double total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    for (Eigen::Index j = 0; j < logits.cols(); ++j) total += ag::bce_with_logits(logits(i, j), targets(i, j));
  }
  return total / static_cast<double>(logits.size());
}

double dice_loss(const Matrix& logits, const Matrix& targets, double eps) {
  require_same_shape(logits, targets, "dice_loss");
  if (logits.rows() == 0) return 0.0;
  double total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double inter = 0, psum = 0, tsum = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double p = ag::sigmoid(logits(i, j));
      inter += p * targets(i, j);
      psum += p;
      tsum += targets(i, j);
    }
    total += 1.0 - (2.0 * inter + eps) / (psum + tsum + eps);
  }
  return total / static_cast<double>(logits.rows());
}

double score_loss(const std::vector<double>& predicted, const std::vector<double>& actual_iou) {
  if (predicted.size() != actual_iou.size()) {
    throw Error(ErrorCode::ShapeMismatch, "score_loss: " + std::to_string(predicted.size()) +
                                              " scores for " + std::to_string(actual_iou.size()) + " IoUs");
  }
  if (predicted.empty()) return 0.0;
  double total = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double diff = predicted[i] - actual_iou[i];
    total += diff * diff;
  }
  return total / static_cast<double>(predicted.size());
}

std::vector<double> achieved_iou(const Matrix& logits, const Matrix& targets, double threshold) {
  require_same_shape(logits, targets, "achieved_iou");
  std::vector<double> out;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    std::vector<bool> pred(static_cast<std::size_t>(logits.cols()));
    std::vector<bool> gt(static_cast<std::size_t>(logits.cols()));
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      pred[static_cast<std::size_t>(j)] = logits(i, j) > threshold;
      gt[static_cast<std::size_t>(j)] = targets(i, j) > 0.5;
    }
    out.push_back(bool_iou(pred, gt));
  }
  return out;
}

LossBreakdown total_loss(const ForwardTrace& trace, const Supervision& sup, const LossConfig& cfg,
                         double binarize_threshold) {
  LossBreakdown out;
  for (int layer : supervised_layers(static_cast<int>(trace.logits.size()), cfg)) {
    const Matrix logits = select_rows(trace.logits[static_cast<std::size_t>(layer)], sup.rows);
    const Matrix scores = select_rows(trace.scores[static_cast<std::size_t>(layer)], sup.rows);
    LayerLoss l;
    l.layer = layer;
    l.bce = bce_loss(logits, sup.targets);
    l.dice = dice_loss(logits, sup.targets, cfg.dice_eps);
    const std::vector<double> predicted(scores.data(), scores.data() + scores.size());
    l.score = score_loss(predicted, achieved_iou(logits, sup.targets, binarize_threshold));
    out.total += cfg.bce_weight * l.bce + cfg.dice_weight * l.dice + cfg.score_weight * l.score;
    out.layers.push_back(l);
  }
  return out;
}

GradientResult gradients(const ModelState& state, const Sample& sample, const ModelConfig& model_cfg,
                         const LossConfig& loss_cfg) {
  ag::Tape tape(true);
  const auto params = detail::bind_parameters(tape, state);
  const ag::Var pooled = tape.constant(sample.pooled);
  const ag::Var visual = tape.matmul(pooled, params.at("proj.w1"));
  const ag::Var superpoint = tape.matmul(pooled, params.at("proj.w2"));
  const ag::Var tokens = tape.constant(sample.token_features);
  const auto graph = detail::build_forward(tape, params, visual, superpoint, tokens, model_cfg, nullptr);

  GradientResult result;
  std::vector<ag::Var> terms;
  std::vector<double> weights;
  const auto& sup = sample.supervision;
  for (int layer : supervised_layers(static_cast<int>(graph.logits.size()), loss_cfg)) {
    const ag::Var logits = tape.rows(graph.logits[static_cast<std::size_t>(layer)], sup.rows);
    const ag::Var scores = tape.rows(graph.scores[static_cast<std::size_t>(layer)], sup.rows);
    const auto ious = achieved_iou(tape.value(logits), sup.targets, model_cfg.binarize_threshold);
    Matrix iou_targets(static_cast<Eigen::Index>(ious.size()), 1);
    for (std::size_t i = 0; i < ious.size(); ++i) iou_targets(static_cast<Eigen::Index>(i), 0) = ious[i];

    const ag::Var bce = tape.bce_with_logits(logits, sup.targets);
    const ag::Var dice = tape.dice(logits, sup.targets, loss_cfg.dice_eps);
    const ag::Var score = tape.mse(scores, iou_targets);
    terms.insert(terms.end(), {bce, dice, score});
    weights.insert(weights.end(), {loss_cfg.bce_weight, loss_cfg.dice_weight, loss_cfg.score_weight});
    result.loss.layers.push_back(
        {layer, tape.value(bce)(0, 0), tape.value(dice)(0, 0), tape.value(score)(0, 0)});
  }
  const ag::Var total = tape.weighted_sum(terms, weights);
  result.loss.total = tape.value(total)(0, 0);
  if (!std::isfinite(result.loss.total)) throw Error(ErrorCode::DivergedLoss, sample.description_id);
  tape.backward(total);
  for (const auto& [name, var] : params) {
    Matrix g = tape.grad(var);
    if (!g.allFinite()) throw Error(ErrorCode::NonFiniteGradient, name);
    result.grads.emplace(name, std::move(g));
  }
  return result;
}

LossBreakdown sample_loss(const ModelState& state, const Sample& sample, const ModelConfig& model_cfg,
                          const LossConfig& loss_cfg) {
  const auto trace = forward_pooled(sample.pooled, sample.token_features, model_cfg, state);
  return total_loss(trace, sample.supervision, loss_cfg, model_cfg.binarize_threshold);
}

void TrainSchedule::validate() const {
  for (std::size_t i = 1; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] <= decay_epochs[i - 1]) {
      throw Error(ErrorCode::ConfigInfeasible, "decay epochs must be strictly increasing");
    }
  }
  if (batch_size < 1) throw Error(ErrorCode::ConfigInfeasible, "batch_size must be >= 1");
  if (epochs < 0 || max_steps < 0) throw Error(ErrorCode::ConfigInfeasible, "negative epoch/step budget");
  if (!(base_lr >= 0) || !(decay_rate >= 0)) throw Error(ErrorCode::ConfigInfeasible, "negative learning rate");
}

double TrainSchedule::lr_at(int epoch) const {
  const auto passed = std::count_if(decay_epochs.begin(), decay_epochs.end(), [&](int e) { return e <= epoch; });
  return base_lr * std::pow(decay_rate, static_cast<double>(passed));
}

void SgdOptimizer::step(ModelState& state, const Gradients& grads, double lr) {
  for (auto& [name, value] : state.params) {
    const auto it = grads.find(name);
    if (it != grads.end()) value -= lr * it->second;
  }
}

void AdamOptimizer::step(ModelState& state, const Gradients& grads, double lr) {
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (auto& [name, value] : state.params) {
    const auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Matrix& g = it->second;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.size() == 0) {
      m = Matrix::Zero(g.rows(), g.cols());
      v = Matrix::Zero(g.rows(), g.cols());
    }
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
}

PhraseMaskSet predict_sample(const ModelState& state, const Sample& sample, const ModelConfig& cfg) {
  const auto trace = forward_pooled(sample.pooled, sample.token_features, cfg, state);
  return predict_masks(trace, sample.description, sample.partition, cfg.binarize_threshold);
}

double training_miou(const ModelState& state, const std::vector<Sample>& samples,
                     const ModelConfig& cfg) {
  double sum = 0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    const auto pred = predict_sample(state, s, cfg);
    for (std::size_t u = 0; u < s.gt_masks.size(); ++u) {
      const PointMask& mask = u < pred.masks.size() ? pred.masks[u] : *pred.sentence_mask;
      sum += point_iou(mask, s.gt_masks[u]);
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

TrainResult train(const std::vector<Sample>& samples, const TrainSchedule& schedule,
                  const ModelConfig& model_cfg, const LossConfig& loss_cfg, ModelState initial,
                  const TrainOptions& options) {
  schedule.validate();
  TrainResult result;
  result.state = std::move(initial);
  if (schedule.epochs == 0) return result;
  if (samples.empty()) throw Error(ErrorCode::EmptyDataset, "train needs samples");

  std::unique_ptr<Optimizer> optimizer;
  if (options.optimizer == OptimizerKind::Adam) {
    optimizer = std::make_unique<AdamOptimizer>();
  } else {
    optimizer = std::make_unique<SgdOptimizer>();
  }

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a].description_id < samples[b].description_id;
  });

  const auto batch = static_cast<std::size_t>(schedule.batch_size);
  bool done = false;
  for (int epoch = 0; epoch < schedule.epochs && !done; ++epoch) {
    auto perm = order;
    Rng rng(mix_seed(schedule.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(perm.begin(), perm.end());
    const double lr = schedule.lr_at(epoch);

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < perm.size(); begin += batch) {
      const std::size_t end = std::min(perm.size(), begin + batch);
      Gradients sum;
      for (std::size_t i = begin; i < end; ++i) {
        auto r = gradients(result.state, samples[perm[i]], model_cfg, loss_cfg);
        for (const auto& l : r.loss.layers) {
          log.bce += l.bce;
          log.dice += l.dice;
          log.score += l.score;
        }
        log.total += r.loss.total;
        ++seen;
        for (auto& [name, g] : r.grads) {
          auto it = sum.find(name);
          if (it == sum.end()) {
            sum.emplace(name, std::move(g));
          } else {
            it->second += g;
          }
        }
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      for (auto& [_, g] : sum) g *= inv;
      optimizer->step(result.state, sum, lr);
      ++result.steps;
      if (schedule.max_steps > 0 && result.steps >= schedule.max_steps) {
        done = true;
        break;
      }
    }
    const double n = static_cast<double>(std::max<std::size_t>(seen, 1));
    log.bce /= n;
    log.dice /= n;
    log.score /= n;
    log.total /= n;
    if (!std::isfinite(log.total)) throw Error(ErrorCode::DivergedLoss, "epoch " + std::to_string(epoch));
    log.steps = result.steps;
    if (options.track_miou) log.miou = training_miou(result.state, samples, model_cfg);
    result.log.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
  }
  return result;
}

}  // namespace dres
