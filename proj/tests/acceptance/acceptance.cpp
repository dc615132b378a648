// Acceptance suite: one PASS / FAIL / SKIP line per criterion.
//
//   dres_acceptance [--only N] [--detailrefer records.jsonl ...]
//
// Criterion 8 compares `stats` on user-supplied DetailRefer record files against the
// corpus reference statistics; without files it reports SKIP.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "dres/annotation.hpp"
#include "dres/detailbase.hpp"
#include "dres/error.hpp"
#include "dres/metrics.hpp"
#include "dres/rng.hpp"
#include "dres/superpoint.hpp"
#include "dres/training.hpp"
#include "support.hpp"

using namespace dres;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  enum class Status { Pass, Fail, Skip } status;
  std::string detail;
};

Outcome pass(std::string d) { return {Outcome::Status::Pass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::Status::Fail, std::move(d)}; }
Outcome verdict(bool ok, std::string d) { return ok ? pass(std::move(d)) : fail(std::move(d)); }

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Metrics against a naive oracle that flattens every IoU into one list.

struct OracleMetrics {
  double miou, acc25, acc50, miou_s;
};

OracleMetrics oracle(const std::vector<std::vector<double>>& sets) {
  std::vector<double> flat;
  std::vector<double> per_desc;
  for (const auto& s : sets) {
    flat.insert(flat.end(), s.begin(), s.end());
    per_desc.push_back(std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size()));
  }
  const auto n = static_cast<double>(flat.size());
  OracleMetrics o{};
  o.miou = std::accumulate(flat.begin(), flat.end(), 0.0) / n;
  o.acc25 = static_cast<double>(std::count_if(flat.begin(), flat.end(), [](double v) { return v > 0.25; })) / n;
  o.acc50 = static_cast<double>(std::count_if(flat.begin(), flat.end(), [](double v) { return v > 0.5; })) / n;
  o.miou_s = std::accumulate(per_desc.begin(), per_desc.end(), 0.0) / static_cast<double>(per_desc.size());
  return o;
}

Outcome criterion_metric_oracle() {
  const auto t0 = Clock::now();
  Rng rng(1);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int m = static_cast<int>(rng.uniform_int(1, 10));
    std::vector<std::vector<double>> sets;
    std::vector<EvalRecord> records;
    for (int i = 0; i < m; ++i) {
      const int k = static_cast<int>(rng.uniform_int(1, 5));
      std::vector<double> ious;
      for (int j = 0; j < k; ++j) ious.push_back(rng.uniform());
      sets.push_back(ious);
      records.push_back({"d" + std::to_string(i), ious, false, false});
    }
    const auto o = oracle(sets);
    worst = std::max({worst, std::abs(miou(records) - o.miou), std::abs(acc_at(records, 0.25) - o.acc25),
                      std::abs(acc_at(records, 0.5) - o.acc50), std::abs(miou_s(records) - o.miou_s)});
  }
  const double secs = seconds_since(t0);
  return verdict(worst <= 1e-12 && secs < 5.0,
                 fmt("1000 record sets, max |diff| %.3g (<= 1e-12), %.3f s (< 5 s)", worst, secs));
}

// ---------------------------------------------------------------------------
// 2. The [[1.0],[0,0,0]] fixture separates mIoU from mIoU-S.

Outcome criterion_miou_vs_mious() {
  const std::vector<EvalRecord> recs = {{"a", {1.0}, false, false}, {"b", {0.0, 0.0, 0.0}, false, false}};
  const double m = miou(recs);
  const double ms = miou_s(recs);
  return verdict(m == 0.25 && ms == 0.5, fmt("mIoU %.17g (want 0.25), mIoU-S %.17g (want 0.5)", m, ms));
}

// ---------------------------------------------------------------------------
// 3. Reverse-mode gradients against central differences on every parameter scalar.

double min_supervised_margin(const ModelState& state, const Sample& s, const ModelConfig& cfg) {
  const auto trace = forward_pooled(s.pooled, s.token_features, cfg, state);
  double margin = INFINITY;
  for (const auto& logits : trace.logits) {
    for (int r : s.supervision.rows) margin = std::min(margin, logits.row(r).cwiseAbs().minCoeff());
  }
  return margin;
}

Outcome criterion_gradient_check() {
  const auto t0 = Clock::now();
  ModelConfig cfg;
  cfg.d = 32;
  cfg.e = 32;
  cfg.c = 16;
  cfg.num_layers = 2;
  cfg.heads = 2;
  cfg.ffn_hidden = 4 * cfg.d;
  const LossConfig loss;
  constexpr double kH = 1e-4;
  constexpr double kRel = 1e-4;
  constexpr double kAbs = 1e-6;

  // Central differences are only an oracle where no supervised logit flips sign within
  // the step; take the first seed whose logits keep a clear margin.
  std::uint64_t seed = 0;
  Sample sample;
  ModelState state;
  for (seed = 1;; ++seed) {
    Rng rng(seed);
    sample = testing::random_sample(rng, cfg, 12, 6, 3, true);
    state = init_model(cfg, seed);
    if (min_supervised_margin(state, sample, cfg) > 1e-2) break;
  }

  const auto analytic = gradients(state, sample, cfg, loss);
  std::size_t checked = 0, failures = 0;
  double worst_rel = 0, worst_abs = 0, grad_sq = 0;
  std::string worst_name;
  for (auto& [name, param] : state.params) {
    const Matrix& g = analytic.grads.at(name);
    for (Eigen::Index i = 0; i < param.size(); ++i) {
      const double orig = param.data()[i];
      param.data()[i] = orig + kH;
      const double up = sample_loss(state, sample, cfg, loss).total;
      param.data()[i] = orig - kH;
      const double down = sample_loss(state, sample, cfg, loss).total;
      param.data()[i] = orig;
      const double fd = (up - down) / (2 * kH);
      const double a = g.data()[i];
      const double err = std::abs(a - fd);
      const double scale = std::max(std::abs(a), std::abs(fd));
      const bool ok = err <= kAbs || err <= kRel * scale;
      if (!ok) ++failures;
      worst_abs = std::max(worst_abs, err);
      grad_sq += a * a;
      if (scale > 1e-3 && err / scale > worst_rel) {
        worst_rel = err / scale;
        worst_name = name;
      }
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  return verdict(failures == 0 && secs < 120.0,
                 fmt("seed %llu, %zu scalars in %zu tensors, |grad| %.3g, %zu outside tolerance; max abs err %.2e, "
                     "max rel err %.2e where |grad| > 1e-3%s%s; %.1f s (< 120 s)",
                     static_cast<unsigned long long>(seed), checked, state.params.size(), std::sqrt(grad_sq), failures,
                     worst_abs, worst_rel, worst_name.empty() ? "" : " at ", worst_name.c_str(), secs));
}

// ---------------------------------------------------------------------------
// 4. Overfit the synthetic fixture.

Outcome criterion_overfit() {
  const auto t0 = Clock::now();
  const auto cfg = testing::overfit_pipeline_config();
  const auto samples = testing::overfit_samples(cfg);
  std::size_t max_points = 0;
  int max_sp = 0, min_k = 99, max_k = 0;
  for (const auto& s : samples) {
    max_points = std::max(max_points, s.partition.num_points());
    max_sp = std::max(max_sp, s.partition.num_superpoints);
    min_k = std::min(min_k, static_cast<int>(s.description.phrases.size()));
    max_k = std::max(max_k, static_cast<int>(s.description.phrases.size()));
  }
  const bool fixture_ok = max_points <= 200 && max_sp <= 16 && min_k >= 1 && max_k <= 4;

  TrainOptions opts;
  opts.track_miou = false;
  const auto result = train(samples, cfg.schedule, cfg.model, cfg.loss, init_model(cfg.model, 1), opts);
  const double m = training_miou(result.state, samples, cfg.model);
  const double secs = seconds_since(t0);
  return verdict(fixture_ok && m >= 0.90 && result.steps <= 500 && secs <= 300.0,
                 fmt("%zu descriptions, <= %zu points, <= %d superpoints, k in [%d,%d]; mIoU %.4f (>= 0.90) after %d "
                     "steps (<= 500), %.1f s (<= 300 s)",
                     samples.size(), max_points, max_sp, min_k, max_k, m, result.steps, secs));
}

// ---------------------------------------------------------------------------
// 5. All-layer supervision versus final-layer-only, same budget and seeds.

double final_layer_loss(const ModelState& state, const std::vector<Sample>& samples, const ModelConfig& cfg,
                        LossConfig loss) {
  loss.supervise_all_layers = false;
  double sum = 0;
  for (const auto& s : samples) sum += sample_loss(state, s, cfg, loss).total;
  return sum / static_cast<double>(samples.size());
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

Outcome criterion_ablation() {
  const auto t0 = Clock::now();
  auto cfg = testing::overfit_pipeline_config();
  cfg.schedule.max_steps = 200;
  const auto samples = testing::overfit_samples(cfg);
  std::vector<double> all_layers, final_only;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    cfg.schedule.seed = seed;
    for (bool all : {true, false}) {
      LossConfig loss = cfg.loss;
      loss.supervise_all_layers = all;
      TrainOptions opts;
      opts.track_miou = false;
      const auto r = train(samples, cfg.schedule, cfg.model, loss, init_model(cfg.model, seed), opts);
      (all ? all_layers : final_only).push_back(final_layer_loss(r.state, samples, cfg.model, cfg.loss));
    }
  }
  const double a = median3(all_layers);
  const double f = median3(final_only);
  return verdict(a <= f, fmt("median final-layer training loss after 200 steps over 3 seeds: all layers %.5f, "
                             "final layer only %.5f (%.1f s)",
                             a, f, seconds_since(t0)));
}

// ---------------------------------------------------------------------------
// 6. Structural properties.

SuperpointPartition random_partition(Rng& rng, int num_points, int num_sp) {
  SuperpointPartition p;
  p.scene_id = "prop";
  p.num_superpoints = num_sp;
  for (int i = 0; i < num_points; ++i) {
    p.assignment.push_back(i < num_sp ? i : static_cast<int>(rng.uniform_int(0, num_sp - 1)));
  }
  rng.shuffle(p.assignment.begin(), p.assignment.end());
  return p;
}

Matrix random_matrix(Rng& rng, int r, int c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Outcome criterion_structural() {
  const auto t0 = Clock::now();
  Rng rng(6);
  std::vector<std::string> failed;
  std::size_t trials = 0;

  // pool(broadcast(m)) == m for any threshold in (0, 1].
  bool round_trip = true;
  for (int t = 0; t < 300; ++t, ++trials) {
    const int ns = static_cast<int>(rng.uniform_int(1, 20));
    const auto part = random_partition(rng, ns + static_cast<int>(rng.uniform_int(0, 60)), ns);
    SuperpointBits m(static_cast<std::size_t>(ns));
    for (int s = 0; s < ns; ++s) m[static_cast<std::size_t>(s)] = rng.bernoulli(0.5);
    const double thr = 1.0 - rng.uniform();  // (0, 1]
    if (pool_gt_mask(broadcast_mask(m, part), part, thr) != m) round_trip = false;
  }
  if (!round_trip) failed.push_back("pool-broadcast round trip");

  // sp_pool(aA + bB) == a sp_pool(A) + b sp_pool(B).
  double lin_err = 0;
  for (int t = 0; t < 300; ++t, ++trials) {
    const int ns = static_cast<int>(rng.uniform_int(1, 20));
    const int np = ns + static_cast<int>(rng.uniform_int(0, 60));
    const auto part = random_partition(rng, np, ns);
    const Matrix a = random_matrix(rng, np, 5), b = random_matrix(rng, np, 5);
    const double alpha = rng.uniform(-3, 3), beta = rng.uniform(-3, 3);
    const Matrix lhs = sp_pool(alpha * a + beta * b, part);
    const Matrix rhs = alpha * sp_pool(a, part) + beta * sp_pool(b, part);
    lin_err = std::max(lin_err, (lhs - rhs).cwiseAbs().maxCoeff());
  }
  if (lin_err > 1e-12) failed.push_back(fmt("sp_pool linearity (max err %.2e)", lin_err));

  ModelConfig cfg;
  cfg.num_layers = 3;
  double attn_err = 0, attn_min = 0, equi_err = 0, scale_err = 0;
  bool masks_equal = true, binarize_equal = true;
  for (int t = 0; t < 40; ++t, ++trials) {
    const int ns = static_cast<int>(rng.uniform_int(1, 16));
    const int length = static_cast<int>(rng.uniform_int(1, 10));
    const auto state = init_model(cfg, 100 + static_cast<std::uint64_t>(t));
    const Matrix visual = random_matrix(rng, ns, cfg.d);
    const Matrix sp = random_matrix(rng, ns, cfg.d);
    const Matrix tokens = random_matrix(rng, length + 2, cfg.e);
    const auto trace = forward(visual, sp, tokens, cfg, state, true);

    // Attention rows are distributions.
    for (const auto& rec : trace.attention) {
      attn_err = std::max(attn_err, (rec.weights.rowwise().sum().array() - 1.0).abs().maxCoeff());
      attn_min = std::min(attn_min, rec.weights.minCoeff());
    }

    // Permuting superpoints permutes logit columns; broadcast masks stay the same.
    std::vector<int> perm(static_cast<std::size_t>(ns));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    Matrix pv(ns, cfg.d), psp(ns, cfg.d);
    for (int s = 0; s < ns; ++s) {
      pv.row(s) = visual.row(perm[static_cast<std::size_t>(s)]);
      psp.row(s) = sp.row(perm[static_cast<std::size_t>(s)]);
    }
    const auto ptrace = forward(pv, psp, tokens, cfg, state);
    auto part = random_partition(rng, ns + 10, ns);
    SuperpointPartition ppart = part;
    std::vector<int> inverse(static_cast<std::size_t>(ns));
    for (int s = 0; s < ns; ++s) inverse[static_cast<std::size_t>(perm[static_cast<std::size_t>(s)])] = s;
    for (auto& a : ppart.assignment) a = inverse[static_cast<std::size_t>(a)];
    for (std::size_t l = 0; l < trace.logits.size(); ++l) {
      for (int s = 0; s < ns; ++s) {
        equi_err = std::max(equi_err, (ptrace.logits[l].col(s) - trace.logits[l].col(perm[static_cast<std::size_t>(s)]))
                                          .cwiseAbs()
                                          .maxCoeff());
      }
    }
    AnnotatedDescription desc;
    desc.description_id = "p";
    desc.scene_id = "prop";
    desc.tokens.assign(static_cast<std::size_t>(length), "w");
    for (int i = 0; i < length; ++i) {
      PhraseTarget p;
      p.start = p.end = p.head_index = i;
      p.target_ids = {0};
      desc.phrases.push_back(p);
    }
    desc.sentence_target = make_sentence_target(length, {0});
    const auto m1 = predict_masks(trace, desc, part);
    const auto m2 = predict_masks(ptrace, desc, ppart);
    masks_equal = masks_equal && m1.masks == m2.masks && m1.sentence_mask == m2.sentence_mask;

    // Scaling F_sp by alpha > 0 scales logits and leaves binarized masks unchanged.
    const double alpha = std::exp(rng.uniform(-3, 3));
    const auto strace = forward(visual, alpha * sp, tokens, cfg, state);
    for (std::size_t l = 0; l < trace.logits.size(); ++l) {
      const double denom = std::max(1.0, trace.logits[l].cwiseAbs().maxCoeff() * alpha);
      scale_err = std::max(scale_err, (strace.logits[l] - alpha * trace.logits[l]).cwiseAbs().maxCoeff() / denom);
    }
    const auto m3 = predict_masks(strace, desc, part);
    binarize_equal = binarize_equal && m1.masks == m3.masks && m1.sentence_mask == m3.sentence_mask;
  }
  if (attn_err > 1e-9 || attn_min < 0) failed.push_back(fmt("attention rows (max |sum-1| %.2e)", attn_err));
  if (equi_err > 1e-10 || !masks_equal) failed.push_back(fmt("permutation equivariance (max err %.2e)", equi_err));
  if (scale_err > 1e-12 || !binarize_equal) failed.push_back(fmt("scale invariance (max rel err %.2e)", scale_err));

  std::string detail = fmt("%zu randomized trials; round trip %s, linearity err %.1e, attention |sum-1| %.1e, "
                           "permutation err %.1e, scaling rel err %.1e (%.2f s)",
                           trials, round_trip ? "exact" : "BROKEN", lin_err, attn_err, equi_err, scale_err,
                           seconds_since(t0));
  for (const auto& f : failed) detail += "; FAILED " + f;
  return verdict(failed.empty(), detail);
}

// ---------------------------------------------------------------------------
// 7. Tagged-text round trip and the hand-counted fixture summary.

Outcome criterion_format() {
  Rng rng(7);
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto d = testing::random_description(rng, "r" + std::to_string(i));
    const auto text = serialize_tagged_text(d);
    const auto parsed = parse_tagged_text(text);
    const auto record = parse_record(format_record(d));
    if (parsed.tokens != d.tokens || parsed.phrases != d.phrases || record != d ||
        serialize_tagged_text(record) != text) {
      ++mismatches;
    }
  }

  // Hand count over tests/fixtures/records.jsonl: token lengths
  // 4 8 7 14 4 7 53 50 5 12 2 14 (sum 180); units 1 2 2 4 1 2 1 1 3 4 1 4 (sum 26,
  // r09 carries a sentence target); r07 is the only text over 50 tokens; r04, r10 and
  // r12 have four units; objects scene_a {0,1,2}, scene_b {0,1,2,3}, scene_c {0,1}.
  const auto loaded = load_dataset(testing::fixture_dir() / "records.jsonl");
  const auto s = dataset_stats(loaded.descriptions);
  const bool stats_ok = loaded.violations.empty() && s.num_descriptions == 12 && s.avg_token_length == 180.0 / 12 &&
                        s.num_long == 1 && s.long_fraction == 1.0 / 12 && s.avg_masks_per_text == 26.0 / 12 &&
                        s.num_complex == 3 && s.num_distinct_objects == 9 && s.category_counts.at("shelf") == 4 &&
                        s.category_counts.at("chair") == 3 && s.category_counts.size() == 15;
  return verdict(mismatches == 0 && stats_ok,
                 fmt("1000 random descriptions, %d round-trip mismatches; fixture summary %s (12 texts, avg length "
                     "%.4f, long %zu, avg mask %.4f, complex %zu, objects %zu)",
                     mismatches, stats_ok ? "matches hand count" : "DIFFERS from hand count", s.avg_token_length,
                     s.num_long, s.avg_masks_per_text, s.num_complex, s.num_distinct_objects));
}

// ---------------------------------------------------------------------------
// 8. Full-scale comparison against the corpus reference statistics.

Outcome criterion_reference(const std::vector<std::string>& files) {
  if (files.empty()) {
    return {Outcome::Status::Skip,
            "full-scale benchmark numbers are not reproducible here; pass --detailrefer <records.jsonl>... to "
            "compare stats with 24.9 tokens / 7.4% long / 2.9 masks / 54432 texts"};
  }
  std::vector<AnnotatedDescription> all;
  std::size_t violations = 0;
  for (const auto& f : files) {
    auto loaded = load_dataset(f);
    violations += loaded.violations.size();
    all.insert(all.end(), loaded.descriptions.begin(), loaded.descriptions.end());
  }
  const auto checks = compare_to_reference(dataset_stats(all), kDetailReferStats);
  bool ok = true;
  std::string detail = fmt("%zu files, %zu records, %zu skipped:", files.size(), all.size(), violations);
  for (const auto& c : checks) {
    ok = ok && c.pass;
    detail += fmt(" %s %.4g vs %.4g [%s]", c.field.c_str(), c.observed, c.expected, c.pass ? "ok" : "off");
  }
  return verdict(ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> detailrefer;
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else if (std::strcmp(argv[i], "--detailrefer") == 0) {
      while (i + 1 < argc && argv[i + 1][0] != '-') detailrefer.emplace_back(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--only N] [--detailrefer records.jsonl ...]\n", argv[0]);
      return 2;
    }
  }

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"metric oracle equivalence", criterion_metric_oracle},
      {"mIoU vs mIoU-S discrimination", criterion_miou_vs_mious},
      {"gradient fidelity", criterion_gradient_check},
      {"end-to-end overfit", criterion_overfit},
      {"layer supervision ablation trend", criterion_ablation},
      {"structural invariants", criterion_structural},
      {"format round trip and fixture stats", criterion_format},
      {"full-scale reference statistics", [&] { return criterion_reference(detailrefer); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<int>(i + 1) != only) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const char* tag = o.status == Outcome::Status::Pass ? "PASS" : o.status == Outcome::Status::Fail ? "FAIL" : "SKIP";
    if (o.status == Outcome::Status::Fail) ++failures;
    std::printf("%s  [%zu] %s: %s\n", tag, i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
