#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dres/annotation.hpp"
#include "dres/core.hpp"

namespace dres {

struct EvalRecord {
  std::string description_id;
  std::vector<double> ious;  // one per unit, in unit order
  bool long_text = false;
  bool complex_text = false;
};

/// Point-level IoU of every unit. Predictions are matched by description_id; the
/// sentence mask is scored only for descriptions with a sentence-level target.
std::vector<EvalRecord> evaluate(const std::vector<PhraseMaskSet>& predictions,
                                 const std::vector<AnnotatedDescription>& descs,
                                 const SceneMap& scenes);

/// Flat mean over all units of all descriptions.
double miou(const std::vector<EvalRecord>& records);
/// Fraction of units with IoU strictly greater than t.
double acc_at(const std::vector<EvalRecord>& records, double t);
/// Mean over descriptions of the per-description mean IoU.
double miou_s(const std::vector<EvalRecord>& records);

struct SubsetMetrics {
  double acc_25 = 0;
  double acc_50 = 0;
  double miou = 0;
  double miou_s = 0;
  std::size_t num_descriptions = 0;
  std::size_t num_units = 0;
};

/// Overall / Long / Complex; an empty subset is absent rather than zero.
struct MetricsReport {
  std::optional<SubsetMetrics> overall;
  std::optional<SubsetMetrics> long_texts;
  std::optional<SubsetMetrics> complex_texts;
};

MetricsReport report(const std::vector<EvalRecord>& records);

nlohmann::ordered_json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

/// Aligned table: rows Long / Complex / Overall, columns 0.25 / 0.5 / mIoU-S / mIoU (percent).
std::string format_table(const MetricsReport& r);
std::string format_csv(const MetricsReport& r);

nlohmann::ordered_json to_json(const DatasetSummary& s);
DatasetSummary dataset_summary_from_json(const nlohmann::json& j);
/// One row with the columns: Texts, Avg. length, Long, Avg. mask, Objects.
std::string format_table(const DatasetSummary& s);
std::string format_csv(const DatasetSummary& s);

}  // namespace dres
