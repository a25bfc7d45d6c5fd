#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fracdet {

// Positive class is "fractured" (class index 0).
struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const std::size_t> labels, std::span<const std::size_t> predictions);

// Ratios whose denominator is zero are reported as std::nullopt.
struct MetricSummary {
  double accuracy = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

MetricSummary summarize(const ConfusionMatrix& m);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // scores >= threshold are called positive
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  double auc = 0.0;
};

// Threshold sweep over the distinct scores in descending order; AUC by the
// trapezoid rule, which credits tied positive/negative pairs with one half.
RocCurve roc_auc(std::span<const std::size_t> labels, std::span<const double> positive_scores);

struct MetricReport {
  ConfusionMatrix confusion;
  MetricSummary summary;
  RocCurve roc;
  std::optional<double> loss;
};

std::string report_json(const MetricReport& report);
std::string report_table(const MetricReport& report);
// fpr,tpr,threshold
void write_roc_csv(const RocCurve& roc, const std::filesystem::path& path);

}  // namespace fracdet
