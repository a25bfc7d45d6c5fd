#include "fracdet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "fracdet/error.hpp"
#include "json.hpp"

namespace fracdet {

ConfusionMatrix confusion(std::span<const std::size_t> labels, std::span<const std::size_t> predictions) {
  if (labels.size() != predictions.size()) throw_invalid("labels and predictions differ in length");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1 || predictions[i] > 1) throw_invalid("binary confusion matrix needs labels in {0, 1}");
    const bool actual = labels[i] == 0;
    const bool called = predictions[i] == 0;
    if (actual && called) ++m.tp;
    else if (!actual && !called) ++m.tn;
    else if (called) ++m.fp;
    else ++m.fn;
  }
  return m;
}

MetricSummary summarize(const ConfusionMatrix& m) {
  if (m.total() == 0) throw_invalid("confusion matrix is empty");
  MetricSummary s;
  s.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.total());
  if (m.tp + m.fp > 0) s.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  if (m.tp + m.fn > 0) s.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  // 2PR/(P+R) = 2tp / (2tp + fp + fn)
  if (s.precision && s.recall && m.tp > 0) {
    s.f1 = 2.0 * static_cast<double>(m.tp) / static_cast<double>(2 * m.tp + m.fp + m.fn);
  }
  return s;
}

RocCurve roc_auc(std::span<const std::size_t> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw_invalid("labels and scores differ in length");
  std::uint64_t pos = 0, neg = 0;
  for (auto l : labels) {
    if (l > 1) throw_invalid("ROC analysis needs labels in {0, 1}");
    (l == 0 ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0) throw_invalid("ROC analysis needs both classes present");

  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve roc;
  roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::uint64_t tp = 0, fp = 0;
  // Twice the area in units of (1/P)(1/N), kept as an exact integer.
  unsigned __int128 twice_area = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    const std::uint64_t tp0 = tp, fp0 = fp;
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] == 0 ? tp : fp) += 1;
    twice_area += static_cast<unsigned __int128>(fp - fp0) * (tp0 + tp);
    roc.points.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, s});
  }
  roc.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return roc;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.5f", *v);
  return buf;
}

}  // namespace

std::string report_json(const MetricReport& r) {
  nlohmann::json j;
  j["confusion"] = {{"tp", r.confusion.tp}, {"tn", r.confusion.tn}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}};
  j["positive_class"] = "fractured";
  j["accuracy"] = r.summary.accuracy;
  j["precision"] = optional_json(r.summary.precision);
  j["recall"] = optional_json(r.summary.recall);
  j["f1"] = optional_json(r.summary.f1);
  j["auc"] = r.roc.auc;
  j["loss"] = optional_json(r.loss);
  return j.dump(2);
}

std::string report_table(const MetricReport& r) {
  std::string out;
  out += "                 predicted fractured   predicted not fractured\n";
  char line[160];
  std::snprintf(line, sizeof line, "fractured        %19llu   %23llu\n", static_cast<unsigned long long>(r.confusion.tp),
                static_cast<unsigned long long>(r.confusion.fn));
  out += line;
  std::snprintf(line, sizeof line, "not fractured    %19llu   %23llu\n", static_cast<unsigned long long>(r.confusion.fp),
                static_cast<unsigned long long>(r.confusion.tn));
  out += line;
  out += "accuracy   " + fmt(r.summary.accuracy) + "\n";
  out += "precision  " + fmt(r.summary.precision) + "\n";
  out += "recall     " + fmt(r.summary.recall) + "\n";
  out += "f1         " + fmt(r.summary.f1) + "\n";
  out += "auc        " + fmt(r.roc.auc) + "\n";
  if (r.loss) out += "loss       " + fmt(r.loss) + "\n";
  return out;
}

void write_roc_csv(const RocCurve& roc, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "fpr,tpr,threshold\n";
  char line[128];
  for (const auto& p : roc.points) {
    std::snprintf(line, sizeof line, "%.9g,%.9g,%.9g\n", p.fpr, p.tpr, p.threshold);
    out << line;
  }
}

}  // namespace fracdet
