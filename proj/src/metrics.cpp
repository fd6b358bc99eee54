// SPDX-License-Identifier: Apache-2.0
#include "satswin/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "satswin/errors.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace metrics {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw MetricError("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_counts(std::vector<std::vector<std::uint64_t>> counts) {
  ConfusionMatrix cm(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i].size() != counts.size()) throw MetricError("confusion matrix rows must be square");
    for (std::size_t j = 0; j < counts.size(); ++j) cm.counts_[i * cm.k_ + j] = counts[i][j];
  }
  return cm;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::support(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < k_; ++p) s += at(c, p);
  return s;
}

void ConfusionMatrix::accumulate(std::span<const std::int32_t> pred, std::span<const std::int32_t> truth,
                                 std::optional<std::int32_t> ignore_label) {
  if (pred.size() != truth.size()) {
    throw ShapeError("accumulate: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(truth.size()) + " labels");
  }
  const auto k = static_cast<std::int32_t>(k_);
  // Validate first so a bad label leaves the matrix untouched.
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (ignore_label && truth[i] == *ignore_label) continue;
    if (truth[i] < 0 || truth[i] >= k) {
      throw MetricError("label " + std::to_string(truth[i]) + " at pixel " + std::to_string(i) +
                        " outside [0, " + std::to_string(k_) + ")");
    }
    if (pred[i] < 0 || pred[i] >= k) {
      throw MetricError("prediction " + std::to_string(pred[i]) + " at pixel " + std::to_string(i) +
                        " outside [0, " + std::to_string(k_) + ")");
    }
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (ignore_label && truth[i] == *ignore_label) continue;
    ++counts_[static_cast<std::size_t>(truth[i]) * k_ + static_cast<std::size_t>(pred[i])];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw MetricError("cannot merge confusion matrices of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

void ConfusionMatrix::require_nonempty(const char* what) const {
  if (total() == 0) throw MetricError(std::string(what) + " undefined on an empty confusion matrix");
}

double ConfusionMatrix::iou(std::size_t c) const {
  require_nonempty("iou");
  const double tp = static_cast<double>(at(c, c));
  double fp = 0, fn = 0;
  for (std::size_t o = 0; o < k_; ++o) {
    if (o == c) continue;
    fp += static_cast<double>(at(o, c));
    fn += static_cast<double>(at(c, o));
  }
  const double denom = tp + fp + fn;
  if (denom == 0) throw MetricError("iou undefined for class " + std::to_string(c) + " (absent from truth and prediction)");
  return tp / denom;
}

double ConfusionMatrix::recall(std::size_t c) const {
  require_nonempty("recall");
  const auto s = support(c);
  if (s == 0) throw MetricError("recall undefined for class " + std::to_string(c) + " (no support)");
  return static_cast<double>(at(c, c)) / static_cast<double>(s);
}

double ConfusionMatrix::miou() const {
  require_nonempty("miou");
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < k_; ++c) {
    if (support(c) == 0) continue;
    sum += iou(c);
    ++n;
  }
  return sum / static_cast<double>(n);
}

double ConfusionMatrix::macc() const {
  require_nonempty("macc");
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < k_; ++c) {
    if (support(c) == 0) continue;
    sum += recall(c);
    ++n;
  }
  return sum / static_cast<double>(n);
}

double ConfusionMatrix::overall_acc() const {
  require_nonempty("overall_acc");
  std::uint64_t trace = 0;
  for (std::size_t c = 0; c < k_; ++c) trace += at(c, c);
  return static_cast<double>(trace) / static_cast<double>(total());
}

RegressionMetrics regression_metrics(std::span<const double> pred, std::span<const double> truth,
                                     std::span<const std::uint8_t> valid) {
  if (pred.size() != truth.size() || (!valid.empty() && valid.size() != truth.size())) {
    throw ShapeError("regression_metrics: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(truth.size()) + " targets");
  }
  RegressionMetrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!std::isfinite(truth[i]) || (!valid.empty() && !valid[i])) continue;
    const double d = pred[i] - truth[i];
    m.mse += d * d;
    m.mae += std::abs(d);
    ++m.count;
  }
  if (m.count == 0) throw MetricError("regression_metrics: no valid pixels");
  m.mse /= static_cast<double>(m.count);
  m.mae /= static_cast<double>(m.count);
  return m;
}

SegmentationRow segmentation_row(const std::string& name, const ConfusionMatrix& cm) {
  SegmentationRow row{name, {}, cm.miou(), cm.macc(), cm.overall_acc()};
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    double v = std::nan("");
    try {
      v = cm.iou(c);
    } catch (const MetricError&) {
    }
    row.class_iou.push_back(v);
  }
  return row;
}

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string pad_right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::size_t name_width(const auto& rows) {
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.name.size());
  return w;
}

}  // namespace

void write_segmentation_csv(std::ostream& out, const std::vector<SegmentationRow>& rows) {
  const std::size_t k = rows.empty() ? 0 : rows.front().class_iou.size();
  out << "model";
  for (std::size_t c = 0; c < k; ++c) out << ",iou_" << c;
  out << ",miou,macc,overall_acc\n";
  for (const auto& r : rows) {
    out << r.name;
    for (double v : r.class_iou) out << ',' << fmt("%.6f", v);
    out << ',' << fmt("%.6f", r.miou) << ',' << fmt("%.6f", r.macc) << ',' << fmt("%.6f", r.overall_acc) << '\n';
  }
}

void write_segmentation_table(std::ostream& out, const std::vector<SegmentationRow>& rows) {
  const std::size_t k = rows.empty() ? 0 : rows.front().class_iou.size();
  const std::size_t nw = name_width(rows);
  const std::size_t cw = 12;
  std::string header = pad_right("Model", nw);
  for (std::size_t c = 0; c < k; ++c) header += " | " + pad("IoU (" + std::to_string(c) + ")", cw);
  header += " | " + pad("mIoU", cw) + " | " + pad("mAcc", cw) + " | " + pad("OA", cw);
  out << header << '\n' << std::string(header.size(), '-') << '\n';
  for (const auto& r : rows) {
    std::string line = pad_right(r.name, nw);
    for (double v : r.class_iou) line += " | " + pad(fmt("%.2f", 100 * v), cw);
    line += " | " + pad(fmt("%.2f", 100 * r.miou), cw) + " | " + pad(fmt("%.2f", 100 * r.macc), cw) +
            " | " + pad(fmt("%.2f", 100 * r.overall_acc), cw);
    out << line << '\n';
  }
}

void write_regression_csv(std::ostream& out, const std::vector<RegressionRow>& rows) {
  out << "model,mse,mae,pixels\n";
  for (const auto& r : rows) {
    out << r.name << ',' << fmt("%.6f", r.metrics.mse) << ',' << fmt("%.6f", r.metrics.mae) << ','
        << r.metrics.count << '\n';
  }
}

void write_regression_table(std::ostream& out, const std::vector<RegressionRow>& rows) {
  const std::size_t nw = name_width(rows);
  const std::string header = pad_right("Model", nw) + " | " + pad("MSE", 12) + " | " + pad("MAE", 12);
  out << header << '\n' << std::string(header.size(), '-') << '\n';
  for (const auto& r : rows) {
    out << pad_right(r.name, nw) << " | " << pad(fmt("%.4f", r.metrics.mse), 12) << " | "
        << pad(fmt("%.4f", r.metrics.mae), 12) << '\n';
  }
}

}  // namespace metrics
SATSWIN_NAMESPACE_END
