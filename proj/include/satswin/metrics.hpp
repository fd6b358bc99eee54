// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "satswin/tensor.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace metrics {

/// counts[truth][prediction].
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);
  static ConfusionMatrix from_counts(std::vector<std::vector<std::uint64_t>> counts);

  std::size_t num_classes() const { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
  std::uint64_t total() const;
  std::uint64_t support(std::size_t c) const;  // ground-truth pixels of class c

  /// Pixels whose truth equals ignore_label are skipped; other labels must lie
  /// in [0, num_classes).
  void accumulate(std::span<const std::int32_t> pred, std::span<const std::int32_t> truth,
                  std::optional<std::int32_t> ignore_label = std::nullopt);
  void merge(const ConfusionMatrix& other);

  /// TP / (TP + FP + FN) for class c.
  double iou(std::size_t c) const;
  /// Means over classes with nonzero support.
  double miou() const;
  double macc() const;
  double overall_acc() const;
  double recall(std::size_t c) const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  void require_nonempty(const char* what) const;
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

struct RegressionMetrics {
  double mse = 0;
  double mae = 0;
  std::size_t count = 0;
};
/// Over valid pixels: finite truth and, when given, valid[i] != 0.
RegressionMetrics regression_metrics(std::span<const double> pred, std::span<const double> truth,
                                     std::span<const std::uint8_t> valid = {});

/// One row of a segmentation report.
struct SegmentationRow {
  std::string name;
  std::vector<double> class_iou;
  double miou = 0;
  double macc = 0;
  double overall_acc = 0;
};
SegmentationRow segmentation_row(const std::string& name, const ConfusionMatrix& cm);

/// CSV header: model,iou_0..iou_{K-1},miou,macc,overall_acc
void write_segmentation_csv(std::ostream& out, const std::vector<SegmentationRow>& rows);
/// Fixed-width table: Model | IoU (class k) ... | mIoU | mAcc | OA, values in percent.
void write_segmentation_table(std::ostream& out, const std::vector<SegmentationRow>& rows);

struct RegressionRow {
  std::string name;
  RegressionMetrics metrics;
};
void write_regression_csv(std::ostream& out, const std::vector<RegressionRow>& rows);
void write_regression_table(std::ostream& out, const std::vector<RegressionRow>& rows);

}  // namespace metrics
SATSWIN_NAMESPACE_END
