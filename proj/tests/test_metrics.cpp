// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <numeric>
#include <sstream>

#include "satswin/errors.hpp"
#include "satswin/metrics.hpp"
#include "satswin/rng.hpp"

using namespace satswin;
using namespace satswin::metrics;

TEST_CASE("perfect prediction scores one everywhere") {
  std::vector<std::int32_t> labels(100);
  for (std::size_t i = 0; i < 100; ++i) labels[i] = std::int32_t(i % 2);
  ConfusionMatrix cm(2);
  cm.accumulate(labels, labels);
  CHECK(cm.at(0, 0) + cm.at(1, 1) == 100);
  CHECK(cm.iou(0) == 1);
  CHECK(cm.iou(1) == 1);
  CHECK(cm.miou() == 1);
  CHECK(cm.macc() == 1);
  CHECK(cm.overall_acc() == 1);
}

TEST_CASE("hand-computed two-class matrix") {
  const auto cm = ConfusionMatrix::from_counts({{3, 1}, {2, 4}});
  CHECK(cm.iou(0) == 3.0 / 6.0);
  CHECK(cm.iou(1) == 4.0 / 7.0);
  CHECK(cm.miou() == (0.5 + 4.0 / 7.0) / 2);
  CHECK(cm.macc() == (3.0 / 4.0 + 4.0 / 6.0) / 2);
  CHECK(cm.overall_acc() == 7.0 / 10.0);
  CHECK(cm.recall(1) == 4.0 / 6.0);
}

TEST_CASE("hand-built 3x3 pixel case") {
  // truth      pred
  // 0 0 1      0 1 1
  // 1 2 2      1 2 0
  // 2 2 0      2 1 0
  const std::vector<std::int32_t> truth{0, 0, 1, 1, 2, 2, 2, 2, 0};
  const std::vector<std::int32_t> pred{0, 1, 1, 1, 2, 0, 2, 1, 0};
  ConfusionMatrix cm(3);
  cm.accumulate(pred, truth);
  CHECK(cm == ConfusionMatrix::from_counts({{2, 1, 0}, {0, 2, 0}, {1, 1, 2}}));
  CHECK(cm.iou(2) == 2.0 / 4.0);
}

TEST_CASE("ignored pixels are skipped and bad labels rejected") {
  ConfusionMatrix cm(2);
  const std::vector<std::int32_t> ign(10, 255), pred(10, 1);
  cm.accumulate(pred, ign, 255);
  CHECK(cm.total() == 0);
  CHECK_THROWS_AS(cm.miou(), MetricError);
  const std::vector<std::int32_t> bad{0, 2};
  const std::vector<std::int32_t> ok{0, 1};
  CHECK_THROWS_AS(cm.accumulate(bad, ok), MetricError);
  CHECK_THROWS_AS(cm.accumulate(ok, bad), MetricError);
  CHECK(cm.total() == 0);
  const std::vector<std::int32_t> shorter{0};
  CHECK_THROWS(cm.accumulate(shorter, ok));
}

TEST_CASE("classes without support drop out of the means") {
  const auto cm = ConfusionMatrix::from_counts({{5, 0, 1}, {0, 0, 0}, {1, 0, 3}});
  CHECK(cm.support(1) == 0);
  CHECK(cm.miou() == doctest::Approx((5.0 / 7.0 + 3.0 / 5.0) / 2));
  CHECK(cm.macc() == doctest::Approx((5.0 / 6.0 + 3.0 / 4.0) / 2));
}

TEST_CASE("metrics agree with a brute-force pixel loop") {
  CounterRng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 2 + rng.below(5), n = 50 + rng.below(500);
    std::vector<std::int32_t> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = std::int32_t(rng.below(k));
      pred[i] = rng.uniform() < 0.6 ? truth[i] : std::int32_t(rng.below(k));
    }
    ConfusionMatrix cm(k);
    cm.accumulate(pred, truth);
    double iou_sum = 0, rec_sum = 0, present = 0, correct = 0;
    for (std::size_t c = 0; c < k; ++c) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool t = truth[i] == std::int32_t(c), p = pred[i] == std::int32_t(c);
        tp += t && p;
        fp += !t && p;
        fn += t && !p;
      }
      if (tp + fn > 0) {
        iou_sum += tp / (tp + fp + fn);
        rec_sum += tp / (tp + fn);
        present += 1;
        CHECK(cm.iou(c) == doctest::Approx(tp / (tp + fp + fn)));
      }
    }
    for (std::size_t i = 0; i < n; ++i) correct += truth[i] == pred[i];
    CHECK(cm.miou() == doctest::Approx(iou_sum / present));
    CHECK(cm.macc() == doctest::Approx(rec_sum / present));
    CHECK(cm.overall_acc() == doctest::Approx(correct / double(n)));
    for (double v : {cm.miou(), cm.macc(), cm.overall_acc()}) CHECK((v >= 0 && v <= 1));
  }
}

TEST_CASE("class permutation permutes IoU and keeps the means") {
  CounterRng rng(9);
  std::vector<std::int32_t> truth(300), pred(300);
  for (std::size_t i = 0; i < 300; ++i) {
    truth[i] = std::int32_t(rng.below(3));
    pred[i] = std::int32_t(rng.below(3));
  }
  const std::int32_t perm[] = {2, 0, 1};
  auto apply = [&](std::vector<std::int32_t> v) {
    for (auto& x : v) x = perm[x];
    return v;
  };
  ConfusionMatrix a(3), b(3);
  a.accumulate(pred, truth);
  b.accumulate(apply(pred), apply(truth));
  for (std::size_t c = 0; c < 3; ++c) CHECK(b.iou(perm[c]) == doctest::Approx(a.iou(c)));
  CHECK(b.miou() == doctest::Approx(a.miou()));
  CHECK(b.macc() == doctest::Approx(a.macc()));
  CHECK(b.overall_acc() == a.overall_acc());
}

TEST_CASE("accumulation is associative") {
  CounterRng rng(10);
  std::vector<std::int32_t> truth(200), pred(200);
  for (std::size_t i = 0; i < 200; ++i) {
    truth[i] = std::int32_t(rng.below(4));
    pred[i] = std::int32_t(rng.below(4));
  }
  ConfusionMatrix whole(4), left(4), right(4);
  whole.accumulate(pred, truth);
  left.accumulate(std::span(pred).first(77), std::span(truth).first(77));
  right.accumulate(std::span(pred).subspan(77), std::span(truth).subspan(77));
  left.merge(right);
  CHECK(left == whole);
}

TEST_CASE("regression metrics") {
  const std::vector<double> t{0, 10, 50, 100};
  auto r = regression_metrics(t, t);
  CHECK(r.mse == 0);
  CHECK(r.mae == 0);
  std::vector<double> p = t;
  for (auto& v : p) v += 2;
  r = regression_metrics(p, t);
  CHECK(r.mse == 4);
  CHECK(r.mae == 2);
  CHECK(r.count == 4);

  CounterRng rng(11);
  std::vector<double> a(97), b(97);
  std::vector<std::uint8_t> valid(97);
  double se = 0, ae = 0, n = 0;
  for (std::size_t i = 0; i < 97; ++i) {
    a[i] = rng.uniform(0, 100);
    b[i] = rng.uniform(0, 100);
    valid[i] = rng.below(4) != 0;
    if (valid[i]) se += (a[i] - b[i]) * (a[i] - b[i]), ae += std::abs(a[i] - b[i]), n += 1;
  }
  r = regression_metrics(a, b, valid);
  CHECK(r.mse == doctest::Approx(se / n));
  CHECK(r.mae == doctest::Approx(ae / n));
  CHECK_THROWS(regression_metrics(std::span(a).first(5), b));
}

TEST_CASE("report formats carry the table columns") {
  const auto skip = segmentation_row("with skips", ConfusionMatrix::from_counts({{3, 1}, {2, 4}}));
  const auto noskip = segmentation_row("no skip", ConfusionMatrix::from_counts({{4, 0}, {3, 3}}));
  std::ostringstream csv, table;
  write_segmentation_csv(csv, {skip, noskip});
  write_segmentation_table(table, {skip, noskip});
  CHECK(csv.str().rfind("model,iou_0,iou_1,miou,macc,overall_acc\n", 0) == 0);
  CHECK(csv.str().find("with skips,0.5") != std::string::npos);
  CHECK(table.str().find("mIoU") != std::string::npos);
  CHECK(table.str().find("mAcc") != std::string::npos);
  CHECK(table.str().find("50.00") != std::string::npos);
  CHECK(table.str().find("no skip") != std::string::npos);
  std::ostringstream rcsv;
  write_regression_csv(rcsv, {{"m", {4, 2, 10}}});
  CHECK(rcsv.str().find("m,4") != std::string::npos);
}
