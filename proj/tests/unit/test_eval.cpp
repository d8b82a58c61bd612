#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "support.hpp"
#include "taa/errors.hpp"
#include "taa/heads.hpp"
#include "taa/metrics.hpp"
#include "taa/transforms.hpp"
#include "taa/vit.hpp"

using namespace taa;

namespace {

// AP as the sum over every ranking prefix of precision times recall gained.
double prefix_ap(const std::vector<int>& rel) {
  std::vector<int> kept;
  for (int r : rel)
    if (r >= 0) kept.push_back(r);
  const int total = static_cast<int>(std::count(kept.begin(), kept.end(), 1));
  if (total == 0) return std::numeric_limits<double>::quiet_NaN();
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 1; k <= kept.size(); ++k) {
    const int hits = static_cast<int>(std::count(kept.begin(), kept.begin() + k, 1));
    const double recall = static_cast<double>(hits) / total;
    ap += (static_cast<double>(hits) / k) * (recall - prev_recall);
    prev_recall = recall;
  }
  return 100.0 * ap;
}

LabeledImage solid_example(double r, double g, int label) {
  LabeledImage li;
  li.image = Image(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      li.image.at(y, x, 0) = r;
      li.image.at(y, x, 1) = g;
    }
  li.label = label;
  return li;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("accuracy examples") {
    const std::vector<int> labels{0, 1, 2, 3};
    CHECK(accuracy_percent(labels, labels) == 100.0);
    CHECK(accuracy_percent(std::vector<int>{0, 1, 2, 0}, labels) == 75.0);
    std::vector<int> balanced, zeros(100, 0);
    for (int c = 0; c < 10; ++c)
      for (int i = 0; i < 10; ++i) balanced.push_back(c);
    CHECK(accuracy_percent(zeros, balanced) == 10.0);
    CHECK(argmax(std::vector<double>{1.0, 3.0, 3.0}) == 1);
  }

  TEST_CASE("mIoU examples") {
    const std::vector<int> pred{1, 1, 0, 0}, gt{1, 0, 0, 0};
    CHECK(miou_percent(pred, gt, 2) == doctest::Approx(58.3333333333));
    CHECK(miou_percent(gt, gt, 2) == 100.0);
    IouAccumulator acc(3);
    acc.add(std::vector<int>{1, 1}, std::vector<int>{2, 2});
    CHECK(acc.class_iou(1) == 0.0);
    CHECK(acc.class_iou(2) == 0.0);
    CHECK(std::isnan(acc.class_iou(0)));
    CHECK(acc.miou_percent() == 0.0);
  }

  TEST_CASE("mIoU accumulates over the whole set") {
    IouAccumulator acc(2);
    acc.add(std::vector<int>{1, 0}, std::vector<int>{1, 1});
    acc.add(std::vector<int>{1, 1}, std::vector<int>{1, 1});
    // class 1: I = 3, U = 4; class 0: I = 0, U = 1
    CHECK(acc.miou_percent() == doctest::Approx(37.5));
  }

  TEST_CASE("metrics are permutation invariant") {
    Rng rng(4);
    std::vector<int> pred(60), gt(60);
    for (auto& v : pred) v = static_cast<int>(rng.below(3));
    for (auto& v : gt) v = static_cast<int>(rng.below(3));
    const double acc = accuracy_percent(pred, gt);
    std::vector<std::vector<int>> p_img, g_img;
    for (int i = 0; i < 6; ++i) {
      p_img.emplace_back(pred.begin() + 10 * i, pred.begin() + 10 * (i + 1));
      g_img.emplace_back(gt.begin() + 10 * i, gt.begin() + 10 * (i + 1));
    }
    IouAccumulator fwd(3);
    for (int i = 0; i < 6; ++i) fwd.add(p_img[i], g_img[i]);
    std::vector<int> order(60);
    std::iota(order.begin(), order.end(), 0);
    for (int t = 0; t < 10; ++t) {
      for (int i = 59; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
      std::vector<int> p2, g2;
      for (int i : order) p2.push_back(pred[i]), g2.push_back(gt[i]);
      CHECK(accuracy_percent(p2, g2) == acc);
      IouAccumulator rev(3);
      for (int i = 5; i >= 0; --i) rev.add(p_img[i], g_img[i]);
      CHECK(rev.miou_percent() == fwd.miou_percent());
      CHECK(miou_percent(p2, g2, 3) == doctest::Approx(fwd.miou_percent()).epsilon(1e-12));
    }
  }

  TEST_CASE("average precision examples") {
    CHECK(average_precision(std::vector<int>{1, 0, 1}) == doctest::Approx(83.3333333333));
    CHECK(average_precision(std::vector<int>{1, 1, 1}) == 100.0);
    CHECK(average_precision(std::vector<int>{1}) == 100.0);
    CHECK(std::isnan(average_precision(std::vector<int>{0, 0})));
    // Junk entries are dropped before scoring.
    CHECK(average_precision(std::vector<int>{-1, 1, 0, 1}) == doctest::Approx(83.3333333333));
  }

  TEST_CASE("average precision matches the prefix oracle on random patterns") {
    Rng rng(6);
    for (int t = 0; t < 500; ++t) {
      std::vector<int> rel(1 + rng.below(20));
      for (auto& v : rel) v = static_cast<int>(rng.below(3)) - 1;
      const double a = average_precision(rel), b = prefix_ap(rel);
      if (std::isnan(b)) {
        CHECK(std::isnan(a));
      } else {
        CHECK(a == doctest::Approx(b).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("mean average precision ranks by cosine") {
    const std::vector<std::vector<double>> q{{1, 0}}, g{{0.9, 0.1}, {0, 1}, {1, 0.2}};
    const RetrievalScore s = mean_average_precision(q, g, {{1, 0, 0}});
    // Ranking: g0 (cos .994), g2 (.981), g1 (0).
    CHECK(s.map_percent == 100.0);
    CHECK(s.queries_scored == 1);
    const RetrievalScore s2 = mean_average_precision(q, g, {{0, 0, 1}});
    CHECK(s2.map_percent == doctest::Approx(50.0));
    const RetrievalScore none = mean_average_precision(q, g, {{0, 0, 0}});
    CHECK(none.queries_without_relevants == 1);
    CHECK(none.queries_scored == 0);
  }

  TEST_CASE("psnr") {
    const Image a = test::random_quantized(1, 8, 8), b = test::random_quantized(2, 8, 8);
    CHECK(std::isinf(psnr(a, a)));
    CHECK(psnr(a, a) > 0);
    CHECK(psnr(a, b) == psnr(b, a));
    CHECK(psnr_from_mse(6.5025) == doctest::Approx(40.0).epsilon(1e-12));
    CHECK(std::abs(psnr_from_mse(mse_for_psnr(40.0)) - 40.0) < 1e-9);
    Image c(2, 2, 0.2), d(2, 2, 0.2 + 8.0 / 255.0);
    CHECK(mse_255(c, d) == doctest::Approx(64.0));
    CHECK(psnr(c, d) == doctest::Approx(30.0687).epsilon(1e-5));
  }

  TEST_CASE("relative efficiency examples") {
    CHECK(relative_efficiency(7.9, 96.3, 0.0) == doctest::Approx(91.8).epsilon(1e-3));
    CHECK(relative_efficiency(7.5, 80.8, 8.9) == doctest::Approx(101.9).epsilon(1e-3));
    CHECK(relative_efficiency(50.0, 50.0, 10.0) == 0.0);
    CHECK_THROWS_AS(relative_efficiency(1.0, 50.0, 50.0), DegenerateBaseline);
  }

  TEST_CASE("metric records round-trip through CSV and JSON") {
    std::vector<MetricRecord> rs{
        {"ref-vit-d2-e32-p4-s7", Task::classification, "blobs", Condition::clean, "", "accuracy",
         97.0},
        {"m,1", Task::segmentation, "blobs", Condition::transform, "jpeg:50", "mIoU", 0.1 + 0.2},
        {"m", Task::retrieval, "gallery", Condition::taa, "medium", "mAP",
         std::numeric_limits<double>::quiet_NaN()},
        {"m", Task::classification, "blobs", Condition::taa, "", "psnr_db",
         std::numeric_limits<double>::infinity()}};
    auto same = [&](const std::vector<MetricRecord>& back) {
      REQUIRE(back.size() == rs.size());
      for (std::size_t i = 0; i < rs.size(); ++i) {
        CHECK(back[i].model_id == rs[i].model_id);
        CHECK(back[i].detail == rs[i].detail);
        if (std::isnan(rs[i].value))
          CHECK(std::isnan(back[i].value));
        else
          CHECK(back[i].value == rs[i].value);
      }
    };
    same(metrics_from_csv(metrics_to_csv(rs)));
    same(metrics_from_json(metrics_to_json(rs)));
    CHECK(metrics_to_csv(rs).rfind("model_id,task,dataset_id,condition,detail,metric_name,value",
                                   0) == 0);
  }
}

TEST_SUITE("transforms") {
  TEST_CASE("defaults") {
    CHECK(TransformSpec::with_default(TransformName::wiener).parameter == 21);
    CHECK(TransformSpec::with_default(TransformName::blur).parameter == 21);
    CHECK(TransformSpec::with_default(TransformName::jpeg).parameter == 50);
    CHECK(TransformSpec::with_default(TransformName::resize).parameter == 98);
    CHECK(TransformSpec::with_default(TransformName::brightness).parameter == 2);
    CHECK(TransformSpec::with_default(TransformName::contrast).parameter == 2);
    CHECK(TransformSpec::with_default(TransformName::hue).parameter == 0.5);
    CHECK(default_transform_suite().size() == 11u);
    CHECK(TransformSpec::parse("jpeg:30").parameter == 30);
    CHECK(TransformSpec::parse("jpeg").to_string() == "jpeg:50");
    CHECK(TransformSpec::parse("hflip").to_string() == "hflip");
    CHECK_THROWS_AS(TransformSpec::parse("sharpen"), UnsupportedParameter);
  }

  TEST_CASE("geometric identities") {
    const Image x = test::random_quantized(3, 12, 20);
    const auto hflip = TransformSpec::parse("hflip"), vflip = TransformSpec::parse("vflip");
    CHECK(apply_transform(apply_transform(x, hflip), hflip) == x);
    CHECK(apply_transform(apply_transform(x, vflip), vflip) == x);
    CHECK(apply_transform(x, hflip) != x);
    const auto rot = TransformSpec::parse("rotate90:1");
    Image r = x;
    for (int i = 0; i < 4; ++i) r = apply_transform(r, rot);
    CHECK(r == x);
    const Image once = apply_transform(x, rot);
    CHECK(once.height() == 20);
    CHECK(once.width() == 12);
    // Counter-clockwise: the top-right pixel moves to the top-left.
    CHECK(once.at(0, 0, 0) == x.at(0, 19, 0));
    CHECK(apply_transform(x, TransformSpec::parse("rotate90:2")) ==
          apply_transform(once, rot));
  }

  TEST_CASE("grayscale is idempotent") {
    const Image x = test::random_image(4, 8, 8);
    const auto g = TransformSpec::parse("grayscale");
    const Image once = apply_transform(x, g);
    CHECK(apply_transform(once, g) == once);
    for (int c = 1; c < 3; ++c) CHECK(once.at(2, 3, c) == once.at(2, 3, 0));
  }

  TEST_CASE("photometric transforms keep shape and range") {
    const Image x = test::random_quantized(5, 16, 16);
    for (const auto& spec : default_transform_suite()) {
      CAPTURE(spec.to_string());
      const Image y = apply_transform(x, spec);
      if (spec.name != TransformName::rotate90) {
        CHECK(y.height() == 16);
        CHECK(y.width() == 16);
      }
      CHECK(y.in_unit_range());
      CHECK(apply_transform(x, spec) == y);
    }
    const Image flat(8, 8, 0.4);
    CHECK(linf_distance(apply_transform(flat, TransformSpec::parse("blur:5")), flat) < 1e-12);
    CHECK(linf_distance(apply_transform(flat, TransformSpec::parse("wiener:5")), flat) < 1e-12);
    CHECK(linf_distance(apply_transform(flat, TransformSpec::parse("contrast:3")), flat) < 1e-12);
    const Image bright = apply_transform(flat, TransformSpec::parse("brightness:2"));
    CHECK(bright.at(0, 0, 0) == doctest::Approx(0.8));
    CHECK(apply_transform(x, TransformSpec::parse("jpeg:50")) != x);
    Image smooth(16, 16);
    for (int yy = 0; yy < 16; ++yy)
      for (int xx = 0; xx < 16; ++xx)
        for (int c = 0; c < 3; ++c) smooth.at(yy, xx, c) = (yy + xx + 8 * c) / 64.0;
    smooth = quantize(smooth);
    CHECK(linf_distance(apply_transform(smooth, TransformSpec::parse("jpeg:100")), smooth) < 0.05);
  }

  TEST_CASE("unsupported parameters") {
    const Image x = test::random_image(6, 8, 8);
    for (const char* bad : {"jpeg:0", "jpeg:101", "blur:4", "wiener:0", "hue:0.8",
                            "brightness:-1", "resize:0", "rotate90:1.5"})
      CHECK_THROWS_AS(apply_transform(x, TransformSpec::parse(bad)), UnsupportedParameter);
  }

  TEST_CASE("masks follow geometric transforms") {
    const std::vector<int> mask{0, 1, 2, 3, 4, 5};  // 2 x 3
    int h = 2, w = 3;
    auto out = transform_mask(mask, h, w, TransformSpec::parse("hflip"));
    CHECK(out == std::vector<int>{2, 1, 0, 5, 4, 3});
    h = 2, w = 3;
    out = transform_mask(mask, h, w, TransformSpec::parse("rotate90:1"));
    CHECK(h == 3);
    CHECK(w == 2);
    CHECK(out == std::vector<int>{2, 5, 1, 4, 0, 3});
    h = 2, w = 3;
    CHECK(transform_mask(mask, h, w, TransformSpec::parse("jpeg")) == mask);
  }
}

TEST_SUITE("heads") {
  TEST_CASE("separable features reach full training accuracy") {
    const test::PixelBackbone m(2);
    std::vector<LabeledImage> train;
    Rng rng(1);
    for (int i = 0; i < 40; ++i) {
      const int label = i % 2;
      train.push_back(solid_example(label ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.4),
                                    rng.uniform(), label));
    }
    HeadHyperparams hp;
    hp.num_classes = 2;
    hp.agg = AggregationSpec::parse("class_token");
    const TaskHead head = fit_head(m, HeadKind::classifier, train, hp);
    std::vector<int> pred, labels;
    for (const auto& ex : train) {
      pred.push_back(head.classify(m, ex.image));
      labels.push_back(ex.label);
    }
    CHECK(accuracy_percent(pred, labels) == 100.0);
  }

  TEST_CASE("zero epochs predict the prior") {
    const test::PixelBackbone m(2);
    std::vector<LabeledImage> train;
    for (int i = 0; i < 10; ++i) train.push_back(solid_example(0.1 * i, 0.5, i < 7 ? 2 : i % 2));
    HeadHyperparams hp;
    hp.num_classes = 3;
    hp.epochs = 0;
    hp.agg = AggregationSpec::parse("class_token");
    const TaskHead head = fit_head(m, HeadKind::classifier, train, hp);
    for (const auto& ex : train) CHECK(head.classify(m, ex.image) == 2);
  }

  TEST_CASE("too few examples") {
    const test::PixelBackbone m(2);
    std::vector<LabeledImage> train{solid_example(0.1, 0.1, 0), solid_example(0.9, 0.1, 1)};
    HeadHyperparams hp;
    hp.num_classes = 3;
    CHECK_THROWS_AS(fit_head(m, HeadKind::classifier, train, hp), InsufficientData);
  }

  TEST_CASE("segmenter output shape and determinism") {
    const auto m = build_reference_backbone(2, 32, 4, 7);
    std::vector<LabeledImage> train;
    for (int i = 0; i < 4; ++i) {
      LabeledImage li;
      li.image = test::random_image(70 + i, 16, 16);
      li.mask.assign(16 * 16, 0);
      for (int p = 0; p < 128; ++p) li.mask[p] = 1 + (i % 2);
      train.push_back(std::move(li));
    }
    HeadHyperparams hp;
    hp.num_classes = 3;
    hp.epochs = 5;
    hp.kernel_size = 3;
    const TaskHead a = fit_head(*m, HeadKind::segmenter, train, hp);
    const TaskHead b = fit_head(*m, HeadKind::segmenter, train, hp);
    CHECK(a.weight == b.weight);
    for (auto [h, w] : {std::pair{16, 16}, std::pair{8, 24}}) {
      const Image x = test::random_image(80, h, w);
      CHECK(a.logits(*m, x).size() == static_cast<std::size_t>(h * w * 3));
      const auto seg = a.segment(*m, x);
      CHECK(seg.size() == static_cast<std::size_t>(h * w));
      for (int c : seg) CHECK((c >= 0 && c < 3));
    }
  }

  TEST_CASE("softmax") {
    const auto p = softmax(std::vector<double>{1000.0, 1000.0});
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));
  }
}
