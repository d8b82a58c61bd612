#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "taa/errors.hpp"
#include "taa/feature_stats.hpp"
#include "taa/vit.hpp"

using namespace taa;

namespace {

const AggregationSpec kClass{TokenMode::class_token, PatchReduction::mean};
const AggregationSpec kPatchConcat{TokenMode::patch_tokens, PatchReduction::concat_flatten};

Image solid(double v) { return Image(4, 4, v); }

CenteredFeature raw(std::vector<double> v) {
  CenteredFeature f;
  double s = 0;
  for (double x : v) s += x * x;
  f.norm = std::sqrt(s);
  f.z_tilde = std::move(v);
  return f;
}

}  // namespace

TEST_SUITE("feature_stats") {
  TEST_CASE("mean of two features") {
    const test::PixelBackbone m;
    const std::vector<Image> xs{solid(0.25), solid(0.75)};
    const MeanVector mu = estimate_mean(m, xs, 1, kClass, "toy");
    CHECK(mu.mu == std::vector<double>{2.0, 2.0});
    CHECK(mu.sample_count == 2);
    CHECK(mu.dataset_id == "toy");
    CHECK(mu.layer == 1);
  }

  TEST_CASE("mean of a single image is its feature") {
    const auto m = build_reference_backbone(2, 32, 4, 7);
    const Image x = test::random_image(21);
    const std::vector<Image> xs{x};
    CHECK(estimate_mean(*m, xs, 2, kPatchConcat).mu == m->forward_features(x, 2, kPatchConcat));
  }

  TEST_CASE("mean over 16 images matches an extended-precision oracle") {
    const auto m = build_reference_backbone(2, 32, 4, 7);
    std::vector<Image> xs;
    for (int i = 0; i < 16; ++i) xs.push_back(test::random_image(100 + i));
    const MeanVector mu = estimate_mean(*m, xs, 2, kPatchConcat);
    std::vector<long double> acc(mu.mu.size(), 0.0L);
    for (const auto& x : xs) {
      const auto z = m->forward_features(x, 2, kPatchConcat);
      for (std::size_t i = 0; i < z.size(); ++i) acc[i] += z[i];
    }
    double worst = 0;
    for (std::size_t i = 0; i < acc.size(); ++i) {
      const long double ref = acc[i] / 16.0L;
      const double denom = std::max(1e-12, static_cast<double>(std::fabs(ref)));
      worst = std::max(worst, static_cast<double>(std::fabs(mu.mu[i] - ref)) / denom);
    }
    CHECK(worst < 1e-6);
  }

  TEST_CASE("empty training set is rejected") {
    const test::PixelBackbone m;
    CHECK_THROWS_AS(estimate_mean(m, std::span<const Image>{}, 1, kClass), EmptyTrainingSet);
  }

  TEST_CASE("centering examples") {
    const std::vector<double> z{3, 4}, mu{1, 2}, zero{0, 0};
    CHECK(center(z, mu).z_tilde == std::vector<double>{2, 2});
    CHECK(center(z, mu).norm == doctest::Approx(std::sqrt(8.0)));
    CHECK(center(z, zero).z_tilde == z);
    const auto same = center(z, z);
    CHECK(same.z_tilde == zero);
    CHECK(same.norm == 0.0);
    CHECK_THROWS_AS(center(z, std::vector<double>{1, 2, 3}), DimensionMismatch);
  }

  TEST_CASE("cosine examples") {
    CHECK(cosine_loss(raw({1, 2, 3}), raw({1, 2, 3})) == doctest::Approx(1.0));
    CHECK(cosine_loss(raw({1, 0}), raw({0, 1})) == 0.0);
    const std::vector<double> mu{1, 2};
    const double c = cosine_loss(center(std::vector<double>{3, 4}, mu),
                                 center(std::vector<double>{1, 0}, mu));
    CHECK(c == doctest::Approx(-0.70710678).epsilon(1e-8));
    CHECK_THROWS_AS(cosine_loss(raw({0, 0}), raw({1, 0})), DegenerateFeature);
    CHECK_THROWS_AS(cosine_loss(raw({1e-13, 0}), raw({1, 0})), DegenerateFeature);
  }

  TEST_CASE("cosine properties over random vectors") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> u(7), v(7);
      for (auto& x : u) x = rng.normal();
      for (auto& x : v) x = rng.normal();
      const double base = cosine_loss(raw(u), raw(v));
      CHECK(base >= -1.0);
      CHECK(base <= 1.0);
      CHECK(cosine_loss(raw(v), raw(u)) == base);
      const double a = rng.uniform(0.1, 10), b = rng.uniform(0.1, 10);
      auto us = u, vs = v;
      for (auto& x : us) x *= a;
      for (auto& x : vs) x *= b;
      CHECK(cosine_loss(raw(us), raw(vs)) == doctest::Approx(base).epsilon(1e-12));
      // Zero mean leaves the uncentered cosine untouched.
      const std::vector<double> zero(7, 0.0);
      std::vector<double> g(7);
      CHECK(cosine_loss(center(u, zero), center(v, zero)) ==
            std::clamp(cosine_with_grad(u, v, g), -1.0, 1.0));
    }
  }

  TEST_CASE("parallel vectors stay inside the bounds") {
    std::vector<double> u(1000, 0.1);
    CHECK(cosine_loss(raw(u), raw(u)) <= 1.0);
    auto neg = u;
    for (auto& x : neg) x = -x;
    CHECK(cosine_loss(raw(u), raw(neg)) >= -1.0);
  }

  TEST_CASE("zero mean vector") {
    const MeanVector z = MeanVector::zeros(5, "m", 2, kClass);
    CHECK(z.mu == std::vector<double>(5, 0.0));
    CHECK(z.sample_count >= 1);
  }

  TEST_CASE("mean file round trip") {
    test::TempDir dir("mean");
    const auto m = build_reference_backbone(2, 32, 4, 7);
    std::vector<Image> xs{test::random_image(31), test::random_image(32)};
    const MeanVector mu = estimate_mean(*m, xs, 2, kClass, "blobs:train");
    const std::string name = mean_filename(m->model_id(), 2, kClass);
    CHECK(name == "mean-ref-vit-d2-e32-p4-s7-L2-class_token.bin");
    save_mean(mu, dir / name);
    const MeanVector back = load_mean(dir / name);
    CHECK(back.model_id == mu.model_id);
    CHECK(back.layer == 2);
    CHECK(back.agg == kClass);
    CHECK(back.sample_count == 2);
    CHECK(back.dataset_id == "blobs:train");
    REQUIRE(back.mu.size() == mu.mu.size());
    for (std::size_t i = 0; i < mu.mu.size(); ++i)
      CHECK(back.mu[i] == static_cast<double>(static_cast<float>(mu.mu[i])));
    CHECK_THROWS_AS(load_mean(dir / "absent.bin"), IoFailure);
  }
}
