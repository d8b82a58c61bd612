#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "taa/errors.hpp"
#include "taa/feature_stats.hpp"
#include "taa/registry.hpp"
#include "taa/vit.hpp"

using namespace taa;

namespace {

const AggregationSpec kPatchConcat{TokenMode::patch_tokens, PatchReduction::concat_flatten};
const AggregationSpec kClass{TokenMode::class_token, PatchReduction::mean};

BackboneHandle reference() { return build_reference_backbone(2, 32, 4, 7); }

double rel_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

// Central differences of `f` at a few pixel coordinates spread over the image.
template <class F>
void check_against_fd(const Image& x, const std::vector<double>& grad, F f, double tol) {
  Rng rng(99);
  int agree = 0;
  const int samples = 40;
  for (int s = 0; s < samples; ++s) {
    const std::size_t i = rng.below(x.size());
    Image plus = x, minus = x;
    plus.data()[i] += 1e-4;
    minus.data()[i] -= 1e-4;
    const double fd = (f(plus) - f(minus)) / 2e-4;
    if (rel_error(grad[i], fd) < tol) ++agree;
  }
  CHECK(agree == samples);
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("feature dimensions follow the aggregation") {
    const auto m = reference();
    const Image x = test::random_image(1);
    CHECK(m->forward_features(x, 2, kPatchConcat).size() == 64u * 32u);
    CHECK(m->forward_features(x, 2, kClass).size() == 32u);
    CHECK(m->forward_features(x, 2, AggregationSpec::parse("patch_tokens-mean")).size() == 32u);
    CHECK(m->forward_features(x, 2, AggregationSpec::parse("class_plus_patch-concat_flatten"))
              .size() == 65u * 32u);
    const TokenSet t = m->tokens(x, 1);
    CHECK(t.layer_index == 1);
    CHECK(t.num_patches == 64);
  }

  TEST_CASE("class_plus_patch is the concatenation of class and patch outputs") {
    const auto m = reference();
    const Image x = test::random_image(2);
    for (auto red : {PatchReduction::concat_flatten, PatchReduction::mean}) {
      const auto both = m->forward_features(x, 2, {TokenMode::class_plus_patch, red});
      auto expected = m->forward_features(x, 2, kClass);
      const auto patches = m->forward_features(x, 2, {TokenMode::patch_tokens, red});
      expected.insert(expected.end(), patches.begin(), patches.end());
      CHECK(both == expected);
    }
  }

  TEST_CASE("aggregation names round-trip") {
    for (const char* name : {"class_token", "patch_tokens-concat_flatten", "patch_tokens-mean",
                             "class_plus_patch-concat_flatten", "class_plus_patch-mean"})
      CHECK(AggregationSpec::parse(name).to_string() == name);
    CHECK_THROWS_AS(AggregationSpec::parse("cls"), InvalidArgument);
  }

  TEST_CASE("reference backbone is deterministic per seed") {
    const Image x = test::random_image(3);
    const auto a = build_reference_backbone(2, 32, 4, 7)->forward_features(x, 2, kPatchConcat);
    const auto b = build_reference_backbone(2, 32, 4, 7)->forward_features(x, 2, kPatchConcat);
    const auto c = build_reference_backbone(2, 32, 4, 8)->forward_features(x, 2, kPatchConcat);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(reference_model_id(2, 32, 4, 7) == "ref-vit-d2-e32-p4-s7");
  }

  TEST_CASE("reference backbone preconditions") {
    CHECK_THROWS_AS(build_reference_backbone(0, 32, 4, 7), InvalidArgument);
    CHECK_THROWS_AS(build_reference_backbone(2, 4, 4, 7), InvalidArgument);
    CHECK_THROWS_AS(build_reference_backbone(2, 32, 5, 7), InvalidArgument);
    const auto m = reference();
    CHECK(m->info().gradient_capable);
    CHECK(m->num_layers() == 2);
    CHECK_THROWS_AS(m->forward_features(test::random_image(4, 30, 32), 2, kClass),
                    IncompatibleImageSize);
    CHECK_THROWS_AS(m->forward_features(test::random_image(4), 3, kClass), LayerOutOfRange);
    CHECK_THROWS_AS(m->forward_features(test::random_image(4), 0, kClass), LayerOutOfRange);
  }

  TEST_CASE("final-layer tap equals the default features") {
    const auto m = reference();
    const Image x = test::random_image(5);
    const TokenSet last = m->tokens(x, m->num_layers());
    auto expected = aggregate(last, kPatchConcat);
    CHECK(m->forward_features(x, 2, kPatchConcat) == expected);
    CHECK(m->forward_features(x, 1, kPatchConcat) != expected);
  }

  TEST_CASE("non-square images are supported") {
    const auto m = reference();
    const TokenSet t = m->tokens(test::random_image(6, 16, 24), 2);
    CHECK(t.num_patches == 4 * 6);
    CHECK(t.patch_tokens.size() == 24u * 32u);
  }

  TEST_CASE("gradient of the first feature coordinate matches finite differences") {
    const auto m = reference();
    const Image x = test::random_image(7);
    const InputGradient g = m->input_gradient(
        x, 2, kPatchConcat, [](std::span<const double> z, std::span<double> grad) {
          grad[0] = 1.0;
          return z[0];
        });
    CHECK(g.gradient.size() == x.size());
    check_against_fd(
        x, g.gradient, [&](const Image& y) { return m->forward_features(y, 2, kPatchConcat)[0]; },
        1e-4);
  }

  TEST_CASE("constant loss has an all-zero gradient") {
    const auto m = reference();
    const InputGradient g = m->input_gradient(
        test::random_image(8), 2, kPatchConcat,
        [](std::span<const double>, std::span<double>) { return 3.0; });
    CHECK(g.loss == 3.0);
    CHECK(std::all_of(g.gradient.begin(), g.gradient.end(), [](double v) { return v == 0.0; }));
  }

  TEST_CASE("cosine loss gradient matches finite differences") {
    const auto m = reference();
    const Image x = test::random_image(9);
    const auto target = m->forward_features(test::random_image(10), 1, kClass);
    auto cos = [&](std::span<const double> z, std::span<double> grad) {
      return cosine_with_grad(z, target, grad);
    };
    const InputGradient g = m->input_gradient(x, 1, kClass, cos);
    check_against_fd(
        x, g.gradient,
        [&](const Image& y) {
          const auto z = m->forward_features(y, 1, kClass);
          std::vector<double> scratch(z.size());
          return cosine_with_grad(z, target, scratch);
        },
        1e-4);
  }

  TEST_CASE("inference-only views refuse gradients") {
    const InferenceOnlyBackbone view(reference());
    const Image x = test::random_image(11);
    CHECK_FALSE(view.info().gradient_capable);
    CHECK(view.forward_features(x, 2, kClass) == reference()->forward_features(x, 2, kClass));
    CHECK_THROWS_AS(view.input_gradient(x, 2, kClass,
                                        [](std::span<const double>, std::span<double>) {
                                          return 0.0;
                                        }),
                    GradientUnavailable);
  }
}

TEST_SUITE("registry") {
  TEST_CASE("default registry contains the reference backbone") {
    const auto reg = list_adapters();
    CHECK(reg.resolvable("ref-vit-d2-e32-p4-s7"));
    const auto m = reg.create("ref-vit-d2-e32-p4-s7");
    CHECK(m->model_id() == "ref-vit-d2-e32-p4-s7");
    CHECK(m->info().gradient_capable);
    CHECK(reg.resolvable("ref-vit-d1-e16-p8-s3"));
    CHECK(reg.create("ref-vit-d1-e16-p8-s3")->info().patch_size == 8);
  }

  TEST_CASE("blackbox prefix yields a transfer-only target") {
    const auto m = list_adapters().create("blackbox:ref-vit-d2-e32-p4-s7");
    CHECK_FALSE(m->info().gradient_capable);
  }

  TEST_CASE("duplicate ids are rejected") {
    auto reg = list_adapters();
    AdapterEntry e;
    e.model_id = reg.entries().front().model_id;
    CHECK_THROWS_AS(reg.add(e), DuplicateModel);
    AdapterEntry fresh;
    fresh.model_id = "my-model";
    fresh.available = true;
    fresh.factory = [] { return build_reference_backbone(1, 8, 4, 1); };
    reg.add(fresh);
    CHECK(reg.resolvable("my-model"));
    CHECK_THROWS_AS(reg.add(fresh), DuplicateModel);
  }

  TEST_CASE("external adapters are listed as unavailable") {
    const auto reg = list_adapters();
    const auto& es = reg.entries();
    const auto it = std::find_if(es.begin(), es.end(), [](const AdapterEntry& e) { return !e.available; });
    REQUIRE(it != es.end());
    CHECK_THROWS_AS(reg.create(it->model_id), UnknownModel);
    CHECK(reg.listing().find(it->model_id) != std::string::npos);
  }

  TEST_CASE("unknown ids raise UnknownModel with the listing") {
    try {
      list_adapters().create("no-such-model");
      FAIL("expected UnknownModel");
    } catch (const UnknownModel& e) {
      CHECK(std::string(e.what()).find("ref-vit-d2-e32-p4-s7") != std::string::npos);
    }
  }

  TEST_CASE("reference ids parse") {
    const auto p = parse_reference_id("ref-vit-d3-e24-p8-s11");
    REQUIRE(p);
    CHECK(p->depth == 3);
    CHECK(p->embed_dim == 24);
    CHECK(p->patch_size == 8);
    CHECK(p->seed == 11);
    CHECK_FALSE(parse_reference_id("ref-vit-d3-e24-p8"));
  }
}

TEST_SUITE("image") {
  TEST_CASE("quantization rounds half away from zero") {
    Image x(1, 1, 0.5);
    CHECK(quantize(x).at(0, 0, 0) == 128.0 / 255.0);
    x.at(0, 0, 1) = 1.5;
    x.at(0, 0, 2) = -0.2;
    const Image q = quantize(x);
    CHECK(q.at(0, 0, 1) == 1.0);
    CHECK(q.at(0, 0, 2) == 0.0);
    CHECK(q.quantized());
    CHECK_FALSE(x.quantized());
  }

  TEST_CASE("quantization is idempotent on the grid") {
    const Image q = test::random_quantized(12);
    CHECK(quantize(q) == q);
  }

  TEST_CASE("PNG round trip is bit-exact over 1000 seeded images") {
    test::TempDir dir("png");
    int exact = 0;
    for (int s = 0; s < 1000; ++s) {
      const Image x = test::random_image(1000 + s, 8, 8);
      if (quantize_and_roundtrip(x, dir / "x.png") == quantize(x)) ++exact;
    }
    CHECK(exact == 1000);
  }

  TEST_CASE("write then read is the identity on quantized tensors") {
    test::TempDir dir("png2");
    const Image q = test::random_quantized(13, 12, 20);
    write_png(q, dir / "q.png", {{"k", "v"}});
    CHECK(read_png(dir / "q.png") == q);
    CHECK_THROWS_AS(read_png(dir / "missing.png"), IoFailure);
  }
}
