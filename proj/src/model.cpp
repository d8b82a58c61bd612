#include "taa/model.hpp"

#include <algorithm>

#include "taa/errors.hpp"

namespace taa {

std::string AggregationSpec::to_string() const {
  const char* reduce =
      reduction == PatchReduction::concat_flatten ? "concat_flatten" : "mean";
  switch (mode) {
    case TokenMode::class_token:
      return "class_token";
    case TokenMode::patch_tokens:
      return std::string("patch_tokens-") + reduce;
    case TokenMode::class_plus_patch:
      return std::string("class_plus_patch-") + reduce;
  }
  return "unknown";
}

AggregationSpec AggregationSpec::parse(const std::string& text) {
  AggregationSpec spec;
  const auto dash = text.find('-');
  const std::string mode = text.substr(0, dash);
  const std::string reduce =
      dash == std::string::npos ? "concat_flatten" : text.substr(dash + 1);
  if (mode == "class_token")
    spec.mode = TokenMode::class_token;
  else if (mode == "patch_tokens")
    spec.mode = TokenMode::patch_tokens;
  else if (mode == "class_plus_patch")
    spec.mode = TokenMode::class_plus_patch;
  else
    throw InvalidArgument("unknown aggregation mode '" + mode + "'");
  if (reduce == "concat_flatten")
    spec.reduction = PatchReduction::concat_flatten;
  else if (reduce == "mean")
    spec.reduction = PatchReduction::mean;
  else
    throw InvalidArgument("unknown patch reduction '" + reduce + "'");
  if (spec.mode == TokenMode::class_token)
    spec.reduction = PatchReduction::concat_flatten;
  return spec;
}

std::size_t aggregated_dim(int embed_dim, int num_patches,
                           const AggregationSpec& agg) {
  const std::size_t d = embed_dim;
  const std::size_t patch = agg.reduction == PatchReduction::concat_flatten
                                ? d * num_patches
                                : d;
  switch (agg.mode) {
    case TokenMode::class_token:
      return d;
    case TokenMode::patch_tokens:
      return patch;
    case TokenMode::class_plus_patch:
      return d + patch;
  }
  return 0;
}

FeatureVector aggregate(const TokenSet& tokens, const AggregationSpec& agg) {
  const int d = tokens.embed_dim;
  const int n = tokens.num_patches;
  FeatureVector z;
  z.reserve(aggregated_dim(d, n, agg));
  if (agg.mode != TokenMode::patch_tokens)
    z.insert(z.end(), tokens.class_token.begin(), tokens.class_token.end());
  if (agg.mode == TokenMode::class_token) return z;
  if (agg.reduction == PatchReduction::concat_flatten) {
    z.insert(z.end(), tokens.patch_tokens.begin(), tokens.patch_tokens.end());
  } else {
    std::vector<double> mean(d, 0.0);
    for (int i = 0; i < n; ++i) {
      const auto p = tokens.patch(i);
      for (int k = 0; k < d; ++k) mean[k] += p[k];
    }
    for (double& v : mean) v /= n;
    z.insert(z.end(), mean.begin(), mean.end());
  }
  return z;
}

void aggregate_backward(std::span<const double> grad_z,
                        const AggregationSpec& agg, int embed_dim,
                        int num_patches, std::span<double> grad_class,
                        std::span<double> grad_patches) {
  if (grad_z.size() != aggregated_dim(embed_dim, num_patches, agg))
    throw DimensionMismatch("aggregate_backward: gradient length mismatch");
  std::size_t offset = 0;
  if (agg.mode != TokenMode::patch_tokens) {
    for (int k = 0; k < embed_dim; ++k) grad_class[k] += grad_z[k];
    offset = embed_dim;
  }
  if (agg.mode == TokenMode::class_token) return;
  if (agg.reduction == PatchReduction::concat_flatten) {
    for (std::size_t i = 0; i < grad_patches.size(); ++i)
      grad_patches[i] += grad_z[offset + i];
  } else {
    const double inv = 1.0 / num_patches;
    for (int i = 0; i < num_patches; ++i)
      for (int k = 0; k < embed_dim; ++k)
        grad_patches[static_cast<std::size_t>(i) * embed_dim + k] +=
            grad_z[offset + k] * inv;
  }
}

void Backbone::check_input(const Image& image, int layer) const {
  const int p = info_.patch_size;
  if (image.height() <= 0 || image.width() <= 0 || image.height() % p != 0 ||
      image.width() % p != 0)
    throw IncompatibleImageSize(
        std::to_string(image.height()) + "x" + std::to_string(image.width()) +
        " is not divisible by patch size " + std::to_string(p));
  if (layer < 1 || layer > info_.num_layers)
    throw LayerOutOfRange("layer " + std::to_string(layer) +
                          " outside [1, " + std::to_string(info_.num_layers) +
                          "]");
}

FeatureVector Backbone::forward_features(const Image& image, int layer,
                                         const AggregationSpec& agg) const {
  return aggregate(tokens(image, layer), agg);
}

InputGradient Backbone::input_gradient(const Image&, int,
                                       const AggregationSpec&,
                                       const FeatureLoss&) const {
  throw GradientUnavailable(info_.model_id +
                            " is inference-only (transfer target)");
}

std::size_t Backbone::feature_dim(const Image& image,
                                  const AggregationSpec& agg) const {
  const int p = info_.patch_size;
  return aggregated_dim(info_.embed_dim,
                        (image.height() / p) * (image.width() / p), agg);
}

namespace {
BackboneInfo inference_only_info(const BackboneHandle& inner) {
  if (!inner) throw InvalidArgument("null backbone");
  BackboneInfo info = inner->info();
  info.model_id = "blackbox:" + info.model_id;
  info.gradient_capable = false;
  return info;
}
}  // namespace

InferenceOnlyBackbone::InferenceOnlyBackbone(BackboneHandle inner)
    : Backbone(inference_only_info(inner)), inner_(std::move(inner)) {}

TokenSet InferenceOnlyBackbone::tokens(const Image& image, int layer) const {
  return inner_->tokens(image, layer);
}

}  // namespace taa
