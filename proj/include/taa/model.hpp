#pragma once

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "taa/image.hpp"

namespace taa {

enum class TokenMode { class_token, patch_tokens, class_plus_patch };
enum class PatchReduction { concat_flatten, mean };

// How the class token and patch tokens of one layer are turned into a single
// feature vector z.
struct AggregationSpec {
  TokenMode mode = TokenMode::patch_tokens;
  PatchReduction reduction = PatchReduction::concat_flatten;

  // The patch reduction is irrelevant for class_token and ignored here.
  bool operator==(const AggregationSpec& o) const {
    return mode == o.mode && (mode == TokenMode::class_token || reduction == o.reduction);
  }

  // "class_token", "patch_tokens-concat_flatten", "class_plus_patch-mean", ...
  std::string to_string() const;
  static AggregationSpec parse(const std::string& text);
};

struct Normalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};
};

struct BackboneInfo {
  std::string model_id;
  int patch_size = 0;
  int embed_dim = 0;
  int num_layers = 0;
  Normalization input_normalization;
  bool gradient_capable = false;
};

// Output tokens of one transformer block.
struct TokenSet {
  int layer_index = 0;  // 1-based
  int embed_dim = 0;
  int num_patches = 0;
  std::vector<double> class_token;   // [embed_dim]
  std::vector<double> patch_tokens;  // [num_patches x embed_dim], row-major

  std::span<const double> patch(int i) const {
    return std::span<const double>(patch_tokens)
        .subspan(static_cast<std::size_t>(i) * embed_dim, embed_dim);
  }
};

using FeatureVector = std::vector<double>;

// Scalar loss over an aggregated feature vector. Writes dloss/dz into `grad`
// (same length as z, zero-initialized by the caller) and returns the loss.
using FeatureLoss =
    std::function<double(std::span<const double> z, std::span<double> grad)>;

struct InputGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // dloss/dpixels, H x W x 3
};

FeatureVector aggregate(const TokenSet& tokens, const AggregationSpec& agg);

std::size_t aggregated_dim(int embed_dim, int num_patches,
                           const AggregationSpec& agg);

// Transposes `aggregate`: scatters dz into token gradients.
void aggregate_backward(std::span<const double> grad_z,
                        const AggregationSpec& agg, int embed_dim,
                        int num_patches, std::span<double> grad_class,
                        std::span<double> grad_patches);

// A vision-transformer backbone seen as a features-and-gradients oracle.
// Implementations are immutable after construction; concurrent calls are
// safe.
class Backbone {
 public:
  explicit Backbone(BackboneInfo info) : info_(std::move(info)) {}
  virtual ~Backbone() = default;

  const BackboneInfo& info() const { return info_; }
  const std::string& model_id() const { return info_.model_id; }
  int num_layers() const { return info_.num_layers; }

  virtual TokenSet tokens(const Image& image, int layer) const = 0;

  FeatureVector forward_features(const Image& image, int layer,
                                 const AggregationSpec& agg) const;

  // Evaluates `loss` on forward_features(image, layer, agg) and returns the
  // loss together with its gradient w.r.t. the [0,1] pixels.
  virtual InputGradient input_gradient(const Image& image, int layer,
                                       const AggregationSpec& agg,
                                       const FeatureLoss& loss) const;

  std::size_t feature_dim(const Image& image, const AggregationSpec& agg) const;

  // Throws IncompatibleImageSize / LayerOutOfRange.
  void check_input(const Image& image, int layer) const;

 private:
  BackboneInfo info_;
};

using BackboneHandle = std::shared_ptr<const Backbone>;

// Wraps a backbone so that it only serves forward passes; used for
// transfer targets that expose no gradients.
class InferenceOnlyBackbone final : public Backbone {
 public:
  explicit InferenceOnlyBackbone(BackboneHandle inner);
  TokenSet tokens(const Image& image, int layer) const override;

 private:
  BackboneHandle inner_;
};

}  // namespace taa
