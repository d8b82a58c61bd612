#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taa/model.hpp"

namespace taa {

struct ReferenceVitConfig {
  int depth = 2;
  int embed_dim = 32;
  int patch_size = 4;
  std::uint64_t seed = 7;
  int mlp_ratio = 4;
  // Learned position embeddings cover a max_grid x max_grid patch grid.
  int max_grid = 32;
  // Weight-init gains (stddev multipliers over 1/sqrt(fan_in)).
  double embed_gain = 2.0;
  double qkv_gain = 2.0;
  double proj_gain = 1.0;
  double fc1_gain = 1.5;
  double fc2_gain = 1.0;
  double pos_scale = 0.5;
};

// Small pre-norm ViT (patch embedding, learned position embeddings, class
// token, multi-head attention + GELU MLP blocks) with weights drawn
// deterministically from the seed. Supports exact input gradients.
class ReferenceVit final : public Backbone {
 public:
  explicit ReferenceVit(const ReferenceVitConfig& config);

  TokenSet tokens(const Image& image, int layer) const override;
  InputGradient input_gradient(const Image& image, int layer,
                               const AggregationSpec& agg,
                               const FeatureLoss& loss) const override;

  const ReferenceVitConfig& config() const { return config_; }
  int num_heads() const { return num_heads_; }

  struct Linear {
    int in = 0;
    int out = 0;
    std::vector<double> weight;  // [out x in]
    std::vector<double> bias;    // [out]
  };
  struct LayerNorm {
    std::vector<double> gamma;
    std::vector<double> beta;
  };
  struct Block {
    LayerNorm norm1;
    Linear qkv;  // D -> 3D
    Linear proj;
    LayerNorm norm2;
    Linear fc1;
    Linear fc2;
  };

 private:
  struct Trace;
  Trace run(const Image& image, int layer, bool keep) const;

  ReferenceVitConfig config_;
  int num_heads_ = 1;
  Linear patch_embed_;
  std::vector<double> class_token_;
  std::vector<double> pos_embed_;  // [(1 + max_grid^2) x D]
  std::vector<Block> blocks_;
};

// Canonical id: ref-vit-d{depth}-e{dim}-p{patch}-s{seed}.
std::string reference_model_id(int depth, int embed_dim, int patch_size,
                               std::uint64_t seed);

BackboneHandle build_reference_backbone(int depth, int embed_dim,
                                        int patch_size, std::uint64_t seed);

}  // namespace taa
