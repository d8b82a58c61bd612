#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "taa/model.hpp"

namespace taa {

// Empirical mean of aggregated features over a set of training images.
struct MeanVector {
  std::vector<double> mu;
  int sample_count = 0;
  std::string dataset_id;
  std::string model_id;
  int layer = 0;
  AggregationSpec agg;

  // Mean with every coordinate zero; centering with it is the identity.
  static MeanVector zeros(std::size_t dim, std::string model_id, int layer,
                          AggregationSpec agg);
};

struct CenteredFeature {
  std::vector<double> z_tilde;
  double norm = 0.0;
};

// No gradient flows through the estimate.
MeanVector estimate_mean(const Backbone& model, std::span<const Image> images,
                         int layer, const AggregationSpec& agg,
                         std::string dataset_id = "unspecified");

CenteredFeature center(std::span<const double> z, const MeanVector& mu);
CenteredFeature center(std::span<const double> z, std::span<const double> mu);

inline constexpr double kDegenerateNorm = 1e-12;

// Cosine similarity of two centered features, clamped to [-1, 1].
// Throws DegenerateFeature when either norm is below kDegenerateNorm.
double cosine_loss(const CenteredFeature& a, const CenteredFeature& b);

// Unclamped cosine and its gradient w.r.t. `u` (written into grad_u).
double cosine_with_grad(std::span<const double> u, std::span<const double> v,
                        std::span<double> grad_u);

// Binary layout: "TAAMEAN1", u32 LE header length, JSON header
// {model_id, layer, agg, N_T, dataset_id, dim}, then dim float32 LE values.
std::string mean_filename(const std::string& model_id, int layer,
                          const AggregationSpec& agg);
void save_mean(const MeanVector& mean, const std::filesystem::path& path);
MeanVector load_mean(const std::filesystem::path& path);

}  // namespace taa
