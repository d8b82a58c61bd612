#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "taa/model.hpp"

namespace taa {

enum class HeadKind { classifier, segmenter };

struct LabeledImage {
  Image image;
  int label = -1;         // image-level class
  std::vector<int> mask;  // per-pixel class, H x W (empty if unlabeled)
};

struct HeadHyperparams {
  int num_classes = 0;
  int epochs = 150;
  double learning_rate = 0.05;
  double weight_decay = 1e-2;
  int batch_size = 0;  // 0 = full batch
  int layer = 0;       // 0 = final layer
  // Classifier input; the segmenter always reads class+patch tokens.
  AggregationSpec agg{TokenMode::class_plus_patch, PatchReduction::mean};
  int kernel_size = 1;  // segmenter convolution, odd
  std::uint64_t seed = 0;
};

struct ImageGeometry {
  int height = 0;
  int width = 0;
  int patch_size = 0;
  int grid_h() const { return height / patch_size; }
  int grid_w() const { return width / patch_size; }
};

// Downstream head trained on frozen backbone features.
//   classifier: one linear layer on the aggregated feature (standardized).
//   segmenter:  CLS token concatenated to every patch token, bicubic
//               upsampling to image resolution, one 2-D convolution to
//               per-pixel class logits.
struct TaskHead {
  HeadKind kind = HeadKind::classifier;
  int num_classes = 0;
  int layer = 0;  // resolved, 1-based
  AggregationSpec agg;
  int embed_dim = 0;
  int kernel_size = 1;
  std::vector<double> in_mean;   // per input dimension / channel
  std::vector<double> in_scale;  // 1 / stddev
  std::vector<double> weight;    // classifier [C x dim]; segmenter [C x 2D x k x k]
  std::vector<double> bias;      // [C]

  // Logits from the aggregated features this head reads: C values for a
  // classifier, H x W x C for a segmenter.
  std::vector<double> forward(std::span<const double> z,
                              const ImageGeometry& geom) const;
  // dloss/dz given dloss/dlogits.
  std::vector<double> backward(std::span<const double> grad_logits,
                               const ImageGeometry& geom) const;

  std::vector<double> logits(const Backbone& model, const Image& image) const;
  int classify(const Backbone& model, const Image& image) const;
  std::vector<int> segment(const Backbone& model, const Image& image) const;
};

TaskHead fit_head(const Backbone& model, HeadKind kind,
                  std::span<const LabeledImage> train_set,
                  const HeadHyperparams& params);

// Index of the largest value; ties go to the lowest index.
int argmax(std::span<const double> values);
std::vector<double> softmax(std::span<const double> logits);

}  // namespace taa
