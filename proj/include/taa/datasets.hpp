#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "taa/heads.hpp"
#include "taa/image.hpp"

namespace taa {

// Seeded synthetic scenes: one pastel object per image on a near-gray,
// noisy background. The object color family gives the image-level class;
// the mask labels background as 0 and object pixels as class + 1.
struct BlobsSpec {
  std::string id = "blobs";
  int image_size = 32;
  int num_classes = 4;
  int train_count = 640;
  int eval_count = 100;
  std::uint64_t seed = 0;
  double noise = 0.01;
};

struct LabeledDataset {
  std::string id;
  int num_classes = 0;      // image-level classes
  int num_seg_classes = 0;  // mask classes (background included)
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> eval;
};

LabeledImage make_blob_image(const BlobsSpec& spec, std::uint64_t index);
LabeledDataset make_blobs(const BlobsSpec& spec);

// Groups of near-duplicate scenes. Gallery members are easy (small shift) or
// hard (larger shift, color and brightness change) variants of a group
// prototype; one query per group. Relevance tiers mirror the revisited
// landmark protocol: Easy counts easy variants and ignores hard ones,
// Medium counts both, Hard counts hard variants and ignores easy ones.
struct GallerySpec {
  std::string id = "gallery";
  int image_size = 32;
  int groups = 6;
  int per_group = 4;  // alternating easy / hard
  std::uint64_t seed = 0;
};

struct RetrievalDataset {
  std::string id;
  std::vector<Image> queries;
  std::vector<Image> gallery;
  std::vector<int> gallery_group;
  std::vector<bool> gallery_hard;
  // tier name -> relevance[q][g] in {1, 0, -1 (junk)}
  std::map<std::string, std::vector<std::vector<int>>> relevance;
};

RetrievalDataset make_gallery(const GallerySpec& spec);

}  // namespace taa
