#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "taa/image.hpp"
#include "taa/model.hpp"
#include "taa/rng.hpp"

namespace taa::test {

inline Image random_image(std::uint64_t seed, int h = 32, int w = 32) {
  Rng rng(seed);
  Image img(h, w);
  for (double& v : img.data()) v = rng.uniform();
  return img;
}

inline Image random_quantized(std::uint64_t seed, int h = 32, int w = 32) {
  return quantize(random_image(seed, h, w));
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("taa-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::filesystem::path path_;
};

// Features read straight from pixel (0, 0): class token = 4 * rgb[0..D),
// every patch token equal to the class token plus its patch index.
class PixelBackbone final : public Backbone {
 public:
  explicit PixelBackbone(int dim = 2)
      : Backbone(BackboneInfo{"pixel", 4, dim, 1, {}, false}) {}
  TokenSet tokens(const Image& image, int layer) const override {
    check_input(image, layer);
    const int D = info().embed_dim;
    TokenSet t;
    t.layer_index = layer;
    t.embed_dim = D;
    t.num_patches = (image.height() / 4) * (image.width() / 4);
    for (int d = 0; d < D; ++d) t.class_token.push_back(4.0 * image.at(0, 0, d % 3));
    for (int p = 0; p < t.num_patches; ++p)
      for (int d = 0; d < D; ++d) t.patch_tokens.push_back(t.class_token[d] + p);
    return t;
  }
};

}  // namespace taa::test
