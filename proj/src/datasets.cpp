#include "taa/datasets.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "taa/errors.hpp"
#include "taa/rng.hpp"

namespace taa {

namespace {

using Rgb = std::array<double, 3>;

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Rgb rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  for (double& ch : rgb) ch += m;
  return rgb;
}

struct Background {
  Rgb base;
  double gx, gy;
};

Background random_background(Rng& rng) {
  // Near-gray base with a slight tint and a luminance gradient.
  Background bg;
  const double gray = rng.uniform(0.45, 0.55);
  for (double& b : bg.base) b = gray + rng.uniform(-0.02, 0.02);
  bg.gx = rng.uniform(-0.03, 0.03);
  bg.gy = rng.uniform(-0.03, 0.03);
  return bg;
}

double background_at(const Background& bg, int c, double u, double v) {
  return bg.base[c] + bg.gx * (u - 0.5) + bg.gy * (v - 0.5);
}

}  // namespace

LabeledImage make_blob_image(const BlobsSpec& spec, std::uint64_t index) {
  Rng rng(derive_seed(spec.seed, "blobs:" + spec.id, index));
  const int n = spec.image_size;
  LabeledImage out;
  out.label = static_cast<int>(rng.below(spec.num_classes));
  out.image = Image(n, n);
  out.mask.assign(static_cast<std::size_t>(n) * n, 0);

  const Background bg = random_background(rng);
  const double hue = static_cast<double>(out.label) / spec.num_classes +
                     rng.uniform(-0.04, 0.04);
  const Rgb color = hsv_to_rgb(hue, rng.uniform(0.25, 0.35), rng.uniform(0.6, 0.7));
  const double cx = rng.uniform(0.4, 0.6) * n;
  const double cy = rng.uniform(0.4, 0.6) * n;
  const double rx = rng.uniform(0.22, 0.3) * n;
  const double ry = rng.uniform(0.22, 0.3) * n;

  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double dx = (x + 0.5 - cx) / rx;
      const double dy = (y + 0.5 - cy) / ry;
      const bool inside = dx * dx + dy * dy <= 1.0;
      if (inside) out.mask[static_cast<std::size_t>(y) * n + x] = out.label + 1;
      for (int c = 0; c < 3; ++c) {
        const double base = inside ? color[c]
                                   : background_at(bg, c, (x + 0.5) / n, (y + 0.5) / n);
        out.image.at(y, x, c) = std::clamp(base + spec.noise * rng.normal(), 0.0, 1.0);
      }
    }
  out.image = quantize(out.image);
  return out;
}

LabeledDataset make_blobs(const BlobsSpec& spec) {
  if (spec.image_size <= 0 || spec.num_classes < 1 || spec.train_count < 0 ||
      spec.eval_count < 0)
    throw InvalidArgument("invalid blobs dataset spec");
  LabeledDataset ds;
  ds.id = spec.id;
  ds.num_classes = spec.num_classes;
  ds.num_seg_classes = spec.num_classes + 1;
  for (int i = 0; i < spec.train_count; ++i) ds.train.push_back(make_blob_image(spec, i));
  // Evaluation images come from a disjoint index range.
  for (int i = 0; i < spec.eval_count; ++i)
    ds.eval.push_back(make_blob_image(spec, 1'000'000 + i));
  return ds;
}

namespace {

struct Scene {
  Background bg;
  struct Disk {
    double cx, cy, r;
    Rgb color;
  };
  std::vector<Disk> disks;
};

Image render_scene(const Scene& scene, int n, double shift_x, double shift_y,
                   double brightness, double channel_mix, Rng& noise) {
  Image img(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      Rgb px;
      for (int c = 0; c < 3; ++c)
        px[c] = background_at(scene.bg, c, (x + 0.5) / n, (y + 0.5) / n);
      for (const auto& d : scene.disks) {
        const double dx = x + 0.5 - (d.cx + shift_x);
        const double dy = y + 0.5 - (d.cy + shift_y);
        if (dx * dx + dy * dy <= d.r * d.r) px = d.color;
      }
      // Hard variants mix a fraction of the neighbouring channel in.
      for (int c = 0; c < 3; ++c) {
        const double v = ((1.0 - channel_mix) * px[c] + channel_mix * px[(c + 1) % 3]) *
                         brightness;
        img.at(y, x, c) = std::clamp(v + 0.02 * noise.normal(), 0.0, 1.0);
      }
    }
  return quantize(img);
}

}  // namespace

RetrievalDataset make_gallery(const GallerySpec& spec) {
  if (spec.groups < 1 || spec.per_group < 1 || spec.image_size <= 0)
    throw InvalidArgument("invalid gallery spec");
  RetrievalDataset ds;
  ds.id = spec.id;
  const int n = spec.image_size;
  std::vector<Scene> scenes;
  for (int g = 0; g < spec.groups; ++g) {
    Rng rng(derive_seed(spec.seed, "gallery-scene:" + spec.id, g));
    Scene s;
    s.bg = random_background(rng);
    const int count = 2 + static_cast<int>(rng.below(2));
    for (int k = 0; k < count; ++k)
      s.disks.push_back({rng.uniform(0.2, 0.8) * n, rng.uniform(0.2, 0.8) * n,
                         rng.uniform(0.12, 0.25) * n,
                         hsv_to_rgb(rng.uniform(), rng.uniform(0.5, 0.9),
                                    rng.uniform(0.5, 0.9))});
    scenes.push_back(std::move(s));
  }
  for (int g = 0; g < spec.groups; ++g) {
    Rng rng(derive_seed(spec.seed, "gallery-variants:" + spec.id, g));
    ds.queries.push_back(render_scene(scenes[g], n, rng.uniform(-1, 1),
                                      rng.uniform(-1, 1), 1.0, 0.0, rng));
    for (int k = 0; k < spec.per_group; ++k) {
      const bool hard = k % 2 == 1;
      const double shift = hard ? 0.15 * n : 0.05 * n;
      ds.gallery.push_back(render_scene(
          scenes[g], n, rng.uniform(-shift, shift), rng.uniform(-shift, shift),
          hard ? rng.uniform(0.75, 1.2) : 1.0, hard ? rng.uniform(0.05, 0.25) : 0.0,
          rng));
      ds.gallery_group.push_back(g);
      ds.gallery_hard.push_back(hard);
    }
  }
  const std::size_t nq = ds.queries.size();
  const std::size_t ng = ds.gallery.size();
  for (const char* tier : {"easy", "medium", "hard"}) {
    std::vector<std::vector<int>> rel(nq, std::vector<int>(ng, 0));
    for (std::size_t q = 0; q < nq; ++q)
      for (std::size_t i = 0; i < ng; ++i) {
        if (ds.gallery_group[i] != static_cast<int>(q)) continue;
        const bool hard = ds.gallery_hard[i];
        const std::string t = tier;
        if (t == "easy") rel[q][i] = hard ? -1 : 1;
        else if (t == "medium") rel[q][i] = 1;
        else rel[q][i] = hard ? 1 : -1;
      }
    ds.relevance[tier] = std::move(rel);
  }
  return ds;
}

}  // namespace taa
