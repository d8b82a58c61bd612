#include "taa/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "taa/errors.hpp"
#include "taa/resample.hpp"
#include "taa/rng.hpp"

namespace taa {

int argmax(std::span<const double> values) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

namespace {

// Standardized segmenter input grid [gh x gw x 2D]: patch token, then CLS.
std::vector<double> segmenter_grid(const TaskHead& head,
                                   std::span<const double> z, int num_patches) {
  const int d = head.embed_dim;
  const int ch = 2 * d;
  if (z.size() != static_cast<std::size_t>(d) * (num_patches + 1))
    throw DimensionMismatch("segmenter expects class+patch concatenated tokens");
  std::vector<double> grid(static_cast<std::size_t>(num_patches) * ch);
  for (int i = 0; i < num_patches; ++i) {
    double* dst = grid.data() + static_cast<std::size_t>(i) * ch;
    for (int k = 0; k < d; ++k) {
      dst[k] = (z[d + static_cast<std::size_t>(i) * d + k] - head.in_mean[k]) * head.in_scale[k];
      dst[d + k] = (z[k] - head.in_mean[d + k]) * head.in_scale[d + k];
    }
  }
  return grid;
}

struct SegOps {
  const TaskHead& head;
  ImageGeometry geom;
  std::vector<double> ry, rx;

  SegOps(const TaskHead& h, const ImageGeometry& g)
      : head(h), geom(g),
        ry(bicubic_matrix(g.height, g.grid_h())),
        rx(bicubic_matrix(g.width, g.grid_w())) {}

  int channels() const { return 2 * head.embed_dim; }
  int ks() const { return head.kernel_size; }
  double w(int k, int ch, int dy, int dx) const {
    return head.weight[((static_cast<std::size_t>(k) * channels() + ch) * ks() + dy) * ks() + dx];
  }

  std::vector<double> upsample(const std::vector<double>& grid, int c) const {
    return resample_separable(grid, geom.grid_h(), geom.grid_w(), c, ry,
                              geom.height, rx, geom.width);
  }
  std::vector<double> downsample_t(const std::vector<double>& full, int c) const {
    return resample_separable_transpose(full, geom.height, geom.width, c, ry,
                                        geom.grid_h(), rx, geom.grid_w());
  }

  // Per-pixel logits [H x W x C] from a standardized grid.
  std::vector<double> forward(const std::vector<double>& grid) const {
    const int C = head.num_classes;
    const int ch = channels();
    if (ks() == 1) {
      // A 1x1 convolution commutes with per-channel upsampling.
      const int np = geom.grid_h() * geom.grid_w();
      std::vector<double> small(static_cast<std::size_t>(np) * C);
      for (int i = 0; i < np; ++i)
        for (int k = 0; k < C; ++k) {
          double acc = head.bias[k];
          const double* f = grid.data() + static_cast<std::size_t>(i) * ch;
          const double* wk = head.weight.data() + static_cast<std::size_t>(k) * ch;
          for (int c = 0; c < ch; ++c) acc += wk[c] * f[c];
          small[static_cast<std::size_t>(i) * C + k] = acc;
        }
      return upsample(small, C);
    }
    const std::vector<double> up = upsample(grid, ch);
    const int H = geom.height, W = geom.width, r = ks() / 2;
    std::vector<double> out(static_cast<std::size_t>(H) * W * C);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int k = 0; k < C; ++k) {
          double acc = head.bias[k];
          for (int dy = 0; dy < ks(); ++dy) {
            const int yy = y + dy - r;
            if (yy < 0 || yy >= H) continue;
            for (int dx = 0; dx < ks(); ++dx) {
              const int xx = x + dx - r;
              if (xx < 0 || xx >= W) continue;
              const double* f = up.data() + (static_cast<std::size_t>(yy) * W + xx) * ch;
              for (int c = 0; c < ch; ++c) acc += w(k, c, dy, dx) * f[c];
            }
          }
          out[(static_cast<std::size_t>(y) * W + x) * C + k] = acc;
        }
    return out;
  }

  // Backward from per-pixel logit gradients. Accumulates weight/bias
  // gradients when the pointers are non-null and returns the grid gradient.
  std::vector<double> backward(const std::vector<double>& grid,
                               const std::vector<double>& dlogits,
                               std::vector<double>* dweight,
                               std::vector<double>* dbias) const {
    const int C = head.num_classes;
    const int ch = channels();
    if (ks() == 1) {
      const std::vector<double> dsmall = downsample_t(dlogits, C);
      const int np = geom.grid_h() * geom.grid_w();
      std::vector<double> dgrid(static_cast<std::size_t>(np) * ch, 0.0);
      for (int i = 0; i < np; ++i)
        for (int k = 0; k < C; ++k) {
          const double g = dsmall[static_cast<std::size_t>(i) * C + k];
          const double* f = grid.data() + static_cast<std::size_t>(i) * ch;
          const double* wk = head.weight.data() + static_cast<std::size_t>(k) * ch;
          double* df = dgrid.data() + static_cast<std::size_t>(i) * ch;
          if (dbias) (*dbias)[k] += g;
          for (int c = 0; c < ch; ++c) {
            df[c] += g * wk[c];
            if (dweight) (*dweight)[static_cast<std::size_t>(k) * ch + c] += g * f[c];
          }
        }
      return dgrid;
    }
    const std::vector<double> up = upsample(grid, ch);
    const int H = geom.height, W = geom.width, r = ks() / 2;
    std::vector<double> dup(up.size(), 0.0);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int k = 0; k < C; ++k) {
          const double g = dlogits[(static_cast<std::size_t>(y) * W + x) * C + k];
          if (g == 0.0) continue;
          if (dbias) (*dbias)[k] += g;
          for (int dy = 0; dy < ks(); ++dy) {
            const int yy = y + dy - r;
            if (yy < 0 || yy >= H) continue;
            for (int dx = 0; dx < ks(); ++dx) {
              const int xx = x + dx - r;
              if (xx < 0 || xx >= W) continue;
              const std::size_t base = (static_cast<std::size_t>(yy) * W + xx) * ch;
              for (int c = 0; c < ch; ++c) {
                const std::size_t wi =
                    ((static_cast<std::size_t>(k) * ch + c) * ks() + dy) * ks() + dx;
                dup[base + c] += g * head.weight[wi];
                if (dweight) (*dweight)[wi] += g * up[base + c];
              }
            }
          }
        }
    return downsample_t(dup, ch);
  }
};

struct Adam {
  std::vector<double> m, v;
  int t = 0;
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Adam(std::size_t n, double rate) : m(n, 0.0), v(n, 0.0), lr(rate) {}
  void step(std::vector<double>& params, const std::vector<double>& grad) {
    ++t;
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

void standardize_stats(const std::vector<std::vector<double>>& rows, int dim,
                       std::vector<double>& mean, std::vector<double>& scale) {
  mean.assign(dim, 0.0);
  scale.assign(dim, 0.0);
  std::size_t count = 0;
  for (const auto& r : rows) {
    const std::size_t n = r.size() / dim;
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < dim; ++k) mean[k] += r[i * dim + k];
    count += n;
  }
  for (double& m : mean) m /= static_cast<double>(count);
  for (const auto& r : rows) {
    const std::size_t n = r.size() / dim;
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < dim; ++k) {
        const double dv = r[i * dim + k] - mean[k];
        scale[k] += dv * dv;
      }
  }
  for (double& s : scale) {
    const double sd = std::sqrt(s / static_cast<double>(count));
    s = sd > 1e-8 ? 1.0 / sd : 1.0;
  }
}

std::vector<std::size_t> batch_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace

std::vector<double> TaskHead::forward(std::span<const double> z,
                                      const ImageGeometry& geom) const {
  if (kind == HeadKind::classifier) {
    if (z.size() != in_mean.size())
      throw DimensionMismatch("classifier input has wrong dimension");
    const std::size_t dim = z.size();
    std::vector<double> out(num_classes);
    for (int k = 0; k < num_classes; ++k) {
      double acc = bias[k];
      const double* wk = weight.data() + k * dim;
      for (std::size_t i = 0; i < dim; ++i) acc += wk[i] * (z[i] - in_mean[i]) * in_scale[i];
      out[k] = acc;
    }
    return out;
  }
  SegOps ops(*this, geom);
  return ops.forward(segmenter_grid(*this, z, geom.grid_h() * geom.grid_w()));
}

std::vector<double> TaskHead::backward(std::span<const double> grad_logits,
                                       const ImageGeometry& geom) const {
  if (kind == HeadKind::classifier) {
    const std::size_t dim = in_mean.size();
    std::vector<double> dz(dim, 0.0);
    for (int k = 0; k < num_classes; ++k) {
      const double g = grad_logits[k];
      const double* wk = weight.data() + k * dim;
      for (std::size_t i = 0; i < dim; ++i) dz[i] += g * wk[i] * in_scale[i];
    }
    return dz;
  }
  // The grid itself is not needed for the input gradient.
  SegOps ops(*this, geom);
  const int np = geom.grid_h() * geom.grid_w();
  const int d = embed_dim;
  const std::vector<double> placeholder(static_cast<std::size_t>(np) * 2 * d, 0.0);
  const std::vector<double> dgrid = ops.backward(
      placeholder, std::vector<double>(grad_logits.begin(), grad_logits.end()),
      nullptr, nullptr);
  std::vector<double> dz(static_cast<std::size_t>(d) * (np + 1), 0.0);
  for (int i = 0; i < np; ++i) {
    const double* g = dgrid.data() + static_cast<std::size_t>(i) * 2 * d;
    for (int k = 0; k < d; ++k) {
      dz[d + static_cast<std::size_t>(i) * d + k] += g[k] * in_scale[k];
      dz[k] += g[d + k] * in_scale[d + k];
    }
  }
  return dz;
}

std::vector<double> TaskHead::logits(const Backbone& model,
                                     const Image& image) const {
  const FeatureVector z = model.forward_features(image, layer, agg);
  return forward(z, {image.height(), image.width(), model.info().patch_size});
}

int TaskHead::classify(const Backbone& model, const Image& image) const {
  if (kind != HeadKind::classifier) throw InvalidArgument("head is not a classifier");
  return argmax(logits(model, image));
}

std::vector<int> TaskHead::segment(const Backbone& model,
                                   const Image& image) const {
  if (kind != HeadKind::segmenter) throw InvalidArgument("head is not a segmenter");
  const std::vector<double> l = logits(model, image);
  const std::size_t pixels = static_cast<std::size_t>(image.height()) * image.width();
  std::vector<int> pred(pixels);
  for (std::size_t p = 0; p < pixels; ++p)
    pred[p] = argmax(std::span<const double>(l).subspan(p * num_classes, num_classes));
  return pred;
}

TaskHead fit_head(const Backbone& model, HeadKind kind,
                  std::span<const LabeledImage> train_set,
                  const HeadHyperparams& params) {
  const int C = params.num_classes;
  if (C < 2) throw InvalidArgument("a head needs at least two classes");
  if (static_cast<int>(train_set.size()) < C)
    throw InsufficientData("need at least " + std::to_string(C) +
                           " labeled examples, got " + std::to_string(train_set.size()));
  if (params.kernel_size < 1 || params.kernel_size % 2 == 0)
    throw InvalidArgument("segmenter kernel size must be odd and positive");

  TaskHead head;
  head.kind = kind;
  head.num_classes = C;
  head.layer = params.layer <= 0 ? model.num_layers() : params.layer;
  head.embed_dim = model.info().embed_dim;
  head.kernel_size = kind == HeadKind::segmenter ? params.kernel_size : 1;
  head.agg = kind == HeadKind::classifier
                 ? params.agg
                 : AggregationSpec{TokenMode::class_plus_patch, PatchReduction::concat_flatten};

  const int d = head.embed_dim;
  const int patch = model.info().patch_size;
  std::vector<std::vector<double>> feats;
  feats.reserve(train_set.size());
  for (const auto& ex : train_set) {
    if (kind == HeadKind::classifier && (ex.label < 0 || ex.label >= C))
      throw InvalidArgument("training label out of range");
    if (kind == HeadKind::segmenter &&
        ex.mask.size() != static_cast<std::size_t>(ex.image.height()) * ex.image.width())
      throw InvalidArgument("training mask does not match image size");
    feats.push_back(model.forward_features(ex.image, head.layer, head.agg));
  }

  Rng rng(derive_seed(params.seed, "head-training"));
  const std::size_t n = train_set.size();
  const std::size_t batch =
      params.batch_size <= 0 ? n : std::min<std::size_t>(params.batch_size, n);

  if (kind == HeadKind::classifier) {
    const int dim = static_cast<int>(feats.front().size());
    standardize_stats(feats, dim, head.in_mean, head.in_scale);
    head.weight.assign(static_cast<std::size_t>(C) * dim, 0.0);
    std::vector<double> prior(C, 1.0);  // add-one smoothing
    for (const auto& ex : train_set) prior[ex.label] += 1.0;
    const double total = static_cast<double>(n + C);
    head.bias.resize(C);
    for (int k = 0; k < C; ++k) head.bias[k] = std::log(prior[k] / total);

    Adam opt_w(head.weight.size(), params.learning_rate);
    Adam opt_b(C, params.learning_rate);
    std::vector<double> gw(head.weight.size()), gb(C);
    for (int epoch = 0; epoch < params.epochs; ++epoch) {
      const auto order = batch_order(n, rng);
      for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t stop = std::min(n, start + batch);
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t bi = start; bi < stop; ++bi) {
          const std::size_t i = order[bi];
          const auto logits = head.forward(feats[i], {});
          auto p = softmax(logits);
          p[train_set[i].label] -= 1.0;
          for (int k = 0; k < C; ++k) {
            gb[k] += p[k];
            double* g = gw.data() + static_cast<std::size_t>(k) * dim;
            for (int j = 0; j < dim; ++j)
              g[j] += p[k] * (feats[i][j] - head.in_mean[j]) * head.in_scale[j];
          }
        }
        const double inv = 1.0 / static_cast<double>(stop - start);
        for (std::size_t j = 0; j < gw.size(); ++j)
          gw[j] = gw[j] * inv + params.weight_decay * head.weight[j];
        for (double& g : gb) g *= inv;
        opt_w.step(head.weight, gw);
        opt_b.step(head.bias, gb);
      }
    }
    return head;
  }

  // Segmenter: standardize per channel over every patch of every image.
  const int ch = 2 * d;
  std::vector<std::vector<double>> raw_grids;
  raw_grids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int np = static_cast<int>(feats[i].size() / d) - 1;
    std::vector<double> g(static_cast<std::size_t>(np) * ch);
    for (int p = 0; p < np; ++p)
      for (int k = 0; k < d; ++k) {
        g[static_cast<std::size_t>(p) * ch + k] = feats[i][d + static_cast<std::size_t>(p) * d + k];
        g[static_cast<std::size_t>(p) * ch + d + k] = feats[i][k];
      }
    raw_grids.push_back(std::move(g));
  }
  standardize_stats(raw_grids, ch, head.in_mean, head.in_scale);
  std::vector<std::vector<double>> grids;
  grids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int np = static_cast<int>(feats[i].size() / d) - 1;
    grids.push_back(segmenter_grid(head, feats[i], np));
  }
  raw_grids.clear();

  head.weight.assign(static_cast<std::size_t>(C) * ch * head.kernel_size * head.kernel_size, 0.0);
  std::vector<double> prior(C, 1.0);
  double total = C;
  for (const auto& ex : train_set)
    for (int m : ex.mask) {
      if (m < 0 || m >= C) throw InvalidArgument("mask class out of range");
      prior[m] += 1.0;
      total += 1.0;
    }
  head.bias.resize(C);
  for (int k = 0; k < C; ++k) head.bias[k] = std::log(prior[k] / total);

  Adam opt_w(head.weight.size(), params.learning_rate);
  Adam opt_b(C, params.learning_rate);
  std::vector<double> gw(head.weight.size()), gb(C);
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    const auto order = batch_order(n, rng);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      std::size_t pixel_count = 0;
      for (std::size_t bi = start; bi < stop; ++bi) {
        const std::size_t i = order[bi];
        const Image& img = train_set[i].image;
        const ImageGeometry geom{img.height(), img.width(), patch};
        SegOps ops(head, geom);
        std::vector<double> dl = ops.forward(grids[i]);
        const std::size_t pixels = static_cast<std::size_t>(img.height()) * img.width();
        for (std::size_t p = 0; p < pixels; ++p) {
          std::span<double> lp(dl.data() + p * C, C);
          const auto prob = softmax(lp);
          for (int k = 0; k < C; ++k) lp[k] = prob[k];
          lp[train_set[i].mask[p]] -= 1.0;
        }
        pixel_count += pixels;
        ops.backward(grids[i], dl, &gw, &gb);
      }
      const double inv = 1.0 / static_cast<double>(pixel_count);
      for (std::size_t j = 0; j < gw.size(); ++j)
        gw[j] = gw[j] * inv + params.weight_decay * head.weight[j];
      for (double& g : gb) g *= inv;
      opt_w.step(head.weight, gw);
      opt_b.step(head.bias, gb);
    }
  }
  return head;
}

}  // namespace taa
