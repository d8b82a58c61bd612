#include "taa/vit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "taa/errors.hpp"
#include "taa/rng.hpp"

namespace taa {

namespace {

constexpr double kLayerNormEps = 1e-6;
constexpr double kInvSqrt2 = 0.70710678118654752440;

using Linear = ReferenceVit::Linear;
using LayerNorm = ReferenceVit::LayerNorm;

void fill_normal(Rng& rng, std::vector<double>& v, std::size_t n, double mean,
                 double scale) {
  v.resize(n);
  for (double& x : v) x = mean + scale * rng.normal();
}

Linear make_linear(Rng& rng, int in, int out, double gain) {
  Linear l;
  l.in = in;
  l.out = out;
  fill_normal(rng, l.weight, static_cast<std::size_t>(in) * out, 0.0,
              gain / std::sqrt(static_cast<double>(in)));
  fill_normal(rng, l.bias, out, 0.0, 0.02);
  return l;
}

LayerNorm make_norm(Rng& rng, int d) {
  LayerNorm n;
  fill_normal(rng, n.gamma, d, 1.0, 0.1);
  fill_normal(rng, n.beta, d, 0.0, 0.05);
  return n;
}

// y[t] = W x[t] + b for T rows.
void linear_forward(const Linear& l, const double* x, int rows, double* y) {
  for (int t = 0; t < rows; ++t) {
    const double* xr = x + static_cast<std::size_t>(t) * l.in;
    double* yr = y + static_cast<std::size_t>(t) * l.out;
    for (int o = 0; o < l.out; ++o) {
      const double* w = l.weight.data() + static_cast<std::size_t>(o) * l.in;
      double acc = l.bias[o];
      for (int i = 0; i < l.in; ++i) acc += w[i] * xr[i];
      yr[o] = acc;
    }
  }
}

// dx[t] = W^T dy[t] (overwrites dx).
void linear_backward(const Linear& l, const double* dy, int rows, double* dx) {
  std::fill(dx, dx + static_cast<std::size_t>(rows) * l.in, 0.0);
  for (int t = 0; t < rows; ++t) {
    const double* dyr = dy + static_cast<std::size_t>(t) * l.out;
    double* dxr = dx + static_cast<std::size_t>(t) * l.in;
    for (int o = 0; o < l.out; ++o) {
      const double g = dyr[o];
      if (g == 0.0) continue;
      const double* w = l.weight.data() + static_cast<std::size_t>(o) * l.in;
      for (int i = 0; i < l.in; ++i) dxr[i] += g * w[i];
    }
  }
}

void norm_forward(const LayerNorm& n, const double* x, int rows, int d,
                  double* y, double* xhat, double* inv_std) {
  for (int t = 0; t < rows; ++t) {
    const double* xr = x + static_cast<std::size_t>(t) * d;
    double mean = 0.0;
    for (int k = 0; k < d; ++k) mean += xr[k];
    mean /= d;
    double var = 0.0;
    for (int k = 0; k < d; ++k) var += (xr[k] - mean) * (xr[k] - mean);
    var /= d;
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[t] = is;
    for (int k = 0; k < d; ++k) {
      const double h = (xr[k] - mean) * is;
      xhat[static_cast<std::size_t>(t) * d + k] = h;
      y[static_cast<std::size_t>(t) * d + k] = h * n.gamma[k] + n.beta[k];
    }
  }
}

// Accumulates the input gradient of a layer norm into dx.
void norm_backward(const LayerNorm& n, const double* dy, const double* xhat,
                   const double* inv_std, int rows, int d, double* dx) {
  std::vector<double> g(d);
  for (int t = 0; t < rows; ++t) {
    const double* dyr = dy + static_cast<std::size_t>(t) * d;
    const double* hr = xhat + static_cast<std::size_t>(t) * d;
    double mean_g = 0.0;
    double mean_gh = 0.0;
    for (int k = 0; k < d; ++k) {
      g[k] = dyr[k] * n.gamma[k];
      mean_g += g[k];
      mean_gh += g[k] * hr[k];
    }
    mean_g /= d;
    mean_gh /= d;
    double* dxr = dx + static_cast<std::size_t>(t) * d;
    for (int k = 0; k < d; ++k)
      dxr[k] += inv_std[t] * (g[k] - mean_g - hr[k] * mean_gh);
  }
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf =
      std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi * kInvSqrt2);
  return cdf + x * pdf;
}

}  // namespace

struct ReferenceVit::Trace {
  struct BlockCache {
    std::vector<double> xhat1, inv_std1, qkv, probs, attn_out;
    std::vector<double> xhat2, inv_std2, hidden_pre;
  };
  int tokens = 0;
  int grid_h = 0;
  int grid_w = 0;
  std::vector<double> x;  // token states after the last block run, [T x D]
  std::vector<BlockCache> blocks;
};

std::string reference_model_id(int depth, int embed_dim, int patch_size,
                               std::uint64_t seed) {
  return "ref-vit-d" + std::to_string(depth) + "-e" +
         std::to_string(embed_dim) + "-p" + std::to_string(patch_size) + "-s" +
         std::to_string(seed);
}

namespace {
BackboneInfo vit_info(const ReferenceVitConfig& c) {
  if (c.depth < 1) throw InvalidArgument("reference backbone depth must be >= 1");
  if (c.embed_dim < 8)
    throw InvalidArgument("reference backbone embed_dim must be >= 8");
  if (c.patch_size != 4 && c.patch_size != 8 && c.patch_size != 14 &&
      c.patch_size != 16)
    throw InvalidArgument("patch size must be one of 4, 8, 14, 16");
  if (c.mlp_ratio < 1 || c.max_grid < 1)
    throw InvalidArgument("invalid reference backbone shape");
  BackboneInfo info;
  info.model_id = reference_model_id(c.depth, c.embed_dim, c.patch_size, c.seed);
  info.patch_size = c.patch_size;
  info.embed_dim = c.embed_dim;
  info.num_layers = c.depth;
  info.gradient_capable = true;
  return info;
}
}  // namespace

ReferenceVit::ReferenceVit(const ReferenceVitConfig& config)
    : Backbone(vit_info(config)), config_(config) {
  const int d = config.embed_dim;
  num_heads_ = d % 8 == 0 ? d / 8 : 1;
  Rng rng(derive_seed(config.seed, "ref-vit-weights"));
  const int patch_in = config.patch_size * config.patch_size * 3;
  patch_embed_ = make_linear(rng, patch_in, d, config.embed_gain);
  fill_normal(rng, class_token_, d, 0.0, 1.0);
  fill_normal(rng, pos_embed_,
              static_cast<std::size_t>(1 + config.max_grid * config.max_grid) * d,
              0.0, config.pos_scale);
  blocks_.reserve(config.depth);
  for (int b = 0; b < config.depth; ++b) {
    Block blk;
    blk.norm1 = make_norm(rng, d);
    blk.qkv = make_linear(rng, d, 3 * d, config.qkv_gain);
    blk.proj = make_linear(rng, d, d, config.proj_gain);
    blk.norm2 = make_norm(rng, d);
    blk.fc1 = make_linear(rng, d, config.mlp_ratio * d, config.fc1_gain);
    blk.fc2 = make_linear(rng, config.mlp_ratio * d, d, config.fc2_gain);
    blocks_.push_back(std::move(blk));
  }
}

ReferenceVit::Trace ReferenceVit::run(const Image& image, int layer,
                                      bool keep) const {
  check_input(image, layer);
  const int p = config_.patch_size;
  const int d = config_.embed_dim;
  Trace tr;
  tr.grid_h = image.height() / p;
  tr.grid_w = image.width() / p;
  if (tr.grid_h > config_.max_grid || tr.grid_w > config_.max_grid)
    throw IncompatibleImageSize("image exceeds the position-embedding grid of " +
                                std::to_string(config_.max_grid * p) + " px");
  const int np = tr.grid_h * tr.grid_w;
  const int T = np + 1;
  tr.tokens = T;

  // Normalize and patchify: patch (r, c), element (dy * p + dx) * 3 + ch.
  const auto& norm = info().input_normalization;
  const int pin = p * p * 3;
  std::vector<double> patches(static_cast<std::size_t>(np) * pin);
  for (int r = 0; r < tr.grid_h; ++r)
    for (int c = 0; c < tr.grid_w; ++c) {
      double* dst = patches.data() +
                    static_cast<std::size_t>(r * tr.grid_w + c) * pin;
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          for (int ch = 0; ch < 3; ++ch)
            dst[(dy * p + dx) * 3 + ch] =
                (image.at(r * p + dy, c * p + dx, ch) - norm.mean[ch]) /
                norm.stddev[ch];
    }

  std::vector<double> embedded(static_cast<std::size_t>(np) * d);
  linear_forward(patch_embed_, patches.data(), np, embedded.data());

  tr.x.assign(static_cast<std::size_t>(T) * d, 0.0);
  for (int k = 0; k < d; ++k) tr.x[k] = class_token_[k] + pos_embed_[k];
  for (int r = 0; r < tr.grid_h; ++r)
    for (int c = 0; c < tr.grid_w; ++c) {
      const int i = r * tr.grid_w + c;
      const std::size_t pos = static_cast<std::size_t>(1 + r * config_.max_grid + c) * d;
      for (int k = 0; k < d; ++k)
        tr.x[static_cast<std::size_t>(1 + i) * d + k] =
            embedded[static_cast<std::size_t>(i) * d + k] + pos_embed_[pos + k];
    }

  const int nh = num_heads_;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t td = static_cast<std::size_t>(T) * d;
  std::vector<double> a(td), attn(td), y(td);

  for (int b = 0; b < layer; ++b) {
    const Block& blk = blocks_[b];
    Trace::BlockCache cache;
    cache.xhat1.resize(td);
    cache.inv_std1.resize(T);
    norm_forward(blk.norm1, tr.x.data(), T, d, a.data(), cache.xhat1.data(),
                 cache.inv_std1.data());

    cache.qkv.resize(td * 3);
    linear_forward(blk.qkv, a.data(), T, cache.qkv.data());

    cache.probs.assign(static_cast<std::size_t>(nh) * T * T, 0.0);
    std::fill(attn.begin(), attn.end(), 0.0);
    const double* qkv = cache.qkv.data();
    const std::size_t row = 3 * static_cast<std::size_t>(d);
    for (int h = 0; h < nh; ++h) {
      const int qo = h * dh;
      const int ko = d + h * dh;
      const int vo = 2 * d + h * dh;
      for (int i = 0; i < T; ++i) {
        double* pr = cache.probs.data() + (static_cast<std::size_t>(h) * T + i) * T;
        double mx = -1e300;
        for (int j = 0; j < T; ++j) {
          double s = 0.0;
          for (int k = 0; k < dh; ++k) s += qkv[i * row + qo + k] * qkv[j * row + ko + k];
          pr[j] = s * scale;
          mx = std::max(mx, pr[j]);
        }
        double sum = 0.0;
        for (int j = 0; j < T; ++j) {
          pr[j] = std::exp(pr[j] - mx);
          sum += pr[j];
        }
        for (int j = 0; j < T; ++j) pr[j] /= sum;
        double* out = attn.data() + static_cast<std::size_t>(i) * d + qo;
        for (int j = 0; j < T; ++j) {
          const double w = pr[j];
          const double* v = qkv + j * row + vo;
          for (int k = 0; k < dh; ++k) out[k] += w * v[k];
        }
      }
    }
    linear_forward(blk.proj, attn.data(), T, y.data());
    for (std::size_t i = 0; i < td; ++i) tr.x[i] += y[i];

    cache.xhat2.resize(td);
    cache.inv_std2.resize(T);
    norm_forward(blk.norm2, tr.x.data(), T, d, a.data(), cache.xhat2.data(),
                 cache.inv_std2.data());
    const int hid = blk.fc1.out;
    cache.hidden_pre.resize(static_cast<std::size_t>(T) * hid);
    linear_forward(blk.fc1, a.data(), T, cache.hidden_pre.data());
    std::vector<double> act(cache.hidden_pre.size());
    for (std::size_t i = 0; i < act.size(); ++i) act[i] = gelu(cache.hidden_pre[i]);
    linear_forward(blk.fc2, act.data(), T, y.data());
    for (std::size_t i = 0; i < td; ++i) tr.x[i] += y[i];

    if (keep) {
      cache.attn_out = attn;
      tr.blocks.push_back(std::move(cache));
    }
  }
  return tr;
}

TokenSet ReferenceVit::tokens(const Image& image, int layer) const {
  Trace tr = run(image, layer, false);
  const int d = config_.embed_dim;
  TokenSet out;
  out.layer_index = layer;
  out.embed_dim = d;
  out.num_patches = tr.tokens - 1;
  out.class_token.assign(tr.x.begin(), tr.x.begin() + d);
  out.patch_tokens.assign(tr.x.begin() + d, tr.x.end());
  return out;
}

InputGradient ReferenceVit::input_gradient(const Image& image, int layer,
                                           const AggregationSpec& agg,
                                           const FeatureLoss& loss) const {
  Trace tr = run(image, layer, true);
  const int d = config_.embed_dim;
  const int T = tr.tokens;
  const int np = T - 1;
  const std::size_t td = static_cast<std::size_t>(T) * d;

  TokenSet ts;
  ts.layer_index = layer;
  ts.embed_dim = d;
  ts.num_patches = np;
  ts.class_token.assign(tr.x.begin(), tr.x.begin() + d);
  ts.patch_tokens.assign(tr.x.begin() + d, tr.x.end());
  const FeatureVector z = aggregate(ts, agg);
  std::vector<double> grad_z(z.size(), 0.0);

  InputGradient result;
  result.loss = loss(z, grad_z);

  // dX: gradient w.r.t. the token states, [T x D].
  std::vector<double> dx(td, 0.0);
  aggregate_backward(grad_z, agg, d, np, std::span<double>(dx).first(d),
                     std::span<double>(dx).subspan(d));

  const int nh = num_heads_;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t row = 3 * static_cast<std::size_t>(d);
  std::vector<double> tmp(td), dattn(td), dqkv(td * 3), dp(T);

  for (int b = layer - 1; b >= 0; --b) {
    const Block& blk = blocks_[b];
    const auto& cache = tr.blocks[b];
    const int hid = blk.fc1.out;

    // MLP branch: x += fc2(gelu(fc1(norm2(x)))).
    std::vector<double> dact(static_cast<std::size_t>(T) * hid);
    linear_backward(blk.fc2, dx.data(), T, dact.data());
    for (std::size_t i = 0; i < dact.size(); ++i)
      dact[i] *= gelu_grad(cache.hidden_pre[i]);
    linear_backward(blk.fc1, dact.data(), T, tmp.data());
    norm_backward(blk.norm2, tmp.data(), cache.xhat2.data(),
                  cache.inv_std2.data(), T, d, dx.data());

    // Attention branch: x += proj(attention(qkv(norm1(x)))).
    linear_backward(blk.proj, dx.data(), T, dattn.data());
    std::fill(dqkv.begin(), dqkv.end(), 0.0);
    const double* qkv = cache.qkv.data();
    for (int h = 0; h < nh; ++h) {
      const int qo = h * dh;
      const int ko = d + h * dh;
      const int vo = 2 * d + h * dh;
      for (int i = 0; i < T; ++i) {
        const double* pr = cache.probs.data() + (static_cast<std::size_t>(h) * T + i) * T;
        const double* dout = dattn.data() + static_cast<std::size_t>(i) * d + qo;
        double dot = 0.0;
        for (int j = 0; j < T; ++j) {
          const double* v = qkv + j * row + vo;
          double s = 0.0;
          for (int k = 0; k < dh; ++k) s += dout[k] * v[k];
          dp[j] = s;
          dot += pr[j] * s;
          double* dv = dqkv.data() + j * row + vo;
          for (int k = 0; k < dh; ++k) dv[k] += pr[j] * dout[k];
        }
        double* dq = dqkv.data() + i * row + qo;
        for (int j = 0; j < T; ++j) {
          const double ds = pr[j] * (dp[j] - dot) * scale;
          if (ds == 0.0) continue;
          const double* kj = qkv + j * row + ko;
          const double* qi = qkv + i * row + qo;
          double* dk = dqkv.data() + j * row + ko;
          for (int k = 0; k < dh; ++k) {
            dq[k] += ds * kj[k];
            dk[k] += ds * qi[k];
          }
        }
      }
    }
    linear_backward(blk.qkv, dqkv.data(), T, tmp.data());
    norm_backward(blk.norm1, tmp.data(), cache.xhat1.data(),
                  cache.inv_std1.data(), T, d, dx.data());
  }

  // Embedding: the class token and position embeddings are constants.
  const int p = config_.patch_size;
  const int pin = p * p * 3;
  std::vector<double> dpatch(static_cast<std::size_t>(np) * pin);
  linear_backward(patch_embed_, dx.data() + d, np, dpatch.data());

  const auto& norm = info().input_normalization;
  result.gradient.assign(image.size(), 0.0);
  for (int r = 0; r < tr.grid_h; ++r)
    for (int c = 0; c < tr.grid_w; ++c) {
      const double* src = dpatch.data() +
                          static_cast<std::size_t>(r * tr.grid_w + c) * pin;
      for (int dy = 0; dy < p; ++dy)
        for (int dxp = 0; dxp < p; ++dxp)
          for (int ch = 0; ch < 3; ++ch)
            result.gradient[image.index(r * p + dy, c * p + dxp, ch)] =
                src[(dy * p + dxp) * 3 + ch] / norm.stddev[ch];
    }
  return result;
}

BackboneHandle build_reference_backbone(int depth, int embed_dim,
                                        int patch_size, std::uint64_t seed) {
  ReferenceVitConfig config;
  config.depth = depth;
  config.embed_dim = embed_dim;
  config.patch_size = patch_size;
  config.seed = seed;
  return std::make_shared<const ReferenceVit>(config);
}

}  // namespace taa
