#include "taa/feature_stats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "taa/errors.hpp"

namespace taa {

MeanVector MeanVector::zeros(std::size_t dim, std::string model_id, int layer,
                             AggregationSpec agg) {
  MeanVector m;
  m.mu.assign(dim, 0.0);
  m.sample_count = 1;
  m.dataset_id = "zero";
  m.model_id = std::move(model_id);
  m.layer = layer;
  m.agg = agg;
  return m;
}

MeanVector estimate_mean(const Backbone& model, std::span<const Image> images,
                         int layer, const AggregationSpec& agg,
                         std::string dataset_id) {
  if (images.empty()) throw EmptyTrainingSet("estimate_mean needs at least one image");
  MeanVector out;
  out.dataset_id = std::move(dataset_id);
  out.model_id = model.model_id();
  out.layer = layer;
  out.agg = agg;
  for (const Image& img : images) {
    const FeatureVector z = model.forward_features(img, layer, agg);
    if (out.mu.empty()) out.mu.assign(z.size(), 0.0);
    if (z.size() != out.mu.size())
      throw DimensionMismatch("training images yield different feature sizes");
    for (std::size_t i = 0; i < z.size(); ++i) out.mu[i] += z[i];
  }
  for (double& v : out.mu) v /= static_cast<double>(images.size());
  out.sample_count = static_cast<int>(images.size());
  return out;
}

CenteredFeature center(std::span<const double> z, std::span<const double> mu) {
  if (z.size() != mu.size())
    throw DimensionMismatch("feature has " + std::to_string(z.size()) +
                            " dims, mean has " + std::to_string(mu.size()));
  CenteredFeature c;
  c.z_tilde.resize(z.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    c.z_tilde[i] = z[i] - mu[i];
    sq += c.z_tilde[i] * c.z_tilde[i];
  }
  c.norm = std::sqrt(sq);
  return c;
}

CenteredFeature center(std::span<const double> z, const MeanVector& mu) {
  return center(z, std::span<const double>(mu.mu));
}

double cosine_loss(const CenteredFeature& a, const CenteredFeature& b) {
  if (a.z_tilde.size() != b.z_tilde.size())
    throw DimensionMismatch("cosine_loss: dimension mismatch");
  if (a.norm < kDegenerateNorm || b.norm < kDegenerateNorm)
    throw DegenerateFeature("centered feature has (near) zero norm");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.z_tilde.size(); ++i)
    dot += a.z_tilde[i] * b.z_tilde[i];
  return std::clamp(dot / (a.norm * b.norm), -1.0, 1.0);
}

double cosine_with_grad(std::span<const double> u, std::span<const double> v,
                        std::span<double> grad_u) {
  if (u.size() != v.size() || grad_u.size() != u.size())
    throw DimensionMismatch("cosine_with_grad: dimension mismatch");
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  const double nu = std::sqrt(uu);
  const double nv = std::sqrt(vv);
  if (nu < kDegenerateNorm || nv < kDegenerateNorm)
    throw DegenerateFeature("centered feature has (near) zero norm");
  const double c = uv / (nu * nv);
  for (std::size_t i = 0; i < u.size(); ++i)
    grad_u[i] = v[i] / (nu * nv) - c * u[i] / uu;
  return c;
}

std::string mean_filename(const std::string& model_id, int layer,
                          const AggregationSpec& agg) {
  return "mean-" + model_id + "-L" + std::to_string(layer) + "-" +
         agg.to_string() + ".bin";
}

namespace {

constexpr char kMagic[8] = {'T', 'A', 'A', 'M', 'E', 'A', 'N', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                              static_cast<unsigned char>((v >> 8) & 0xFF),
                              static_cast<unsigned char>((v >> 16) & 0xFF),
                              static_cast<unsigned char>((v >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoFailure("truncated mean file");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_mean(const MeanVector& mean, const std::filesystem::path& path) {
  nlohmann::json header = {{"model_id", mean.model_id},
                           {"layer", mean.layer},
                           {"agg", mean.agg.to_string()},
                           {"N_T", mean.sample_count},
                           {"dataset_id", mean.dataset_id},
                           {"dim", mean.mu.size()}};
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoFailure("cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (double v : mean.mu) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw IoFailure("write failed: " + path.string());
}

MeanVector load_mean(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoFailure("cannot read " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw IoFailure("not a mean-vector file: " + path.string());
  const std::uint32_t len = get_u32(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw IoFailure("truncated mean header");
  MeanVector m;
  try {
    const auto header = nlohmann::json::parse(text);
    m.model_id = header.at("model_id").get<std::string>();
    m.layer = header.at("layer").get<int>();
    m.agg = AggregationSpec::parse(header.at("agg").get<std::string>());
    m.sample_count = header.at("N_T").get<int>();
    m.dataset_id = header.at("dataset_id").get<std::string>();
    m.mu.resize(header.at("dim").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw IoFailure(std::string("bad mean header: ") + e.what());
  }
  for (double& v : m.mu) v = std::bit_cast<float>(get_u32(is));
  if (m.sample_count < 1) throw IoFailure("mean file has N_T < 1");
  return m;
}

}  // namespace taa
