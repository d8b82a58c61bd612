#include "taa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "taa/errors.hpp"

namespace taa {

double mse_255(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw DimensionMismatch("mse: image shapes differ");
  if (a.empty()) throw InvalidArgument("mse of empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = 255.0 * (a.data()[i] - b.data()[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double mse_for_psnr(double psnr_db) {
  return 255.0 * 255.0 / std::pow(10.0, psnr_db / 10.0);
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse_255(a, b)); }

double accuracy_percent(std::span<const int> predictions,
                        std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw DimensionMismatch("accuracy: prediction/label count mismatch");
  if (labels.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (predictions[i] == labels[i]) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

IouAccumulator::IouAccumulator(int num_classes)
    : intersection_(num_classes, 0), uni_(num_classes, 0) {
  if (num_classes < 1) throw InvalidArgument("IoU needs at least one class");
}

void IouAccumulator::add(std::span<const int> prediction,
                         std::span<const int> truth) {
  if (prediction.size() != truth.size())
    throw DimensionMismatch("mIoU: prediction and mask sizes differ");
  const int C = num_classes();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = prediction[i];
    const int t = truth[i];
    if (p < 0 || p >= C || t < 0 || t >= C)
      throw InvalidArgument("mIoU: class index out of range");
    if (p == t) {
      ++intersection_[p];
      ++uni_[p];
    } else {
      ++uni_[p];
      ++uni_[t];
    }
  }
}

double IouAccumulator::class_iou(int c) const {
  if (uni_[c] == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(intersection_[c]) / static_cast<double>(uni_[c]);
}

double IouAccumulator::miou_percent() const {
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes(); ++c) {
    if (uni_[c] == 0) continue;
    sum += class_iou(c);
    ++present;
  }
  if (present == 0) return std::numeric_limits<double>::quiet_NaN();
  return 100.0 * sum / present;
}

double miou_percent(std::span<const int> prediction, std::span<const int> truth,
                    int num_classes) {
  IouAccumulator acc(num_classes);
  acc.add(prediction, truth);
  return acc.miou_percent();
}

double average_precision(std::span<const int> ranked_relevance) {
  double sum = 0.0;
  int hits = 0;
  int rank = 0;
  for (int r : ranked_relevance) {
    if (r < 0) continue;  // junk
    ++rank;
    if (r > 0) {
      ++hits;
      sum += static_cast<double>(hits) / rank;
    }
  }
  if (hits == 0) return std::numeric_limits<double>::quiet_NaN();
  return 100.0 * sum / hits;
}

RetrievalScore mean_average_precision(
    const std::vector<std::vector<double>>& query_features,
    const std::vector<std::vector<double>>& gallery_features,
    const std::vector<std::vector<int>>& relevance,
    std::span<const double> center) {
  if (gallery_features.empty()) throw InvalidArgument("retrieval gallery is empty");
  if (relevance.size() != query_features.size())
    throw DimensionMismatch("one relevance row per query required");

  auto prepared = [&](const std::vector<double>& f) {
    std::vector<double> v(f);
    if (!center.empty()) {
      if (center.size() != v.size()) throw DimensionMismatch("retrieval center size");
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= center[i];
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n > 0.0)
      for (double& x : v) x /= n;
    return v;
  };
  std::vector<std::vector<double>> gallery;
  gallery.reserve(gallery_features.size());
  for (const auto& g : gallery_features) gallery.push_back(prepared(g));

  RetrievalScore score;
  double sum = 0.0;
  for (std::size_t q = 0; q < query_features.size(); ++q) {
    if (relevance[q].size() != gallery.size())
      throw DimensionMismatch("relevance row does not match gallery size");
    const auto qf = prepared(query_features[q]);
    std::vector<double> sims(gallery.size());
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (gallery[g].size() != qf.size()) throw DimensionMismatch("feature size mismatch");
      sims[g] = std::inner_product(qf.begin(), qf.end(), gallery[g].begin(), 0.0);
    }
    std::vector<std::size_t> order(gallery.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
    std::vector<int> ranked(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) ranked[i] = relevance[q][order[i]];
    const double ap = average_precision(ranked);
    if (std::isnan(ap)) {
      ++score.queries_without_relevants;
      continue;
    }
    sum += ap;
    ++score.queries_scored;
  }
  if (score.queries_scored > 0) score.map_percent = sum / score.queries_scored;
  return score;
}

double relative_efficiency(double perf_taa, double perf_clean, double perf_tsa) {
  if (perf_tsa == perf_clean)
    throw DegenerateBaseline("TSA had no effect; relative efficiency undefined");
  return 100.0 * (perf_taa - perf_clean) / (perf_tsa - perf_clean);
}

std::string to_string(Task task) {
  switch (task) {
    case Task::classification: return "classification";
    case Task::segmentation: return "segmentation";
    case Task::retrieval: return "retrieval";
  }
  return "unknown";
}

std::string to_string(Condition condition) {
  switch (condition) {
    case Condition::clean: return "clean";
    case Condition::taa: return "taa";
    case Condition::tsa: return "tsa";
    case Condition::transform: return "transform";
  }
  return "unknown";
}

Task parse_task(const std::string& text) {
  if (text == "classification") return Task::classification;
  if (text == "segmentation") return Task::segmentation;
  if (text == "retrieval") return Task::retrieval;
  throw InvalidArgument("unknown task '" + text + "'");
}

Condition parse_condition(const std::string& text) {
  if (text == "clean") return Condition::clean;
  if (text == "taa") return Condition::taa;
  if (text == "tsa") return Condition::tsa;
  if (text == "transform") return Condition::transform;
  throw InvalidArgument("unknown condition '" + text + "'");
}

// Minimal CSV quoting: fields with comma, quote or newline are quoted.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

namespace {

constexpr const char* kCsvHeader =
    "model_id,task,dataset_id,condition,detail,metric_name,value";

}  // namespace

std::string format_value(double v) {
  if (std::isnan(v)) return "undefined";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_value(const std::string& text) {
  if (text == "undefined") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  const double v = std::stod(text, &used);
  if (used != text.size()) throw InvalidArgument("bad numeric field '" + text + "'");
  return v;
}

std::string metrics_to_csv(const std::vector<MetricRecord>& records) {
  std::ostringstream os;
  os << kCsvHeader << "\n";
  for (const auto& r : records)
    os << csv_field(r.model_id) << ',' << to_string(r.task) << ','
       << csv_field(r.dataset_id) << ',' << to_string(r.condition) << ','
       << csv_field(r.detail) << ',' << csv_field(r.metric_name) << ','
       << format_value(r.value) << "\n";
  return os.str();
}

std::vector<MetricRecord> metrics_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  // Leading '#' lines carry provenance comments.
  while (std::getline(is, line) && line.starts_with('#')) {
  }
  if (line != kCsvHeader) throw InvalidArgument("metric CSV header mismatch");
  std::vector<MetricRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw InvalidArgument("metric CSV row needs 7 fields");
    out.push_back({f[0], parse_task(f[1]), f[2], parse_condition(f[3]), f[4], f[5],
                   parse_value(f[6])});
  }
  return out;
}

std::string metrics_to_json(const std::vector<MetricRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records)
    arr.push_back({{"model_id", r.model_id},
                   {"task", to_string(r.task)},
                   {"dataset_id", r.dataset_id},
                   {"condition", to_string(r.condition)},
                   {"detail", r.detail},
                   {"metric_name", r.metric_name},
                   {"value", format_value(r.value)}});
  return arr.dump(2) + "\n";
}

std::vector<MetricRecord> metrics_from_json(const std::string& text) {
  std::vector<MetricRecord> out;
  for (const auto& j : nlohmann::json::parse(text))
    out.push_back({j.at("model_id").get<std::string>(),
                   parse_task(j.at("task").get<std::string>()),
                   j.at("dataset_id").get<std::string>(),
                   parse_condition(j.at("condition").get<std::string>()),
                   j.at("detail").get<std::string>(),
                   j.at("metric_name").get<std::string>(),
                   parse_value(j.at("value").get<std::string>())});
  return out;
}

}  // namespace taa
