#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "taa/image.hpp"

namespace taa {

// Mean squared error on the 255-level scale: MSE = mean((255 (a - b))^2).
double mse_255(const Image& a, const Image& b);

// PSNR = 10 log10(255^2 / MSE) with MSE on the 255-level scale.
// Identical images give +infinity.
double psnr(const Image& a, const Image& b);
double psnr_from_mse(double mse);
double mse_for_psnr(double psnr_db);

// Percentage of correct predictions.
double accuracy_percent(std::span<const int> predictions,
                        std::span<const int> labels);

// Dataset-global IoU accumulator.
class IouAccumulator {
 public:
  explicit IouAccumulator(int num_classes);
  void add(std::span<const int> prediction, std::span<const int> truth);
  // Mean IoU (percent) over classes present in prediction or truth.
  double miou_percent() const;
  // IoU of one class in [0, 1]; NaN when the class never appeared.
  double class_iou(int c) const;
  int num_classes() const { return static_cast<int>(intersection_.size()); }

 private:
  std::vector<long long> intersection_;
  std::vector<long long> uni_;
};

double miou_percent(std::span<const int> prediction, std::span<const int> truth,
                    int num_classes);

// Relevance labels along a ranking: 1 relevant, 0 irrelevant, -1 junk
// (dropped from the ranking before scoring).
// Returns AP in percent; NaN when the ranking has no relevant item.
double average_precision(std::span<const int> ranked_relevance);

struct RetrievalScore {
  double map_percent = std::numeric_limits<double>::quiet_NaN();
  int queries_scored = 0;
  int queries_without_relevants = 0;
};

// Ranks the gallery by cosine similarity to each query feature (after
// subtracting `center` from all features when non-empty) and averages AP.
// relevance[q][g] uses the labels above.
RetrievalScore mean_average_precision(
    const std::vector<std::vector<double>>& query_features,
    const std::vector<std::vector<double>>& gallery_features,
    const std::vector<std::vector<int>>& relevance,
    std::span<const double> center = {});

// eta = 100 (perf_taa - perf_clean) / (perf_tsa - perf_clean).
// Throws DegenerateBaseline when perf_tsa == perf_clean.
double relative_efficiency(double perf_taa, double perf_clean, double perf_tsa);

enum class Task { classification, segmentation, retrieval };
enum class Condition { clean, taa, tsa, transform };

std::string to_string(Task task);
std::string to_string(Condition condition);
Task parse_task(const std::string& text);
Condition parse_condition(const std::string& text);

// Minimal CSV quoting: fields with comma, quote or newline are quoted.
std::string csv_field(const std::string& s);
std::vector<std::string> split_csv_line(const std::string& line);

struct MetricRecord {
  std::string model_id;
  Task task = Task::classification;
  std::string dataset_id;
  Condition condition = Condition::clean;
  std::string detail;
  std::string metric_name;  // accuracy, mIoU, mAP, psnr_db, relative_efficiency
  double value = 0.0;

  bool operator==(const MetricRecord&) const = default;
};

// Columns: model_id,task,dataset_id,condition,detail,metric_name,value.
// Values use round-trip precision; NaN is written as "undefined" and
// infinity as "inf".
std::string format_value(double v);
double parse_value(const std::string& text);
std::string metrics_to_csv(const std::vector<MetricRecord>& records);
std::vector<MetricRecord> metrics_from_csv(const std::string& text);
std::string metrics_to_json(const std::vector<MetricRecord>& records);
std::vector<MetricRecord> metrics_from_json(const std::string& text);

}  // namespace taa
