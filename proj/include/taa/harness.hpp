#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "taa/attack.hpp"
#include "taa/datasets.hpp"
#include "taa/heatmap.hpp"
#include "taa/metrics.hpp"
#include "taa/transforms.hpp"

namespace taa {

enum class AttackType { taa, tsa_cls, tsa_seg };
std::string to_string(AttackType type);
AttackType parse_attack_type(const std::string& text);

struct AttackEntry {
  std::string name;
  AttackType type = AttackType::taa;
  AttackConfig config;
};

// Declarative campaign description, read from JSON. Unknown keys anywhere
// are rejected with ValidationError.
struct RunManifest {
  int manifest_version = 1;
  std::uint64_t seed = 0;
  std::vector<std::string> source_models;
  std::vector<std::string> target_models;
  std::vector<AttackEntry> attacks;
  std::vector<Task> tasks;
  BlobsSpec blobs;
  GallerySpec gallery;
  int mean_samples = 256;  // N_T, drawn from the blobs training split
  bool zero_mean = false;  // use mu = 0 instead of an estimate
  int head_epochs = 150;
  double head_learning_rate = 0.05;
  double head_weight_decay = 1e-2;
  AggregationSpec retrieval_agg{TokenMode::class_token, PatchReduction::mean};
  bool retrieval_centered = true;
  std::vector<TransformSpec> transforms;  // applied to clean and adversarial inputs
  std::string output_dir = "taa-out";

  static RunManifest from_json(const std::string& text);
  static RunManifest load(const std::filesystem::path& path);
  // Canonical serialization (sorted keys, defaults filled in).
  std::string to_json() const;
  std::string sha256() const;
};

// Human-readable schema printed on validation errors.
std::string manifest_schema();

// Skip reason prefix for combinations that have no meaning (a task-specific
// attack evaluated on a task it has no objective for).
inline constexpr const char* kNotApplicable = "NotApplicable";

struct MatrixCell {
  std::string source;
  std::string target;
  Task task = Task::classification;
  std::string attack;
  AttackType attack_type = AttackType::taa;
  bool white_box = false;
  std::string metric_name;  // accuracy, mIoU or mAP
  double clean = std::numeric_limits<double>::quiet_NaN();
  double attacked = std::numeric_limits<double>::quiet_NaN();
  double psnr_db = std::numeric_limits<double>::quiet_NaN();  // mean over images
  int images = 0;
  bool skipped = false;
  std::string reason;

  bool operator==(const MatrixCell&) const = default;
};

// Absolute metrics for every (source, target, task, attack); relative
// efficiency is derived from it at report time.
struct TransferMatrix {
  std::string manifest_sha256;
  std::vector<std::string> sources;
  std::vector<std::string> targets;
  std::vector<Task> tasks;
  std::vector<std::string> attacks;
  std::vector<MatrixCell> cells;

  const MatrixCell* find(const std::string& source, const std::string& target, Task task,
                         const std::string& attack) const;
  // Throws IncompleteMatrix when a combination has no cell.
  void check_complete() const;
  bool has_skipped() const;
  // Skipped for a reason other than kNotApplicable.
  bool has_failures() const;

  bool operator==(const TransferMatrix&) const = default;
};

std::string matrix_to_csv(const TransferMatrix& matrix);
TransferMatrix matrix_from_csv(const std::string& text);
std::string matrix_to_json(const TransferMatrix& matrix);
TransferMatrix matrix_from_json(const std::string& text);

struct EfficiencyRecord {
  std::string source;
  std::string target;
  Task task = Task::classification;
  std::string attack;
  double eta = std::numeric_limits<double>::quiet_NaN();
  std::string baseline;  // attack@source of the TSA used, or why none applies
};

// eta against the matching-task TSA: white-box TSA on the target when the
// matrix has one, else the TSA transferred from the same source.
std::vector<EfficiencyRecord> relative_efficiencies(const TransferMatrix& matrix);
std::string efficiencies_to_csv(const std::vector<EfficiencyRecord>& records);

// Source x target heatmap for one attack: mean relative efficiency over
// tasks when any baseline exists, the attacked metric of the first task
// otherwise.
HeatmapData matrix_heatmap(const TransferMatrix& matrix, const std::string& attack);

struct CampaignOptions {
  // false: reuse adversarial PNGs already stored under output_dir.
  bool craft = true;
};

struct CampaignResult {
  TransferMatrix matrix;
  std::filesystem::path output_dir;
};

// Crafts adversarial images once per (source, attack), stores them as PNG,
// then evaluates the reloaded images on every target and task. Failures are
// recorded as skipped cells.
CampaignResult run_campaign(const RunManifest& manifest, const CampaignOptions& options = {});

enum class AblationAxis { layer, aggregation, centering, step_rule };
std::string to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(const std::string& text);

struct AblationRow {
  std::string value;
  int layer = 0;
  std::string agg;
  bool centering = true;
  std::string step_rule;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  double miou = std::numeric_limits<double>::quiet_NaN();
  double cls_cos_sim = std::numeric_limits<double>::quiet_NaN();    // final-layer class tokens
  double final_cos_sim = std::numeric_limits<double>::quiet_NaN();  // centered, final layer
  double attack_loss = std::numeric_limits<double>::quiet_NaN();    // attack's own objective
  double max_linf = std::numeric_limits<double>::quiet_NaN();
  double psnr_db = std::numeric_limits<double>::quiet_NaN();
  int images = 0;
};

struct AblationTable {
  std::string manifest_sha256;
  std::string source;
  AblationAxis axis = AblationAxis::layer;
  std::vector<AblationRow> rows;
};

// White-box sweep on the single source model. The first taa entry of the
// manifest is the base attack; `values` defaults to the full axis.
AblationTable run_ablation(const RunManifest& manifest, AblationAxis axis,
                           std::vector<std::string> values = {});
std::string ablation_to_csv(const AblationTable& table);
std::string ablation_to_json(const AblationTable& table);

enum class ReportFormat { csv, json, heatmap };
ReportFormat parse_report_format(const std::string& text);

// Throws IncompleteMatrix. The heatmap format also writes `<path>.json`.
void emit_report(const TransferMatrix& matrix, ReportFormat format,
                 const std::filesystem::path& path, const std::string& attack = "");

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);
std::string software_versions_json();

}  // namespace taa
