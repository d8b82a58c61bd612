#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "taa/feature_stats.hpp"
#include "taa/heads.hpp"
#include "taa/model.hpp"

namespace taa {

enum class StepRule { plain_gradient, sign, momentum };

std::string to_string(StepRule rule);
StepRule parse_step_rule(const std::string& text);

struct AttackConfig {
  double eps_inf = 8.0 / 255.0;
  double alpha = 0.0004;
  int num_steps = 50;
  StepRule step_rule = StepRule::sign;
  double momentum_decay = 1.0;
  bool centering = true;
  int layer = 0;  // 0 = final layer
  AggregationSpec agg{TokenMode::patch_tokens, PatchReduction::concat_flatten};
  std::optional<double> early_stop_tau;
  std::optional<double> target_psnr;
  std::uint64_t seed = 0;

  // Throws InvalidArgument on out-of-range fields.
  void validate() const;
  int resolved_layer(const Backbone& model) const {
    return layer <= 0 ? model.num_layers() : layer;
  }
};

struct AttackResult {
  Image adversarial;  // quantized
  std::vector<double> loss_trace;
  std::vector<double> linf_trace;  // distance of the iterate before each step
  double final_loss = 0.0;         // objective evaluated on `adversarial`
  double linf = 0.0;
  double psnr_db = 0.0;
  bool succeeded = false;
  bool fallback_uncentered = false;
  int iterations_run = 0;
};

struct StepState {
  std::vector<double> momentum;
};

// plain_gradient: x -= alpha g
// sign:           x -= alpha sign(g)
// momentum:       m = decay m + g / |g|_1 ; x -= alpha sign(m)
// A momentum step with |g|_1 < 1e-20 skips the normalized term.
void step_update(std::span<double> x, std::span<const double> grad,
                 StepRule rule, double alpha, double momentum_decay,
                 StepState& state);

// Clamp into [x_o - eps, x_o + eps] intersected with [0, 1].
Image project_linf(const Image& x, const Image& x_o, double eps_inf);

// Scales delta = x_a - x_o down so the 255-level PSNR meets the target.
// Images already at or above the target PSNR are returned unchanged.
// Throws IdenticalImages when x_a == x_o.
Image calibrate_to_psnr(const Image& x_o, const Image& x_a, double target_psnr);

using GradientOracle = std::function<InputGradient(const Image&)>;
using ImageObjective = std::function<double(const Image&)>;

// Shared descent loop: seeded random start within one step of x_o, then
// step and project, optional PSNR calibration, quantize.
// `final_objective` scores the quantized output. Callers fill in
// `succeeded` and `fallback_uncentered`.
AttackResult run_attack_loop(const Image& x_o, const AttackConfig& cfg,
                             const GradientOracle& oracle,
                             const ImageObjective& final_objective);

// Task-agnostic attack: minimize the (centered) cosine similarity between
// the features of the iterate and those of the original image.
AttackResult taa_attack(const Backbone& model, const Image& x_o,
                        const MeanVector& mu, const AttackConfig& cfg);

// Classification margin p(c_o|x) - max_{c != c_o} p(c|x) and its gradient
// w.r.t. the logits.
double classification_margin(std::span<const double> logits, int true_class,
                             std::span<double> grad_logits = {});

AttackResult tsa_classification(const Backbone& model, const TaskHead& head,
                                const Image& x_o, int label,
                                const AttackConfig& cfg);

// Maximizes the mean per-pixel cross-entropy against the clean prediction.
AttackResult tsa_segmentation(const Backbone& model, const TaskHead& head,
                              const Image& x_o, std::span<const int> gt_mask,
                              const AttackConfig& cfg);

// Appends one JSON line per iteration: {"step", "loss", "linf"}.
std::string trace_jsonl(const AttackResult& result);

}  // namespace taa
