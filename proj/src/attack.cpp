#include "taa/attack.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "taa/errors.hpp"
#include "taa/metrics.hpp"
#include "taa/rng.hpp"

namespace taa {

std::string to_string(StepRule rule) {
  switch (rule) {
    case StepRule::plain_gradient: return "plain_gradient";
    case StepRule::sign: return "sign";
    case StepRule::momentum: return "momentum";
  }
  return "unknown";
}

StepRule parse_step_rule(const std::string& text) {
  if (text == "plain_gradient" || text == "plain") return StepRule::plain_gradient;
  if (text == "sign") return StepRule::sign;
  if (text == "momentum") return StepRule::momentum;
  throw InvalidArgument("unknown step rule '" + text + "'");
}

void AttackConfig::validate() const {
  if (!(eps_inf >= 0.0 && eps_inf <= 1.0))
    throw InvalidArgument("eps_inf must lie in [0, 1]");
  if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
  if (num_steps < 0) throw InvalidArgument("num_steps must be >= 0");
  if (!(momentum_decay >= 0.0)) throw InvalidArgument("momentum_decay must be >= 0");
  if (early_stop_tau && !(*early_stop_tau >= -1.0 && *early_stop_tau <= 1.0))
    throw InvalidArgument("early_stop_tau must lie in [-1, 1]");
  if (target_psnr && !(*target_psnr > 0.0))
    throw InvalidArgument("target_psnr must be positive");
  if (layer < 0) throw InvalidArgument("layer must be >= 0 (0 = final)");
}

void step_update(std::span<double> x, std::span<const double> grad,
                 StepRule rule, double alpha, double momentum_decay,
                 StepState& state) {
  if (x.size() != grad.size()) throw DimensionMismatch("step_update: shape mismatch");
  auto sgn = [](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); };
  switch (rule) {
    case StepRule::plain_gradient:
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= alpha * grad[i];
      break;
    case StepRule::sign:
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= alpha * sgn(grad[i]);
      break;
    case StepRule::momentum: {
      if (state.momentum.size() != x.size()) state.momentum.assign(x.size(), 0.0);
      double l1 = 0.0;
      for (double g : grad) l1 += std::abs(g);
      for (std::size_t i = 0; i < x.size(); ++i) {
        state.momentum[i] *= momentum_decay;
        if (l1 >= 1e-20) state.momentum[i] += grad[i] / l1;
        x[i] -= alpha * sgn(state.momentum[i]);
      }
      break;
    }
  }
}

Image project_linf(const Image& x, const Image& x_o, double eps_inf) {
  if (x.height() != x_o.height() || x.width() != x_o.width())
    throw DimensionMismatch("project_linf: shape mismatch");
  Image out(x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double o = x_o.data()[i];
    const double lo = std::max(0.0, o - eps_inf);
    const double hi = std::min(1.0, o + eps_inf);
    out.data()[i] = std::clamp(x.data()[i], lo, hi);
  }
  return out;
}

Image calibrate_to_psnr(const Image& x_o, const Image& x_a, double target_psnr) {
  const double mse = mse_255(x_o, x_a);
  if (mse == 0.0) throw IdenticalImages("nothing to calibrate: x_a == x_o");
  const double target_mse = mse_for_psnr(target_psnr);
  if (mse <= target_mse) return x_a;
  const double s = std::sqrt(target_mse / mse);
  Image out(x_o.height(), x_o.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double o = x_o.data()[i];
    out.data()[i] = std::clamp(o + s * (x_a.data()[i] - o), 0.0, 1.0);
  }
  return out;
}

AttackResult run_attack_loop(const Image& x_o, const AttackConfig& cfg,
                             const GradientOracle& oracle,
                             const ImageObjective& final_objective) {
  cfg.validate();
  AttackResult result;
  Image x = x_o;
  StepState state;
  if (cfg.num_steps > 0) {
    // The feature-space cosine has a zero gradient at x = x_o, so the first
    // iterate is moved by a seeded uniform offset of at most one step.
    Rng rng(derive_seed(cfg.seed, "attack-random-start"));
    for (double& v : x.data()) v += rng.uniform(-cfg.alpha, cfg.alpha);
    x = project_linf(x, x_o, cfg.eps_inf);
  }
  for (int t = 0; t < cfg.num_steps; ++t) {
    InputGradient g = oracle(x);
    result.loss_trace.push_back(g.loss);
    result.linf_trace.push_back(linf_distance(x, x_o));
    if (cfg.early_stop_tau && g.loss < *cfg.early_stop_tau) break;
    step_update(x.data(), g.gradient, cfg.step_rule, cfg.alpha, cfg.momentum_decay,
                state);
    x = project_linf(x, x_o, cfg.eps_inf);
  }
  result.iterations_run = static_cast<int>(result.loss_trace.size());
  if (cfg.target_psnr && mse_255(x, x_o) > 0.0)
    x = calibrate_to_psnr(x_o, x, *cfg.target_psnr);
  result.adversarial = quantize(x);
  result.final_loss = final_objective(result.adversarial);
  result.linf = linf_distance(result.adversarial, x_o);
  result.psnr_db = psnr(x_o, result.adversarial);
  return result;
}

namespace {

void require_gradients(const Backbone& model) {
  if (!model.info().gradient_capable)
    throw GradientUnavailable(model.model_id() + " cannot be attacked white-box");
}

}  // namespace

AttackResult taa_attack(const Backbone& model, const Image& x_o,
                        const MeanVector& mu, const AttackConfig& cfg) {
  require_gradients(model);
  cfg.validate();
  const int layer = cfg.resolved_layer(model);
  model.check_input(x_o, layer);
  const FeatureVector z_o = model.forward_features(x_o, layer, cfg.agg);

  std::vector<double> center_vec(z_o.size(), 0.0);
  if (cfg.centering) {
    if (mu.mu.size() != z_o.size())
      throw DimensionMismatch("mean vector has " + std::to_string(mu.mu.size()) +
                              " dims, features have " + std::to_string(z_o.size()));
    if (mu.layer != 0 && mu.layer != layer)
      throw DimensionMismatch("mean vector was estimated at layer " +
                              std::to_string(mu.layer));
    if (!(mu.agg == cfg.agg))
      throw DimensionMismatch("mean vector aggregation " + mu.agg.to_string() +
                              " does not match " + cfg.agg.to_string());
    center_vec = mu.mu;
  }
  CenteredFeature target = center(z_o, center_vec);
  bool fallback = false;
  if (target.norm < kDegenerateNorm) {
    // The original sits on the dataset mean; use the raw features instead.
    fallback = true;
    std::fill(center_vec.begin(), center_vec.end(), 0.0);
    target = center(z_o, center_vec);
    if (target.norm < kDegenerateNorm)
      throw DegenerateFeature("original image has all-zero features");
  }

  const FeatureLoss loss = [&](std::span<const double> z, std::span<double> grad) {
    const CenteredFeature u = center(z, center_vec);
    return cosine_with_grad(u.z_tilde, target.z_tilde, grad);
  };
  const GradientOracle oracle = [&](const Image& x) {
    return model.input_gradient(x, layer, cfg.agg, loss);
  };
  const ImageObjective objective = [&](const Image& x) {
    return cosine_loss(center(model.forward_features(x, layer, cfg.agg), center_vec),
                       target);
  };

  AttackResult result = run_attack_loop(x_o, cfg, oracle, objective);
  result.fallback_uncentered = fallback;
  if (cfg.early_stop_tau)
    result.succeeded = result.final_loss < *cfg.early_stop_tau;
  else
    result.succeeded = !result.loss_trace.empty() &&
                       result.final_loss < result.loss_trace.front();
  return result;
}

double classification_margin(std::span<const double> logits, int true_class,
                             std::span<double> grad_logits) {
  const int C = static_cast<int>(logits.size());
  if (true_class < 0 || true_class >= C)
    throw InvalidArgument("true class outside [0, num_classes)");
  if (C < 2) throw InvalidArgument("margin needs at least two classes");
  const std::vector<double> p = softmax(logits);
  int runner_up = true_class == 0 ? 1 : 0;
  for (int c = 0; c < C; ++c)
    if (c != true_class && p[c] > p[runner_up]) runner_up = c;
  if (!grad_logits.empty()) {
    // d p_a / d l_k = p_a (delta_ak - p_k)
    for (int k = 0; k < C; ++k) {
      const double dt = (k == true_class ? p[true_class] : 0.0) - p[true_class] * p[k];
      const double dr = (k == runner_up ? p[runner_up] : 0.0) - p[runner_up] * p[k];
      grad_logits[k] = dt - dr;
    }
  }
  return p[true_class] - p[runner_up];
}

AttackResult tsa_classification(const Backbone& model, const TaskHead& head,
                                const Image& x_o, int label,
                                const AttackConfig& cfg) {
  require_gradients(model);
  if (head.kind != HeadKind::classifier)
    throw InvalidArgument("tsa_classification needs a classifier head");
  if (label < 0 || label >= head.num_classes)
    throw InvalidArgument("label outside [0, num_classes)");
  model.check_input(x_o, head.layer);
  const ImageGeometry geom{x_o.height(), x_o.width(), model.info().patch_size};

  const FeatureLoss loss = [&](std::span<const double> z, std::span<double> grad) {
    const auto logits = head.forward(z, geom);
    std::vector<double> dlogits(logits.size());
    const double value = classification_margin(logits, label, dlogits);
    const auto dz = head.backward(dlogits, geom);
    std::copy(dz.begin(), dz.end(), grad.begin());
    return value;
  };
  const GradientOracle oracle = [&](const Image& x) {
    return model.input_gradient(x, head.layer, head.agg, loss);
  };
  const ImageObjective objective = [&](const Image& x) {
    return classification_margin(head.logits(model, x), label);
  };
  AttackResult result = run_attack_loop(x_o, cfg, oracle, objective);
  result.succeeded = head.classify(model, result.adversarial) != label;
  return result;
}

AttackResult tsa_segmentation(const Backbone& model, const TaskHead& head,
                              const Image& x_o, std::span<const int> gt_mask,
                              const AttackConfig& cfg) {
  require_gradients(model);
  if (head.kind != HeadKind::segmenter)
    throw InvalidArgument("tsa_segmentation needs a segmenter head");
  const std::size_t pixels = static_cast<std::size_t>(x_o.height()) * x_o.width();
  if (!gt_mask.empty() && gt_mask.size() != pixels)
    throw DimensionMismatch("ground-truth mask does not match the image");
  model.check_input(x_o, head.layer);
  const ImageGeometry geom{x_o.height(), x_o.width(), model.info().patch_size};
  const int C = head.num_classes;
  // The untargeted objective pushes away from the clean prediction, which is
  // defined for every input regardless of the ground truth.
  const std::vector<int> clean = head.segment(model, x_o);

  auto neg_cross_entropy = [&](std::span<const double> logits,
                               std::vector<double>* dlogits) {
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      const auto lp = logits.subspan(p * C, C);
      const auto prob = softmax(lp);
      total += -std::log(std::max(prob[clean[p]], 1e-300));
      if (dlogits)
        for (int k = 0; k < C; ++k)
          (*dlogits)[p * C + k] = -(prob[k] - (k == clean[p] ? 1.0 : 0.0)) * inv;
    }
    return -total * inv;
  };

  const FeatureLoss loss = [&](std::span<const double> z, std::span<double> grad) {
    const auto logits = head.forward(z, geom);
    std::vector<double> dlogits(logits.size());
    const double value = neg_cross_entropy(logits, &dlogits);
    const auto dz = head.backward(dlogits, geom);
    std::copy(dz.begin(), dz.end(), grad.begin());
    return value;
  };
  const GradientOracle oracle = [&](const Image& x) {
    return model.input_gradient(x, head.layer, head.agg, loss);
  };
  const ImageObjective objective = [&](const Image& x) {
    return neg_cross_entropy(head.logits(model, x), nullptr);
  };
  AttackResult result = run_attack_loop(x_o, cfg, oracle, objective);
  const std::vector<int> adv = head.segment(model, result.adversarial);
  result.succeeded = miou_percent(adv, clean, C) < 50.0;
  return result;
}

std::string trace_jsonl(const AttackResult& result) {
  std::ostringstream os;
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
    nlohmann::json rec = {{"step", i},
                          {"loss", result.loss_trace[i]},
                          {"linf", result.linf_trace[i]}};
    os << rec.dump() << "\n";
  }
  return os.str();
}

}  // namespace taa
