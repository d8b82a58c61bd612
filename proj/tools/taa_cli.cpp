// taa: command-line front end for attacks, evaluation, campaigns and reports.
//
// Exit codes: 0 success, 1 validation or usage error, 2 partial failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "taa/attack.hpp"
#include "taa/datasets.hpp"
#include "taa/errors.hpp"
#include "taa/feature_stats.hpp"
#include "taa/harness.hpp"
#include "taa/image.hpp"
#include "taa/registry.hpp"
#include "taa/rng.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kPartial = 2;

double parse_fraction(const std::string& text) {
  const auto slash = text.find('/');
  try {
    if (slash == std::string::npos) return std::stod(text);
    return std::stod(text.substr(0, slash)) / std::stod(text.substr(slash + 1));
  } catch (const std::exception&) {
    throw taa::ValidationError("expected a number or a/b fraction, got '" + text + "'");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw taa::IoFailure("cannot write " + path.string());
  f << text;
}

struct AttackArgs {
  std::string model = "ref-vit-d2-e32-p4-s7";
  std::vector<std::string> images;
  std::string out = ".";
  std::string mean_path;
  bool zero_mean = false;
  int mean_samples = 256;
  std::string eps = "8/255";
  std::string alpha = "0.0004";
  int steps = 50;
  std::string step_rule = "sign";
  double momentum_decay = 1.0;
  int layer = 0;
  std::string agg = "patch_tokens-concat_flatten";
  bool no_centering = false;
  std::optional<double> tau;
  std::optional<double> target_psnr;
  std::uint64_t seed = 0;
};

// Mean over seeded synthetic training images of the input's size.
taa::MeanVector synthetic_mean(const taa::Backbone& model, int size, int samples, int layer,
                               const taa::AggregationSpec& agg, std::uint64_t seed) {
  taa::BlobsSpec spec;
  spec.image_size = size;
  spec.train_count = samples;
  spec.eval_count = 0;
  spec.seed = seed;
  std::vector<taa::Image> images;
  for (const auto& li : taa::make_blobs(spec).train) images.push_back(li.image);
  return taa::estimate_mean(model, images, layer, agg, "blobs:train");
}

int cmd_attack(const AttackArgs& a) {
  const auto registry = taa::list_adapters();
  const taa::BackboneHandle model = registry.create(a.model);
  taa::AttackConfig cfg;
  cfg.eps_inf = parse_fraction(a.eps);
  cfg.alpha = parse_fraction(a.alpha);
  cfg.num_steps = a.steps;
  cfg.step_rule = taa::parse_step_rule(a.step_rule);
  cfg.momentum_decay = a.momentum_decay;
  cfg.layer = a.layer;
  cfg.agg = taa::AggregationSpec::parse(a.agg);
  cfg.centering = !a.no_centering;
  cfg.early_stop_tau = a.tau;
  cfg.target_psnr = a.target_psnr;
  cfg.validate();
  const int layer = cfg.resolved_layer(*model);

  fs::create_directories(a.out);
  std::optional<taa::MeanVector> mu;
  int failures = 0;
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    const fs::path in = a.images[i];
    const std::string image_id = in.stem().string();
    try {
      const taa::Image x = taa::read_png(in);
      if (!mu) {
        if (!a.mean_path.empty()) {
          mu = taa::load_mean(a.mean_path);
        } else if (a.zero_mean) {
          mu = taa::MeanVector::zeros(model->forward_features(x, layer, cfg.agg).size(),
                                      model->model_id(), layer, cfg.agg);
        } else {
          if (x.height() != x.width())
            throw taa::ValidationError("synthetic mean needs square images; pass --mean");
          mu = synthetic_mean(*model, x.height(), a.mean_samples, layer, cfg.agg, a.seed);
        }
      }
      cfg.seed = taa::derive_seed(a.seed, "attack:cli:" + image_id);
      const taa::AttackResult r = taa::taa_attack(*model, x, *mu, cfg);
      const std::string stem = image_id + ".taa." + a.model;
      taa::write_png(r.adversarial, fs::path(a.out) / (stem + ".png"));
      write_text(fs::path(a.out) / (stem + ".trace.jsonl"), taa::trace_jsonl(r));
      std::printf("%s final_cos=%.6f linf=%.6f psnr=%.2f dB%s\n", image_id.c_str(), r.final_loss,
                  r.linf, r.psnr_db, r.fallback_uncentered ? " (uncentered fallback)" : "");
    } catch (const taa::ValidationError&) {
      throw;
    } catch (const taa::UnknownModel&) {
      throw;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "%s: %s\n", image_id.c_str(), e.what());
      ++failures;
    }
  }
  return failures == 0 ? kOk : kPartial;
}

int cmd_mean(const std::string& model_id, int layer, const std::string& agg_text, int samples,
             int size, std::uint64_t seed, const std::string& out) {
  const auto model = taa::list_adapters().create(model_id);
  const taa::AggregationSpec agg = taa::AggregationSpec::parse(agg_text);
  const int resolved = layer <= 0 ? model->num_layers() : layer;
  const taa::MeanVector mu = synthetic_mean(*model, size, samples, resolved, agg, seed);
  fs::create_directories(out);
  const fs::path path = fs::path(out) / taa::mean_filename(model_id, resolved, agg);
  taa::save_mean(mu, path);
  std::printf("%s (dim %zu, N_T %d)\n", path.c_str(), mu.mu.size(), mu.sample_count);
  return kOk;
}

taa::RunManifest manifest_with_overrides(const std::string& path,
                                         const std::optional<std::uint64_t>& seed,
                                         const std::string& out) {
  taa::RunManifest m = taa::RunManifest::load(path);
  if (seed) m.seed = *seed;
  if (!out.empty()) m.output_dir = out;
  return m;
}

int cmd_campaign(const std::string& manifest, const std::optional<std::uint64_t>& seed,
                 const std::string& out, bool craft) {
  const taa::RunManifest m = manifest_with_overrides(manifest, seed, out);
  const taa::CampaignResult r = taa::run_campaign(m, {craft});
  std::size_t skipped = 0;
  for (const auto& c : r.matrix.cells) skipped += c.skipped;
  std::printf("%zu cells, %zu skipped -> %s\n", r.matrix.cells.size(), skipped,
              r.output_dir.c_str());
  return r.matrix.has_failures() ? kPartial : kOk;
}

int cmd_ablate(const std::string& manifest, const std::optional<std::uint64_t>& seed,
               const std::string& out, const std::string& axis,
               const std::vector<std::string>& values) {
  const taa::RunManifest m = manifest_with_overrides(manifest, seed, out);
  const taa::AblationTable t = taa::run_ablation(m, taa::parse_ablation_axis(axis), values);
  const fs::path dir = m.output_dir;
  write_text(dir / ("ablation-" + axis + ".csv"), taa::ablation_to_csv(t));
  write_text(dir / ("ablation-" + axis + ".json"), taa::ablation_to_json(t));
  std::fputs(taa::ablation_to_csv(t).c_str(), stdout);
  return kOk;
}

int cmd_report(const std::string& input, const std::string& format, const std::string& out,
               const std::string& attack) {
  std::ifstream f(input, std::ios::binary);
  if (!f) throw taa::ValidationError("cannot read " + input);
  const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const taa::TransferMatrix m = fs::path(input).extension() == ".csv" ? taa::matrix_from_csv(text)
                                                                       : taa::matrix_from_json(text);
  taa::emit_report(m, taa::parse_report_format(format), out, attack);
  return m.has_failures() ? kPartial : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-agnostic adversarial attacks on vision transformer features"};
  app.require_subcommand(1);
  app.set_version_flag("--version", TAA_VERSION);

  AttackArgs aa;
  auto* attack = app.add_subcommand("attack", "craft adversarial images for one or more PNGs");
  attack->add_option("--model", aa.model, "source model id")->capture_default_str();
  attack->add_option("--image", aa.images, "input PNG (repeatable)")->required();
  attack->add_option("--out", aa.out, "output directory")->capture_default_str();
  attack->add_option("--mean", aa.mean_path, "mean vector file (see 'mean')");
  attack->add_flag("--zero-mean", aa.zero_mean, "use mu = 0");
  attack->add_option("--mean-samples", aa.mean_samples, "N_T for the synthetic mean")
      ->capture_default_str();
  attack->add_option("--eps", aa.eps, "L-inf budget, number or a/b")->capture_default_str();
  attack->add_option("--alpha", aa.alpha, "step size")->capture_default_str();
  attack->add_option("--steps", aa.steps, "iterations")->capture_default_str();
  attack->add_option("--step-rule", aa.step_rule, "plain_gradient | sign | momentum")
      ->capture_default_str();
  attack->add_option("--momentum-decay", aa.momentum_decay)->capture_default_str();
  attack->add_option("--layer", aa.layer, "1-based block, 0 = final")->capture_default_str();
  attack->add_option("--agg", aa.agg, "token aggregation")->capture_default_str();
  attack->add_flag("--no-centering", aa.no_centering);
  attack->add_option("--tau", aa.tau, "early-stop threshold on the loss");
  attack->add_option("--target-psnr", aa.target_psnr, "rescale to this PSNR (dB)");
  attack->add_option("--seed", aa.seed)->capture_default_str();

  std::string mean_model = "ref-vit-d2-e32-p4-s7", mean_agg = "patch_tokens-concat_flatten",
              mean_out = ".";
  int mean_layer = 0, mean_samples = 256, mean_size = 32;
  std::uint64_t mean_seed = 0;
  auto* mean = app.add_subcommand("mean", "estimate and persist a feature mean");
  mean->add_option("--model", mean_model)->capture_default_str();
  mean->add_option("--layer", mean_layer, "0 = final")->capture_default_str();
  mean->add_option("--agg", mean_agg)->capture_default_str();
  mean->add_option("--samples", mean_samples, "N_T")->capture_default_str();
  mean->add_option("--image-size", mean_size)->capture_default_str();
  mean->add_option("--seed", mean_seed)->capture_default_str();
  mean->add_option("--out", mean_out)->capture_default_str();

  std::string manifest_path, out_dir, axis = "layer", report_in, report_format = "csv",
                                       report_out, report_attack;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> axis_values;
  auto add_manifest_opts = [&](CLI::App* sub) {
    sub->add_option("--manifest", manifest_path, "run manifest (JSON)")->required();
    sub->add_option("--seed", seed, "override the manifest seed");
    sub->add_option("--out", out_dir, "override the manifest output_dir");
  };
  auto* campaign = app.add_subcommand("campaign", "craft and evaluate a transfer matrix");
  add_manifest_opts(campaign);
  auto* eval = app.add_subcommand("eval", "re-evaluate stored adversarial PNGs of a campaign");
  add_manifest_opts(eval);
  auto* ablate = app.add_subcommand("ablate", "white-box sweep over one attack setting");
  add_manifest_opts(ablate);
  ablate->add_option("--axis", axis, "layer | aggregation | centering | step_rule")
      ->capture_default_str();
  ablate->add_option("--values", axis_values, "swept values (default: whole axis)");
  auto* report = app.add_subcommand("report", "render a stored matrix");
  report->add_option("--in", report_in, "matrix.json or matrix.csv")->required();
  report->add_option("--format", report_format, "csv | json | heatmap")->capture_default_str();
  report->add_option("--out", report_out, "output file")->required();
  report->add_option("--attack", report_attack, "attack shown in the heatmap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) std::cerr << "\n" << taa::manifest_schema();
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*attack) return cmd_attack(aa);
    if (*mean)
      return cmd_mean(mean_model, mean_layer, mean_agg, mean_samples, mean_size, mean_seed,
                      mean_out);
    if (*campaign) return cmd_campaign(manifest_path, seed, out_dir, true);
    if (*eval) return cmd_campaign(manifest_path, seed, out_dir, false);
    if (*ablate) return cmd_ablate(manifest_path, seed, out_dir, axis, axis_values);
    if (*report) return cmd_report(report_in, report_format, report_out, report_attack);
  } catch (const taa::UnknownModel& e) {
    std::cerr << e.what() << "\n";
    return kValidation;
  } catch (const taa::ValidationError& e) {
    std::cerr << e.what() << "\n\n" << taa::manifest_schema();
    return kValidation;
  } catch (const taa::InvalidArgument& e) {
    std::cerr << e.what() << "\n";
    return kValidation;
  } catch (const taa::UnsupportedParameter& e) {
    std::cerr << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kPartial;
  }
  return kOk;
}
