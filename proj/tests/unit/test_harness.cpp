#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"
#include "taa/errors.hpp"
#include "taa/harness.hpp"

using namespace taa;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json small_manifest(const fs::path& out) {
  return json{{"manifest_version", 1},
              {"seed", 5},
              {"source_models", {"ref-vit-d2-e32-p4-s7"}},
              {"target_models", {"ref-vit-d2-e32-p4-s7"}},
              {"attacks", {{{"name", "taa"}, {"type", "taa"}, {"config", {{"num_steps", 5}}}}}},
              {"tasks", {"classification"}},
              {"datasets", {{"blobs", {{"train_count", 24}, {"eval_count", 4}}}}},
              {"heads", {{"epochs", 10}}},
              {"output_dir", out.string()}};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TAA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

MatrixCell cell(const std::string& src, const std::string& tgt, Task task,
                const std::string& attack, AttackType type, double clean, double attacked) {
  MatrixCell c;
  c.source = src;
  c.target = tgt;
  c.task = task;
  c.attack = attack;
  c.attack_type = type;
  c.white_box = src == tgt;
  c.metric_name = task == Task::segmentation ? "mIoU" : "accuracy";
  c.clean = clean;
  c.attacked = attacked;
  c.psnr_db = 40.0 + 1.0 / 3.0;
  c.images = 10;
  return c;
}

TransferMatrix two_by_two() {
  TransferMatrix m;
  m.manifest_sha256 = "abc";
  m.sources = {"a", "b"};
  m.targets = {"a", "b"};
  m.tasks = {Task::classification};
  m.attacks = {"taa", "tsa"};
  for (const auto& s : m.sources)
    for (const auto& t : m.targets) {
      m.cells.push_back(cell(s, t, Task::classification, "taa", AttackType::taa, 90, 30.1));
      m.cells.push_back(cell(s, t, Task::classification, "tsa", AttackType::tsa_cls, 90, 0.1));
    }
  return m;
}

}  // namespace

TEST_SUITE("manifest") {
  TEST_CASE("valid manifest parses with defaults") {
    const RunManifest m = RunManifest::from_json(small_manifest("o").dump());
    CHECK(m.seed == 5);
    REQUIRE(m.attacks.size() == 1);
    CHECK(m.attacks[0].config.num_steps == 5);
    CHECK(m.attacks[0].config.alpha == 0.0004);
    CHECK(m.mean_samples == 24);  // clamped to the training split
    CHECK(RunManifest::from_json(m.to_json()).to_json() == m.to_json());
  }

  TEST_CASE("hash ignores the output directory only") {
    const RunManifest a = RunManifest::from_json(small_manifest("x").dump());
    const RunManifest b = RunManifest::from_json(small_manifest("y").dump());
    CHECK(a.sha256() == b.sha256());
    CHECK(a.sha256().size() == 64u);
    auto j = small_manifest("x");
    j["seed"] = 6;
    CHECK(RunManifest::from_json(j.dump()).sha256() != a.sha256());
  }

  TEST_CASE("fractions for the budget") {
    auto j = small_manifest("o");
    j["attacks"][0]["config"]["eps_inf"] = "4/255";
    CHECK(RunManifest::from_json(j.dump()).attacks[0].config.eps_inf == 4.0 / 255.0);
  }

  TEST_CASE("unknown keys are rejected at every level") {
    auto j = small_manifest("o");
    j["extra"] = 1;
    CHECK_THROWS_AS(RunManifest::from_json(j.dump()), ValidationError);
    j = small_manifest("o");
    j["attacks"][0]["config"]["stepz"] = 3;
    CHECK_THROWS_AS(RunManifest::from_json(j.dump()), ValidationError);
    j = small_manifest("o");
    j["datasets"]["blobs"]["colour"] = 3;
    CHECK_THROWS_AS(RunManifest::from_json(j.dump()), ValidationError);
  }

  TEST_CASE("invalid manifests") {
    CHECK_THROWS_AS(RunManifest::from_json("{not json"), ValidationError);
    auto j = small_manifest("o");
    j["manifest_version"] = 2;
    CHECK_THROWS_AS(RunManifest::from_json(j.dump()), ValidationError);
    j = small_manifest("o");
    j["attacks"][0]["name"] = "a/b";
    CHECK_THROWS_AS(RunManifest::from_json(j.dump()), ValidationError);
    j = small_manifest("o");
    j["tasks"] = {"captioning"};
    CHECK_THROWS_AS(RunManifest::from_json(j.dump()), ValidationError);
    j = small_manifest("o");
    j["target_models"] = {"vit-huge-from-nowhere"};
    CHECK_THROWS_AS(RunManifest::from_json(j.dump()), UnknownModel);
    CHECK(manifest_schema().find("source_models") != std::string::npos);
  }
}

TEST_SUITE("reports") {
  TEST_CASE("csv and json round trips are lossless") {
    TransferMatrix m = two_by_two();
    m.cells[3].skipped = true;
    m.cells[3].reason = "GradientUnavailable: no, \"gradients\"";
    m.cells[3].clean = std::numeric_limits<double>::quiet_NaN();
    m.cells[3].attacked = std::numeric_limits<double>::quiet_NaN();
    const std::string csv = matrix_to_csv(m);
    const TransferMatrix via_json = matrix_from_json(matrix_to_json(matrix_from_csv(csv)));
    CHECK(matrix_to_csv(via_json) == csv);
    CHECK(via_json.cells[0] == m.cells[0]);
    CHECK(via_json.cells[3].reason == m.cells[3].reason);
    CHECK(matrix_to_json(matrix_from_json(matrix_to_json(m))) == matrix_to_json(m));
  }

  TEST_CASE("incomplete matrices are refused") {
    TransferMatrix m = two_by_two();
    m.cells.pop_back();
    CHECK_THROWS_AS(m.check_complete(), IncompleteMatrix);
    test::TempDir dir("incomplete");
    CHECK_THROWS_AS(emit_report(m, ReportFormat::csv, dir / "m.csv"), IncompleteMatrix);
    CHECK_NOTHROW(two_by_two().check_complete());
  }

  TEST_CASE("relative efficiency against the white-box TSA") {
    const auto eff = relative_efficiencies(two_by_two());
    int taa_rows = 0;
    for (const auto& e : eff)
      if (e.attack == "taa") {
        ++taa_rows;
        CHECK(e.eta == doctest::Approx(100.0 * (30.1 - 90) / (0.1 - 90)));
      }
    CHECK(taa_rows == 4);
  }

  TEST_CASE("single-cell heatmap") {
    TransferMatrix m;
    m.sources = m.targets = {"a"};
    m.tasks = {Task::classification};
    m.attacks = {"taa"};
    m.cells = {cell("a", "a", Task::classification, "taa", AttackType::taa, 90, 20)};
    const HeatmapData d = matrix_heatmap(m, "taa");
    REQUIRE(d.cells.size() == 1u);
    CHECK(d.cells[0].value == 20.0);
    const auto r = render_heatmap(d);
    CHECK(r.image.height() > 0);
    const auto side = json::parse(r.sidecar_json);
    CHECK(side["cells"].size() == 1u);
    CHECK(side["cells"][0]["value"] == 20.0);
    CHECK(side.contains("vmin"));
    CHECK(side.contains("vmax"));
    CHECK(render_heatmap(d).image == r.image);
  }

  TEST_CASE("skipped cells are hatched and explained") {
    TransferMatrix m = two_by_two();
    for (auto& c : m.cells)
      if (c.source == "b" && c.target == "a") {
        c.skipped = true;
        c.reason = "UnknownModel: weights missing";
      }
    test::TempDir dir("heat");
    emit_report(m, ReportFormat::heatmap, dir / "h.png", "taa");
    const auto side = json::parse(slurp(dir / "h.png.json"));
    int skipped = 0;
    for (const auto& c : side["cells"])
      if (c["skipped"].get<bool>()) {
        ++skipped;
        CHECK(c["row"] == "b");
        CHECK(c["col"] == "a");
        CHECK(c["value"].is_null());
        CHECK(c["reason"].get<std::string>().find("UnknownModel: weights missing") !=
              std::string::npos);
      }
    CHECK(skipped == 1);
    const Image png = read_png(dir / "h.png");
    CHECK(png.width() > 0);
  }

  TEST_CASE("empty or mismatched heatmap data") {
    CHECK_THROWS_AS(render_heatmap(HeatmapData{}), InvalidArgument);
    HeatmapData d;
    d.rows = {"a"};
    d.cols = {"b", "c"};
    d.cells.resize(1);
    CHECK_THROWS_AS(render_heatmap(d), IncompleteMatrix);
  }
}

TEST_SUITE("campaign") {
  TEST_CASE("one source, one target: single white-box cell") {
    test::TempDir dir("campaign1");
    const RunManifest m = RunManifest::from_json(small_manifest(dir / "out").dump());
    const CampaignResult r = run_campaign(m);
    REQUIRE(r.matrix.cells.size() == 1u);
    const MatrixCell& c = r.matrix.cells[0];
    CHECK(c.white_box);
    CHECK_FALSE(c.skipped);
    CHECK(c.images == 4);
    CHECK(r.matrix.manifest_sha256 == m.sha256());
    for (const char* f : {"matrix.csv", "matrix.json", "heatmap.png", "heatmap.png.json",
                          "run.lock.json", "manifest.json", "efficiency.csv"})
      CHECK(fs::exists(r.output_dir / f));
    CHECK(fs::exists(r.output_dir / "cells" /
                     "ref-vit-d2-e32-p4-s7.ref-vit-d2-e32-p4-s7.classification.taa.csv"));
    CHECK(fs::exists(r.output_dir / "adv" / "ref-vit-d2-e32-p4-s7" / "taa" /
                     "blobs-eval-00000.png"));
    CHECK(slurp(r.output_dir / "matrix.csv").find(m.sha256()) != std::string::npos);
  }

  TEST_CASE("reruns and re-evaluation are bitwise identical") {
    test::TempDir dir("campaign2");
    auto j = small_manifest(dir / "a");
    j["tasks"] = {"classification", "segmentation"};
    j["transforms"] = {"jpeg"};
    const RunManifest ma = RunManifest::from_json(j.dump());
    j["output_dir"] = (dir / "b").string();
    const RunManifest mb = RunManifest::from_json(j.dump());
    const auto ra = run_campaign(ma);
    const auto rb = run_campaign(mb);
    CHECK(ra.matrix == rb.matrix);
    for (const char* f : {"matrix.csv", "matrix.json", "heatmap.png", "run.lock.json"})
      CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    const std::string lock = slurp(dir / "a" / "run.lock.json");
    run_campaign(ma, {false});
    CHECK(slurp(dir / "a" / "run.lock.json") == lock);
  }

  TEST_CASE("failing cells are skipped with a reason") {
    test::TempDir dir("campaign3");
    auto j = small_manifest(dir / "out");
    j["source_models"] = {"blackbox:ref-vit-d2-e32-p4-s7"};
    const CampaignResult r = run_campaign(RunManifest::from_json(j.dump()));
    REQUIRE(r.matrix.cells.size() == 1u);
    CHECK(r.matrix.cells[0].skipped);
    CHECK(r.matrix.cells[0].reason.find("GradientUnavailable") != std::string::npos);
    CHECK(r.matrix.has_skipped());
    CHECK(r.matrix.has_failures());
  }

  TEST_CASE("task-specific attacks on retrieval are not applicable, not failed") {
    test::TempDir dir("campaign5");
    auto j = small_manifest(dir / "out");
    j["attacks"].push_back({{"name", "tsa-cls"}, {"type", "tsa_cls"}, {"config", {{"num_steps", 2}}}});
    j["tasks"] = {"retrieval"};
    const CampaignResult r = run_campaign(RunManifest::from_json(j.dump()));
    const MatrixCell* taa = r.matrix.find(r.matrix.sources[0], r.matrix.targets[0],
                                          Task::retrieval, "taa");
    const MatrixCell* tsa = r.matrix.find(r.matrix.sources[0], r.matrix.targets[0],
                                          Task::retrieval, "tsa-cls");
    REQUIRE(taa);
    REQUIRE(tsa);
    CHECK_FALSE(taa->skipped);
    CHECK(taa->metric_name == "mAP");
    CHECK(tsa->skipped);
    CHECK(tsa->reason.rfind(kNotApplicable, 0) == 0);
    CHECK(r.matrix.has_skipped());
    CHECK_FALSE(r.matrix.has_failures());
  }

  TEST_CASE("white-box harm exceeds transferred harm") {
    test::TempDir dir("campaign4");
    auto j = small_manifest(dir / "out");
    j["source_models"] = j["target_models"] = {"ref-vit-d2-e32-p4-s7", "ref-vit-d2-e32-p4-s8"};
    j["attacks"][0]["config"]["num_steps"] = 50;
    j["datasets"]["blobs"] = {{"train_count", 160}, {"eval_count", 24}};
    j["heads"]["epochs"] = 100;
    const CampaignResult r = run_campaign(RunManifest::from_json(j.dump()));
    for (const auto& src : r.matrix.sources)
      for (const auto& tgt : r.matrix.targets) {
        if (src == tgt) continue;
        const MatrixCell* white = r.matrix.find(tgt, tgt, Task::classification, "taa");
        const MatrixCell* cross = r.matrix.find(src, tgt, Task::classification, "taa");
        REQUIRE(white);
        REQUIRE(cross);
        MESSAGE(src << " -> " << tgt << ": clean " << cross->clean << ", cross "
                    << cross->attacked << ", white-box " << white->attacked);
        CHECK(white->clean - white->attacked > cross->clean - cross->attacked);
      }
  }
}

TEST_SUITE("ablation") {
  TEST_CASE("layer sweep has one row per block") {
    test::TempDir dir("abl1");
    const auto t =
        run_ablation(RunManifest::from_json(small_manifest(dir / "o").dump()), AblationAxis::layer);
    REQUIRE(t.rows.size() == 2u);
    CHECK(t.rows[0].layer == 1);
    CHECK(t.rows[1].layer == 2);
    CHECK(ablation_to_csv(t).find("final_cos_sim") != std::string::npos);
  }

  TEST_CASE("centering sweep with zero mean gives identical rows") {
    test::TempDir dir("abl2");
    auto j = small_manifest(dir / "o");
    j["mean"] = {{"kind", "zero"}};
    const auto t = run_ablation(RunManifest::from_json(j.dump()), AblationAxis::centering);
    REQUIRE(t.rows.size() == 2u);
    CHECK(t.rows[0].centering != t.rows[1].centering);
    CHECK(t.rows[0].accuracy == t.rows[1].accuracy);
    CHECK(t.rows[0].cls_cos_sim == t.rows[1].cls_cos_sim);
    CHECK(t.rows[0].final_cos_sim == t.rows[1].final_cos_sim);
    CHECK(t.rows[0].attack_loss == t.rows[1].attack_loss);
    CHECK(t.rows[0].max_linf == t.rows[1].max_linf);
  }

  TEST_CASE("step-rule sweep respects the budget") {
    test::TempDir dir("abl3");
    const auto t = run_ablation(RunManifest::from_json(small_manifest(dir / "o").dump()),
                                AblationAxis::step_rule);
    REQUIRE(t.rows.size() == 3u);
    for (const auto& row : t.rows) CHECK(row.max_linf <= 8.0 / 255.0 + 1.0 / 510.0);
  }

  TEST_CASE("more than one source is rejected") {
    auto j = small_manifest("o");
    j["source_models"] = {"ref-vit-d2-e32-p4-s7", "ref-vit-d2-e32-p4-s8"};
    CHECK_THROWS_AS(run_ablation(RunManifest::from_json(j.dump()), AblationAxis::layer),
                    ValidationError);
  }
}

TEST_SUITE("cli") {
  TEST_CASE("attack writes the image and its trace") {
    test::TempDir dir("cli1");
    write_png(test::random_quantized(1), dir / "x.png");
    const std::string out = (dir / "d").string();
    CHECK(run_cli("attack --model ref-vit-d2-e32-p4-s7 --image " + (dir / "x.png").string() +
                  " --out " + out + " --steps 3 --mean-samples 8") == 0);
    CHECK(fs::exists(dir / "d" / "x.taa.ref-vit-d2-e32-p4-s7.png"));
    const std::string trace = slurp(dir / "d" / "x.taa.ref-vit-d2-e32-p4-s7.trace.jsonl");
    CHECK(std::count(trace.begin(), trace.end(), '\n') == 3);
  }

  TEST_CASE("validation errors exit 1") {
    test::TempDir dir("cli2");
    write_png(test::random_quantized(1), dir / "x.png");
    CHECK(run_cli("attack --model nope --image " + (dir / "x.png").string()) == 1);
    CHECK(run_cli("frobnicate") == 1);
    auto j = small_manifest(dir / "o");
    j["bogus"] = true;
    std::ofstream(dir / "bad.json") << j.dump();
    CHECK(run_cli("campaign --manifest " + (dir / "bad.json").string()) == 1);
  }

  TEST_CASE("campaign twice gives identical hashes; partial failure exits 2") {
    test::TempDir dir("cli3");
    std::ofstream(dir / "m.json") << small_manifest(dir / "o").dump();
    CHECK(run_cli("campaign --manifest " + (dir / "m.json").string()) == 0);
    const std::string lock = slurp(dir / "o" / "run.lock.json");
    CHECK(run_cli("campaign --manifest " + (dir / "m.json").string()) == 0);
    CHECK(slurp(dir / "o" / "run.lock.json") == lock);
    CHECK(run_cli("report --in " + (dir / "o" / "matrix.json").string() + " --format csv --out " +
                  (dir / "r.csv").string()) == 0);
    CHECK(slurp(dir / "r.csv") == slurp(dir / "o" / "matrix.csv"));

    auto j = small_manifest(dir / "p");
    j["source_models"] = {"blackbox:ref-vit-d2-e32-p4-s7"};
    std::ofstream(dir / "p.json") << j.dump();
    CHECK(run_cli("campaign --manifest " + (dir / "p.json").string()) == 2);
  }
}
