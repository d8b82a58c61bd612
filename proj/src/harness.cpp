#include "taa/harness.hpp"

#include <jpeglib.h>
#include <openssl/evp.h>
#include <openssl/opensslv.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "taa/errors.hpp"
#include "taa/registry.hpp"
#include "taa/rng.hpp"

#ifndef TAA_VERSION
#define TAA_VERSION "unknown"
#endif

namespace taa {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Enums

std::string to_string(AttackType type) {
  switch (type) {
    case AttackType::taa: return "taa";
    case AttackType::tsa_cls: return "tsa_cls";
    case AttackType::tsa_seg: return "tsa_seg";
  }
  return "taa";
}

AttackType parse_attack_type(const std::string& text) {
  if (text == "taa") return AttackType::taa;
  if (text == "tsa_cls") return AttackType::tsa_cls;
  if (text == "tsa_seg") return AttackType::tsa_seg;
  throw ValidationError("unknown attack type '" + text + "'");
}

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::layer: return "layer";
    case AblationAxis::aggregation: return "aggregation";
    case AblationAxis::centering: return "centering";
    case AblationAxis::step_rule: return "step_rule";
  }
  return "layer";
}

AblationAxis parse_ablation_axis(const std::string& text) {
  if (text == "layer") return AblationAxis::layer;
  if (text == "aggregation") return AblationAxis::aggregation;
  if (text == "centering") return AblationAxis::centering;
  if (text == "step_rule") return AblationAxis::step_rule;
  throw ValidationError("unknown ablation axis '" + text + "'");
}

ReportFormat parse_report_format(const std::string& text) {
  if (text == "csv") return ReportFormat::csv;
  if (text == "json") return ReportFormat::json;
  if (text == "heatmap") return ReportFormat::heatmap;
  throw ValidationError("unknown report format '" + text + "'");
}

// ---------------------------------------------------------------------------
// Hashing and versions

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw IoFailure("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot write " + path.string());
  f << text;
}

}  // namespace

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string software_versions_json() {
  json v = {{"taa", TAA_VERSION},
            {"compiler", __VERSION__},
            {"libpng", PNG_LIBPNG_VER_STRING},
            {"libjpeg", std::to_string(JPEG_LIB_VERSION)},
            {"openssl", OPENSSL_VERSION_TEXT},
            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  return v.dump();
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!obj.is_object()) throw ValidationError(where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw ValidationError("unknown key '" + key + "' in " + where);
}

template <typename T>
T get_as(const json& obj, const std::string& key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("bad or missing '" + key + "' in " + where);
  }
}

// Accepts a number or a "a/b" fraction string.
double parse_budget(const json& v, const std::string& where) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    const auto slash = s.find('/');
    try {
      if (slash == std::string::npos) return std::stod(s);
      return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
    } catch (const std::exception&) {
    }
  }
  throw ValidationError("bad budget value in " + where);
}

AttackConfig parse_attack_config(const json& j, const std::string& where) {
  check_keys(j,
             {"eps_inf", "alpha", "num_steps", "step_rule", "momentum_decay", "centering",
              "layer", "agg", "early_stop_tau", "target_psnr"},
             where);
  AttackConfig cfg;
  try {
    if (j.contains("eps_inf")) cfg.eps_inf = parse_budget(j["eps_inf"], where);
    if (j.contains("alpha")) cfg.alpha = parse_budget(j["alpha"], where);
    if (j.contains("num_steps")) cfg.num_steps = j["num_steps"].get<int>();
    if (j.contains("step_rule")) cfg.step_rule = parse_step_rule(j["step_rule"].get<std::string>());
    if (j.contains("momentum_decay")) cfg.momentum_decay = j["momentum_decay"].get<double>();
    if (j.contains("centering")) cfg.centering = j["centering"].get<bool>();
    if (j.contains("layer")) cfg.layer = j["layer"].get<int>();
    if (j.contains("agg")) cfg.agg = AggregationSpec::parse(j["agg"].get<std::string>());
    if (j.contains("early_stop_tau") && !j["early_stop_tau"].is_null())
      cfg.early_stop_tau = j["early_stop_tau"].get<double>();
    if (j.contains("target_psnr") && !j["target_psnr"].is_null())
      cfg.target_psnr = j["target_psnr"].get<double>();
    cfg.validate();
  } catch (const json::exception& e) {
    throw ValidationError(where + ": " + e.what());
  } catch (const Error& e) {
    if (dynamic_cast<const ValidationError*>(&e)) throw;
    throw ValidationError(where + ": " + e.what());
  }
  return cfg;
}

json attack_config_json(const AttackConfig& c) {
  json j = {{"eps_inf", c.eps_inf},
            {"alpha", c.alpha},
            {"num_steps", c.num_steps},
            {"step_rule", to_string(c.step_rule)},
            {"momentum_decay", c.momentum_decay},
            {"centering", c.centering},
            {"layer", c.layer},
            {"agg", c.agg.to_string()}};
  j["early_stop_tau"] = c.early_stop_tau ? json(*c.early_stop_tau) : json(nullptr);
  j["target_psnr"] = c.target_psnr ? json(*c.target_psnr) : json(nullptr);
  return j;
}

std::vector<std::string> string_list(const json& j, const std::string& key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].empty())
    throw ValidationError("'" + key + "' must be a nonempty list of model ids");
  std::vector<std::string> out;
  for (const auto& v : j[key]) {
    if (!v.is_string()) throw ValidationError("'" + key + "' entries must be strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

std::string manifest_schema() {
  return R"(manifest (JSON, unknown keys rejected):
{
  "manifest_version": 1,                       required, must be 1
  "seed": <uint>,                              master seed (default 0)
  "source_models": ["ref-vit-d2-e32-p4-s7"],   gradient-capable model ids
  "target_models": ["ref-vit-d2-e32-p4-s7"],   any resolvable model ids
  "attacks": [{"name": <str>, "type": "taa" | "tsa_cls" | "tsa_seg",
               "config": {"eps_inf": 0.0313 | "8/255", "alpha": 0.0004,
                          "num_steps": 50,
                          "step_rule": "plain_gradient" | "sign" | "momentum",
                          "momentum_decay": 1.0, "centering": true,
                          "layer": 0 (final), "agg": "patch_tokens-concat_flatten",
                          "early_stop_tau": null, "target_psnr": null}}],
  "tasks": ["classification", "segmentation", "retrieval"],
  "datasets": {"blobs": {"image_size", "num_classes", "train_count",
                         "eval_count", "noise", "seed"},
               "gallery": {"image_size", "groups", "per_group", "seed"}},
  "mean": {"samples": 256, "kind": "estimate" | "zero"},
  "heads": {"epochs": 150, "learning_rate": 0.05, "weight_decay": 0.01},
  "retrieval": {"agg": "class_token", "centered": true},
  "transforms": ["jpeg:50", "blur", ...],
  "output_dir": <path>
}
)";
}

RunManifest RunManifest::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
  }
  check_keys(j,
             {"manifest_version", "seed", "source_models", "target_models", "attacks", "tasks",
              "datasets", "mean", "heads", "retrieval", "transforms", "output_dir"},
             "manifest");
  RunManifest m;
  if (!j.contains("manifest_version") || get_as<int>(j, "manifest_version", "manifest") != 1)
    throw ValidationError("manifest_version must be 1");
  if (j.contains("seed")) m.seed = get_as<std::uint64_t>(j, "seed", "manifest");
  m.source_models = string_list(j, "source_models");
  m.target_models = string_list(j, "target_models");

  if (!j.contains("attacks") || !j["attacks"].is_array() || j["attacks"].empty())
    throw ValidationError("'attacks' must be a nonempty list");
  std::set<std::string> names;
  for (const auto& a : j["attacks"]) {
    check_keys(a, {"name", "type", "config"}, "attack");
    AttackEntry e;
    e.name = get_as<std::string>(a, "name", "attack");
    if (e.name.empty() || e.name.find_first_of("/.\\ ") != std::string::npos)
      throw ValidationError("attack name '" + e.name + "' must be nonempty without / . or spaces");
    if (!names.insert(e.name).second) throw ValidationError("duplicate attack name " + e.name);
    e.type = parse_attack_type(get_as<std::string>(a, "type", "attack " + e.name));
    e.config = parse_attack_config(a.value("config", json::object()), "attack " + e.name);
    m.attacks.push_back(std::move(e));
  }

  if (!j.contains("tasks") || !j["tasks"].is_array() || j["tasks"].empty())
    throw ValidationError("'tasks' must be a nonempty list");
  for (const auto& t : j["tasks"]) {
    try {
      const Task task = parse_task(t.get<std::string>());
      if (std::find(m.tasks.begin(), m.tasks.end(), task) != m.tasks.end())
        throw ValidationError("duplicate task");
      m.tasks.push_back(task);
    } catch (const json::exception&) {
      throw ValidationError("tasks must be strings");
    } catch (const InvalidArgument& e) {
      throw ValidationError(e.what());
    }
  }

  if (j.contains("datasets")) {
    const json& d = j["datasets"];
    check_keys(d, {"blobs", "gallery"}, "datasets");
    if (d.contains("blobs")) {
      const json& b = d["blobs"];
      check_keys(b, {"image_size", "num_classes", "train_count", "eval_count", "noise", "seed"},
                 "datasets.blobs");
      m.blobs.image_size = b.value("image_size", m.blobs.image_size);
      m.blobs.num_classes = b.value("num_classes", m.blobs.num_classes);
      m.blobs.train_count = b.value("train_count", m.blobs.train_count);
      m.blobs.eval_count = b.value("eval_count", m.blobs.eval_count);
      m.blobs.noise = b.value("noise", m.blobs.noise);
      m.blobs.seed = b.value("seed", m.blobs.seed);
    }
    if (d.contains("gallery")) {
      const json& g = d["gallery"];
      check_keys(g, {"image_size", "groups", "per_group", "seed"}, "datasets.gallery");
      m.gallery.image_size = g.value("image_size", m.gallery.image_size);
      m.gallery.groups = g.value("groups", m.gallery.groups);
      m.gallery.per_group = g.value("per_group", m.gallery.per_group);
      m.gallery.seed = g.value("seed", m.gallery.seed);
    }
  }
  // Without an explicit N_T the whole split is used when it is smaller than the default.
  m.mean_samples = std::min(m.mean_samples, m.blobs.train_count);
  if (j.contains("mean")) {
    const json& mu = j["mean"];
    check_keys(mu, {"samples", "kind"}, "mean");
    m.mean_samples = mu.value("samples", m.mean_samples);
    const std::string kind = mu.value("kind", std::string("estimate"));
    if (kind != "estimate" && kind != "zero")
      throw ValidationError("mean.kind must be 'estimate' or 'zero'");
    m.zero_mean = kind == "zero";
  }
  if (j.contains("heads")) {
    const json& h = j["heads"];
    check_keys(h, {"epochs", "learning_rate", "weight_decay"}, "heads");
    m.head_epochs = h.value("epochs", m.head_epochs);
    m.head_learning_rate = h.value("learning_rate", m.head_learning_rate);
    m.head_weight_decay = h.value("weight_decay", m.head_weight_decay);
  }
  if (j.contains("retrieval")) {
    const json& r = j["retrieval"];
    check_keys(r, {"agg", "centered"}, "retrieval");
    try {
      if (r.contains("agg")) m.retrieval_agg = AggregationSpec::parse(r["agg"].get<std::string>());
    } catch (const InvalidArgument& e) {
      throw ValidationError(e.what());
    }
    m.retrieval_centered = r.value("centered", m.retrieval_centered);
  }
  if (j.contains("transforms")) {
    if (!j["transforms"].is_array()) throw ValidationError("'transforms' must be a list");
    for (const auto& t : j["transforms"]) {
      try {
        m.transforms.push_back(TransformSpec::parse(t.get<std::string>()));
      } catch (const std::exception& e) {
        throw ValidationError(std::string("transforms: ") + e.what());
      }
    }
  }
  if (j.contains("output_dir")) m.output_dir = get_as<std::string>(j, "output_dir", "manifest");

  if (m.blobs.image_size <= 0 || m.blobs.num_classes < 2 || m.blobs.train_count < 1 ||
      m.blobs.eval_count < 1 || m.blobs.noise < 0)
    throw ValidationError("datasets.blobs has out-of-range fields");
  if (m.gallery.image_size <= 0 || m.gallery.groups < 1 || m.gallery.per_group < 1)
    throw ValidationError("datasets.gallery has out-of-range fields");
  if (m.mean_samples < 1 || m.mean_samples > m.blobs.train_count)
    throw ValidationError("mean.samples must lie in [1, datasets.blobs.train_count]");
  if (m.head_epochs < 0 || !(m.head_learning_rate > 0) || m.head_weight_decay < 0)
    throw ValidationError("heads has out-of-range fields");

  const AdapterRegistry registry = list_adapters();
  for (const auto* list : {&m.source_models, &m.target_models}) {
    std::set<std::string> seen;
    for (const auto& id : *list) {
      if (!registry.resolvable(id))
        throw UnknownModel("'" + id + "' is not a registered model\n" + registry.listing());
      if (!seen.insert(id).second) throw ValidationError("duplicate model id " + id);
    }
  }
  return m;
}

RunManifest RunManifest::load(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoFailure& e) {
    throw ValidationError(e.what());
  }
  return from_json(text);
}

std::string RunManifest::to_json() const {
  json attacks_json = json::array();
  for (const auto& a : attacks)
    attacks_json.push_back(
        {{"name", a.name}, {"type", taa::to_string(a.type)}, {"config", attack_config_json(a.config)}});
  json tasks_json = json::array();
  for (Task t : tasks) tasks_json.push_back(taa::to_string(t));
  json transforms_json = json::array();
  for (const auto& t : transforms) transforms_json.push_back(t.to_string());
  json j = {
      {"manifest_version", manifest_version},
      {"seed", seed},
      {"source_models", source_models},
      {"target_models", target_models},
      {"attacks", attacks_json},
      {"tasks", tasks_json},
      {"datasets",
       {{"blobs",
         {{"image_size", blobs.image_size},
          {"num_classes", blobs.num_classes},
          {"train_count", blobs.train_count},
          {"eval_count", blobs.eval_count},
          {"noise", blobs.noise},
          {"seed", blobs.seed}}},
        {"gallery",
         {{"image_size", gallery.image_size},
          {"groups", gallery.groups},
          {"per_group", gallery.per_group},
          {"seed", gallery.seed}}}}},
      {"mean", {{"samples", mean_samples}, {"kind", zero_mean ? "zero" : "estimate"}}},
      {"heads",
       {{"epochs", head_epochs},
        {"learning_rate", head_learning_rate},
        {"weight_decay", head_weight_decay}}},
      {"retrieval", {{"agg", retrieval_agg.to_string()}, {"centered", retrieval_centered}}},
      {"transforms", transforms_json},
      {"output_dir", output_dir}};
  return j.dump(2) + "\n";
}

std::string RunManifest::sha256() const {
  // The output location does not change any result.
  RunManifest copy = *this;
  copy.output_dir.clear();
  return sha256_hex(copy.to_json());
}

// ---------------------------------------------------------------------------
// Transfer matrix

const MatrixCell* TransferMatrix::find(const std::string& source, const std::string& target,
                                       Task task, const std::string& attack) const {
  for (const auto& c : cells)
    if (c.source == source && c.target == target && c.task == task && c.attack == attack)
      return &c;
  return nullptr;
}

void TransferMatrix::check_complete() const {
  for (const auto& s : sources)
    for (const auto& t : targets)
      for (Task k : tasks)
        for (const auto& a : attacks)
          if (!find(s, t, k, a))
            throw IncompleteMatrix("missing cell " + s + " -> " + t + " / " + taa::to_string(k) +
                                   " / " + a);
}

bool TransferMatrix::has_skipped() const {
  return std::any_of(cells.begin(), cells.end(), [](const MatrixCell& c) { return c.skipped; });
}

bool TransferMatrix::has_failures() const {
  return std::any_of(cells.begin(), cells.end(), [](const MatrixCell& c) {
    return c.skipped && c.reason.rfind(kNotApplicable, 0) != 0;
  });
}

namespace {

constexpr const char* kMatrixHeader =
    "source_model,target_model,task,attack,attack_type,white_box,metric_name,clean,attacked,"
    "psnr_db,images,status,reason";

template <typename T>
void push_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

void index_cell(TransferMatrix& m, const MatrixCell& c) {
  push_unique(m.sources, c.source);
  push_unique(m.targets, c.target);
  push_unique(m.tasks, c.task);
  push_unique(m.attacks, c.attack);
}

}  // namespace

std::string matrix_to_csv(const TransferMatrix& matrix) {
  std::ostringstream os;
  os << "# manifest_sha256=" << matrix.manifest_sha256 << "\n" << kMatrixHeader << "\n";
  for (const auto& c : matrix.cells)
    os << csv_field(c.source) << ',' << csv_field(c.target) << ',' << to_string(c.task) << ','
       << csv_field(c.attack) << ',' << to_string(c.attack_type) << ','
       << (c.white_box ? "true" : "false") << ',' << csv_field(c.metric_name) << ','
       << format_value(c.clean) << ',' << format_value(c.attacked) << ','
       << format_value(c.psnr_db) << ',' << c.images << ',' << (c.skipped ? "skipped" : "ok")
       << ',' << csv_field(c.reason) << "\n";
  return os.str();
}

TransferMatrix matrix_from_csv(const std::string& text) {
  TransferMatrix m;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line) && line.starts_with('#')) {
    const std::string key = "# manifest_sha256=";
    if (line.starts_with(key)) m.manifest_sha256 = line.substr(key.size());
  }
  if (line != kMatrixHeader) throw InvalidArgument("matrix CSV header mismatch");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 13) throw InvalidArgument("matrix CSV row needs 13 fields");
    MatrixCell c;
    c.source = f[0];
    c.target = f[1];
    c.task = parse_task(f[2]);
    c.attack = f[3];
    c.attack_type = parse_attack_type(f[4]);
    c.white_box = f[5] == "true";
    c.metric_name = f[6];
    c.clean = parse_value(f[7]);
    c.attacked = parse_value(f[8]);
    c.psnr_db = parse_value(f[9]);
    c.images = std::stoi(f[10]);
    c.skipped = f[11] == "skipped";
    c.reason = f[12];
    index_cell(m, c);
    m.cells.push_back(std::move(c));
  }
  return m;
}

std::string matrix_to_json(const TransferMatrix& matrix) {
  json cells = json::array();
  for (const auto& c : matrix.cells)
    cells.push_back({{"source_model", c.source},
                     {"target_model", c.target},
                     {"task", to_string(c.task)},
                     {"attack", c.attack},
                     {"attack_type", to_string(c.attack_type)},
                     {"white_box", c.white_box},
                     {"metric_name", c.metric_name},
                     {"clean", format_value(c.clean)},
                     {"attacked", format_value(c.attacked)},
                     {"psnr_db", format_value(c.psnr_db)},
                     {"images", c.images},
                     {"status", c.skipped ? "skipped" : "ok"},
                     {"reason", c.reason}});
  json tasks = json::array();
  for (Task t : matrix.tasks) tasks.push_back(to_string(t));
  json j = {{"manifest_sha256", matrix.manifest_sha256},
            {"sources", matrix.sources},
            {"targets", matrix.targets},
            {"tasks", tasks},
            {"attacks", matrix.attacks},
            {"cells", cells}};
  return j.dump(2) + "\n";
}

TransferMatrix matrix_from_json(const std::string& text) {
  TransferMatrix m;
  try {
    const json j = json::parse(text);
    m.manifest_sha256 = j.at("manifest_sha256").get<std::string>();
    m.sources = j.at("sources").get<std::vector<std::string>>();
    m.targets = j.at("targets").get<std::vector<std::string>>();
    for (const auto& t : j.at("tasks")) m.tasks.push_back(parse_task(t.get<std::string>()));
    m.attacks = j.at("attacks").get<std::vector<std::string>>();
    for (const auto& e : j.at("cells")) {
      MatrixCell c;
      c.source = e.at("source_model").get<std::string>();
      c.target = e.at("target_model").get<std::string>();
      c.task = parse_task(e.at("task").get<std::string>());
      c.attack = e.at("attack").get<std::string>();
      c.attack_type = parse_attack_type(e.at("attack_type").get<std::string>());
      c.white_box = e.at("white_box").get<bool>();
      c.metric_name = e.at("metric_name").get<std::string>();
      c.clean = parse_value(e.at("clean").get<std::string>());
      c.attacked = parse_value(e.at("attacked").get<std::string>());
      c.psnr_db = parse_value(e.at("psnr_db").get<std::string>());
      c.images = e.at("images").get<int>();
      c.skipped = e.at("status").get<std::string>() == "skipped";
      c.reason = e.at("reason").get<std::string>();
      m.cells.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("matrix JSON: ") + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Relative efficiency and heatmaps

namespace {

std::optional<AttackType> tsa_for(Task task) {
  if (task == Task::classification) return AttackType::tsa_cls;
  if (task == Task::segmentation) return AttackType::tsa_seg;
  return std::nullopt;
}

const MatrixCell* find_baseline(const TransferMatrix& m, const MatrixCell& cell, AttackType type) {
  for (const std::string& src : {cell.target, cell.source})
    for (const auto& c : m.cells)
      if (c.source == src && c.target == cell.target && c.task == cell.task &&
          c.attack_type == type && !c.skipped)
        return &c;
  return nullptr;
}

}  // namespace

std::vector<EfficiencyRecord> relative_efficiencies(const TransferMatrix& matrix) {
  std::vector<EfficiencyRecord> out;
  for (const auto& c : matrix.cells) {
    EfficiencyRecord r;
    r.source = c.source;
    r.target = c.target;
    r.task = c.task;
    r.attack = c.attack;
    const auto type = tsa_for(c.task);
    if (c.skipped) {
      r.baseline = "cell skipped";
    } else if (!type) {
      r.baseline = "no task-specific attack for this task";
    } else if (const MatrixCell* b = find_baseline(matrix, c, *type)) {
      r.baseline = b->attack + "@" + b->source;
      try {
        r.eta = relative_efficiency(c.attacked, c.clean, b->attacked);
      } catch (const DegenerateBaseline&) {
        r.baseline += " (DegenerateBaseline)";
      }
    } else {
      r.baseline = "no " + to_string(*type) + " baseline";
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string efficiencies_to_csv(const std::vector<EfficiencyRecord>& records) {
  std::ostringstream os;
  os << "source_model,target_model,task,attack,relative_efficiency,baseline\n";
  for (const auto& r : records)
    os << csv_field(r.source) << ',' << csv_field(r.target) << ',' << to_string(r.task) << ','
       << csv_field(r.attack) << ',' << format_value(r.eta) << ',' << csv_field(r.baseline)
       << "\n";
  return os.str();
}

HeatmapData matrix_heatmap(const TransferMatrix& matrix, const std::string& attack) {
  if (std::find(matrix.attacks.begin(), matrix.attacks.end(), attack) == matrix.attacks.end())
    throw InvalidArgument("attack '" + attack + "' is not in the matrix");
  const auto effs = relative_efficiencies(matrix);
  bool any_eta = false;
  for (const auto& e : effs)
    if (e.attack == attack && std::isfinite(e.eta)) any_eta = true;

  HeatmapData h;
  h.rows = matrix.sources;
  h.cols = matrix.targets;
  if (any_eta) {
    h.vmin = 0.0;
    h.vmax = 100.0;
  }
  h.title = any_eta ? attack + " relative efficiency % (mean over tasks)"
                    : attack + " " + to_string(matrix.tasks.front()) + " absolute";
  for (const auto& s : matrix.sources)
    for (const auto& t : matrix.targets) {
      HeatmapCell cell;
      std::string reasons;
      int skipped = 0, present = 0;
      double sum = 0.0;
      int n = 0;
      for (Task k : matrix.tasks) {
        const MatrixCell* c = matrix.find(s, t, k, attack);
        if (!c) continue;
        ++present;
        if (c->skipped) {
          ++skipped;
          if (!reasons.empty()) reasons += "; ";
          reasons += to_string(k) + ": " + c->reason;
          continue;
        }
        if (any_eta) {
          for (const auto& e : effs)
            if (e.source == s && e.target == t && e.task == k && e.attack == attack &&
                std::isfinite(e.eta)) {
              sum += e.eta;
              ++n;
            }
        } else if (k == matrix.tasks.front()) {
          sum += c->attacked;
          ++n;
        }
      }
      if (present > 0 && skipped == present) {
        cell.skipped = true;
        cell.reason = reasons;
      } else if (n > 0) {
        cell.value = sum / n;
      }
      h.cells.push_back(std::move(cell));
    }
  return h;
}

void emit_report(const TransferMatrix& matrix, ReportFormat format, const fs::path& path,
                 const std::string& attack) {
  matrix.check_complete();
  switch (format) {
    case ReportFormat::csv: write_file(path, matrix_to_csv(matrix)); return;
    case ReportFormat::json: write_file(path, matrix_to_json(matrix)); return;
    case ReportFormat::heatmap: {
      std::string chosen = attack;
      if (chosen.empty()) {
        if (matrix.attacks.empty()) throw IncompleteMatrix("matrix has no attacks");
        chosen = matrix.attacks.front();
        for (const auto& c : matrix.cells)
          if (c.attack_type == AttackType::taa) {
            chosen = c.attack;
            break;
          }
      }
      if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
      fs::path sidecar = path;
      sidecar += ".json";
      write_heatmap(matrix_heatmap(matrix, chosen), path, sidecar);
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Campaign

namespace {

std::string path_safe(const std::string& id) {
  std::string s = id;
  for (char& c : s)
    if (c == '/' || c == ':' || c == '\\' || c == ' ') c = '_';
  return s;
}

std::string image_id(const std::string& set, int index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%05d", set.c_str(), index);
  return buf;
}

struct Workspace {
  const RunManifest& manifest;
  std::string manifest_hash;
  AdapterRegistry registry = list_adapters();
  LabeledDataset blobs;
  RetrievalDataset gallery;
  std::vector<Image> mean_images;

  std::map<std::string, BackboneHandle> models;
  std::map<std::string, TaskHead> cls_heads, seg_heads;

  explicit Workspace(const RunManifest& m) : manifest(m), manifest_hash(m.sha256()) {
    // The blobs training split also feeds the mean, so it is always built.
    blobs = make_blobs(m.blobs);
    if (wants(Task::retrieval)) gallery = make_gallery(m.gallery);
    // Seeded choice of the N_T training images feeding the mean.
    std::vector<std::size_t> order(blobs.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(m.seed, "mean-sample"));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (int i = 0; i < m.mean_samples; ++i) mean_images.push_back(blobs.train[order[i]].image);
  }

  bool wants(Task t) const {
    return std::find(manifest.tasks.begin(), manifest.tasks.end(), t) != manifest.tasks.end();
  }

  const Backbone& model(const std::string& id) {
    auto it = models.find(id);
    if (it == models.end()) it = models.emplace(id, registry.create(id)).first;
    return *it->second;
  }

  HeadHyperparams head_params(int classes, const std::string& tag) const {
    HeadHyperparams hp;
    hp.num_classes = classes;
    hp.epochs = manifest.head_epochs;
    hp.learning_rate = manifest.head_learning_rate;
    hp.weight_decay = manifest.head_weight_decay;
    hp.seed = derive_seed(manifest.seed, tag);
    return hp;
  }

  const TaskHead& cls_head(const std::string& id) {
    auto it = cls_heads.find(id);
    if (it == cls_heads.end())
      it = cls_heads
               .emplace(id, fit_head(model(id), HeadKind::classifier, blobs.train,
                                     head_params(blobs.num_classes, "head:classifier")))
               .first;
    return it->second;
  }

  const TaskHead& seg_head(const std::string& id) {
    auto it = seg_heads.find(id);
    if (it == seg_heads.end())
      it = seg_heads
               .emplace(id, fit_head(model(id), HeadKind::segmenter, blobs.train,
                                     head_params(blobs.num_seg_classes, "head:segmenter")))
               .first;
    return it->second;
  }

  MeanVector mean_for(const Backbone& m, int layer, const AggregationSpec& agg) const {
    if (manifest.zero_mean) {
      const std::size_t dim = m.forward_features(mean_images.front(), layer, agg).size();
      return MeanVector::zeros(dim, m.model_id(), layer, agg);
    }
    return estimate_mean(m, mean_images, layer, agg, blobs.id + ":train");
  }

  std::uint64_t attack_seed(const std::string& attack, const std::string& set, int index) const {
    return derive_seed(manifest.seed, "attack:" + attack + ":" + set, static_cast<std::uint64_t>(index));
  }
};

AttackResult craft_one(Workspace& ws, const Backbone& src, const std::string& src_id,
                       const AttackEntry& a, const MeanVector* mu, const Image& x,
                       const LabeledImage* labeled, std::uint64_t seed) {
  AttackConfig cfg = a.config;
  cfg.seed = seed;
  switch (a.type) {
    case AttackType::taa: return taa_attack(src, x, *mu, cfg);
    case AttackType::tsa_cls: return tsa_classification(src, ws.cls_head(src_id), x, labeled->label, cfg);
    case AttackType::tsa_seg: return tsa_segmentation(src, ws.seg_head(src_id), x, labeled->mask, cfg);
  }
  throw InvalidArgument("unknown attack type");
}

void craft_attacks(Workspace& ws, const fs::path& out) {
  const RunManifest& m = ws.manifest;
  const bool labeled_tasks = ws.wants(Task::classification) || ws.wants(Task::segmentation);
  for (const auto& src_id : m.source_models) {
    for (const auto& a : m.attacks) {
      const fs::path dir = out / "adv" / path_safe(src_id) / a.name;
      fs::create_directories(dir);
      json status;
      try {
        const Backbone& src = ws.model(src_id);
        if (!src.info().gradient_capable)
          throw GradientUnavailable(src_id + " is inference-only and cannot be a source");
        std::optional<MeanVector> mu;
        if (a.type == AttackType::taa) {
          const int layer = a.config.resolved_layer(src);
          mu = ws.mean_for(src, layer, a.config.agg);
          const fs::path mean_path =
              out / "means" / mean_filename(path_safe(src_id), layer, a.config.agg);
          if (!fs::exists(mean_path)) {
            fs::create_directories(mean_path.parent_path());
            save_mean(*mu, mean_path);
          }
        }
        const std::vector<std::pair<std::string, std::string>> text = {
            {"manifest_sha256", ws.manifest_hash}, {"source_model", src_id}, {"attack", a.name}};
        int blobs_count = 0, query_count = 0;
        if (labeled_tasks) {
          for (std::size_t i = 0; i < ws.blobs.eval.size(); ++i) {
            const LabeledImage& li = ws.blobs.eval[i];
            const AttackResult r =
                craft_one(ws, src, src_id, a, mu ? &*mu : nullptr, li.image, &li,
                          ws.attack_seed(a.name, "blobs", static_cast<int>(i)));
            write_png(r.adversarial, dir / (image_id("blobs-eval", static_cast<int>(i)) + ".png"), text);
            ++blobs_count;
          }
        }
        if (ws.wants(Task::retrieval) && a.type == AttackType::taa) {
          for (std::size_t i = 0; i < ws.gallery.queries.size(); ++i) {
            const AttackResult r =
                craft_one(ws, src, src_id, a, &*mu, ws.gallery.queries[i], nullptr,
                          ws.attack_seed(a.name, "queries", static_cast<int>(i)));
            write_png(r.adversarial, dir / (image_id("gallery-query", static_cast<int>(i)) + ".png"), text);
            ++query_count;
          }
        }
        status = {{"status", "ok"},
                  {"blobs_eval_images", blobs_count},
                  {"gallery_query_images", query_count}};
      } catch (const std::exception& e) {
        status = {{"status", "skipped"}, {"reason", e.what()}};
      }
      status["manifest_sha256"] = ws.manifest_hash;
      write_file(dir / "status.json", status.dump(2) + "\n");
    }
  }
}

std::vector<Image> load_set(const fs::path& dir, const std::string& set, std::size_t count) {
  std::vector<Image> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(read_png(dir / (image_id(set, static_cast<int>(i)) + ".png")));
  return out;
}

double mean_psnr(const std::vector<Image>& clean, const std::vector<Image>& adv) {
  double sum = 0.0;
  int n = 0;
  bool any_inf = false;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double p = psnr(clean[i], adv[i]);
    if (std::isfinite(p)) {
      sum += p;
      ++n;
    } else {
      any_inf = true;
    }
  }
  if (n == 0) return any_inf ? std::numeric_limits<double>::infinity() : std::nan("");
  return sum / n;
}

double eval_classification(const Backbone& model, const TaskHead& head,
                           const std::vector<Image>& images, const std::vector<int>& labels) {
  std::vector<int> pred;
  for (const auto& img : images) pred.push_back(head.classify(model, img));
  return accuracy_percent(pred, labels);
}

double eval_segmentation(const Backbone& model, const TaskHead& head, int classes,
                         const std::vector<Image>& images,
                         const std::vector<std::vector<int>>& masks) {
  IouAccumulator acc(classes);
  for (std::size_t i = 0; i < images.size(); ++i) acc.add(head.segment(model, images[i]), masks[i]);
  return acc.miou_percent();
}

std::map<std::string, RetrievalScore> eval_retrieval(Workspace& ws, const Backbone& model,
                                                     const std::vector<Image>& queries) {
  const int layer = model.num_layers();
  const AggregationSpec& agg = ws.manifest.retrieval_agg;
  std::vector<std::vector<double>> qf, gf;
  for (const auto& q : queries) qf.push_back(model.forward_features(q, layer, agg));
  for (const auto& g : ws.gallery.gallery) gf.push_back(model.forward_features(g, layer, agg));
  std::vector<double> center;
  if (ws.manifest.retrieval_centered) {
    center.assign(gf.front().size(), 0.0);
    for (const auto& f : gf)
      for (std::size_t d = 0; d < f.size(); ++d) center[d] += f[d];
    for (double& v : center) v /= static_cast<double>(gf.size());
  }
  std::map<std::string, RetrievalScore> out;
  for (const auto& [tier, rel] : ws.gallery.relevance)
    out[tier] = mean_average_precision(qf, gf, rel, center);
  return out;
}

const char* metric_for(Task task) {
  switch (task) {
    case Task::classification: return "accuracy";
    case Task::segmentation: return "mIoU";
    case Task::retrieval: return "mAP";
  }
  return "";
}

Condition condition_for(AttackType t) {
  return t == AttackType::taa ? Condition::taa : Condition::tsa;
}

// Evaluates one task of one target on a set of (possibly adversarial)
// inputs; retrieval returns the medium tier as the headline and appends
// per-tier records.
double evaluate_task(Workspace& ws, const std::string& target, Task task,
                     const std::vector<Image>& images, const std::vector<int>& labels,
                     const std::vector<std::vector<int>>& masks, std::vector<MetricRecord>& records,
                     Condition cond, const std::string& detail) {
  const Backbone& model = ws.model(target);
  switch (task) {
    case Task::classification: {
      const double v = eval_classification(model, ws.cls_head(target), images, labels);
      records.push_back({target, task, ws.blobs.id, cond, detail, "accuracy", v});
      return v;
    }
    case Task::segmentation: {
      const double v =
          eval_segmentation(model, ws.seg_head(target), ws.blobs.num_seg_classes, images, masks);
      records.push_back({target, task, ws.blobs.id, cond, detail, "mIoU", v});
      return v;
    }
    case Task::retrieval: {
      const auto scores = eval_retrieval(ws, model, images);
      for (const auto& [tier, s] : scores) {
        std::string d = detail.empty() ? "tier=" + tier : detail + " tier=" + tier;
        if (s.queries_without_relevants > 0)
          d += " excluded_queries=" + std::to_string(s.queries_without_relevants);
        records.push_back({target, task, ws.gallery.id, cond, d, "mAP", s.map_percent});
      }
      return scores.at("medium").map_percent;
    }
  }
  return std::nan("");
}

std::vector<Image> transformed(const std::vector<Image>& images, const TransformSpec& t) {
  std::vector<Image> out;
  for (const auto& img : images) out.push_back(apply_transform(img, t));
  return out;
}

std::vector<std::vector<int>> transformed_masks(const std::vector<std::vector<int>>& masks,
                                                int height, int width, const TransformSpec& t) {
  std::vector<std::vector<int>> out;
  for (const auto& mk : masks) {
    int h = height, w = width;
    out.push_back(transform_mask(mk, h, w, t));
  }
  return out;
}

std::vector<std::string> list_files(const fs::path& root) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).generic_string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

CampaignResult run_campaign(const RunManifest& manifest, const CampaignOptions& options) {
  Workspace ws(manifest);
  const fs::path out = manifest.output_dir;
  fs::create_directories(out);
  // Stored without output_dir so the artifact hashes do not depend on where
  // the run was written.
  json stored = json::parse(manifest.to_json());
  stored.erase("output_dir");
  write_file(out / "manifest.json", stored.dump(2) + "\n");
  if (options.craft) craft_attacks(ws, out);

  TransferMatrix matrix;
  matrix.manifest_sha256 = ws.manifest_hash;
  matrix.sources = manifest.source_models;
  matrix.targets = manifest.target_models;
  matrix.tasks = manifest.tasks;
  for (const auto& a : manifest.attacks) matrix.attacks.push_back(a.name);

  const int side = manifest.blobs.image_size;
  std::vector<Image> blob_images;
  std::vector<int> labels;
  std::vector<std::vector<int>> masks;
  for (const auto& li : ws.blobs.eval) {
    blob_images.push_back(li.image);
    labels.push_back(li.label);
    masks.push_back(li.mask);
  }

  struct CleanEntry {
    double value = 0.0;
    std::vector<MetricRecord> records;
  };
  std::map<std::pair<std::string, Task>, CleanEntry> clean_cache;

  for (const auto& src : manifest.source_models)
    for (const auto& tgt : manifest.target_models)
      for (Task task : manifest.tasks)
        for (const auto& a : manifest.attacks) {
          MatrixCell cell;
          cell.source = src;
          cell.target = tgt;
          cell.task = task;
          cell.attack = a.name;
          cell.attack_type = a.type;
          cell.white_box = src == tgt;
          cell.metric_name = metric_for(task);
          std::vector<MetricRecord> records;
          try {
            if (task == Task::retrieval && a.type != AttackType::taa)
              throw Error(kNotApplicable, to_string(a.type) + " has no retrieval objective");
            const fs::path dir = out / "adv" / path_safe(src) / a.name;
            const fs::path status_path = dir / "status.json";
            if (!fs::exists(status_path))
              throw IoFailure("no stored adversarial images for " + src + "/" + a.name);
            const json status = json::parse(read_file(status_path));
            if (status.at("status") != "ok") throw Error("CraftingFailed", status.at("reason").get<std::string>());

            const bool retrieval = task == Task::retrieval;
            const std::vector<Image>& clean = retrieval ? ws.gallery.queries : blob_images;
            const std::vector<Image> adv =
                load_set(dir, retrieval ? "gallery-query" : "blobs-eval", clean.size());
            const std::string detail = a.name + "@" + src;

            auto cached = clean_cache.find({tgt, task});
            if (cached == clean_cache.end()) {
              CleanEntry entry;
              entry.value = evaluate_task(ws, tgt, task, clean, labels, masks, entry.records,
                                          Condition::clean, "");
              for (const auto& t : manifest.transforms)
                evaluate_task(ws, tgt, task, transformed(clean, t), labels,
                              transformed_masks(masks, side, side, t), entry.records, Condition::transform,
                              "clean|" + t.to_string());
              cached = clean_cache.emplace(std::make_pair(tgt, task), std::move(entry)).first;
            }
            cell.clean = cached->second.value;
            records = cached->second.records;
            cell.attacked =
                evaluate_task(ws, tgt, task, adv, labels, masks, records, condition_for(a.type), detail);
            cell.psnr_db = mean_psnr(clean, adv);
            cell.images = static_cast<int>(adv.size());
            records.push_back({tgt, task, retrieval ? ws.gallery.id : ws.blobs.id,
                               condition_for(a.type), detail, "psnr_db", cell.psnr_db});

            for (const auto& t : manifest.transforms)
              evaluate_task(ws, tgt, task, transformed(adv, t), labels,
                            transformed_masks(masks, side, side, t), records, Condition::transform,
                            detail + "|" + t.to_string());
          } catch (const std::exception& e) {
            cell.skipped = true;
            cell.reason = e.what();
            records.clear();
          }
          std::string csv = "# manifest_sha256=" + ws.manifest_hash + "\n";
          csv += cell.skipped ? "# skipped: " + cell.reason + "\n" : "";
          csv += metrics_to_csv(records);
          write_file(out / "cells" /
                         (path_safe(src) + "." + path_safe(tgt) + "." + to_string(task) + "." +
                          a.name + ".csv"),
                     csv);
          matrix.cells.push_back(std::move(cell));
        }

  emit_report(matrix, ReportFormat::csv, out / "matrix.csv");
  emit_report(matrix, ReportFormat::json, out / "matrix.json");
  emit_report(matrix, ReportFormat::heatmap, out / "heatmap.png");
  write_file(out / "efficiency.csv", efficiencies_to_csv(relative_efficiencies(matrix)));

  json artifacts = json::object();
  for (const auto& rel : list_files(out))
    if (rel != "run.lock.json") artifacts[rel] = sha256_file(out / rel);
  const json lock = {{"manifest_sha256", ws.manifest_hash},
                     {"seed", manifest.seed},
                     {"software", json::parse(software_versions_json())},
                     {"artifacts", artifacts}};
  write_file(out / "run.lock.json", lock.dump(2) + "\n");
  return {std::move(matrix), out};
}

// ---------------------------------------------------------------------------
// Ablation

namespace {

double plain_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa < kDegenerateNorm * kDegenerateNorm || bb < kDegenerateNorm * kDegenerateNorm)
    return std::nan("");
  return ab / std::sqrt(aa * bb);
}

std::vector<double> minus(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

}  // namespace

AblationTable run_ablation(const RunManifest& manifest, AblationAxis axis,
                           std::vector<std::string> values) {
  if (manifest.source_models.size() != 1)
    throw ValidationError("ablation needs exactly one source model");
  Workspace ws(manifest);
  const std::string src_id = manifest.source_models.front();
  const Backbone& model = ws.model(src_id);
  if (!model.info().gradient_capable)
    throw GradientUnavailable(src_id + " is inference-only and cannot be a source");

  AttackEntry base{"taa", AttackType::taa, {}};
  for (const auto& a : manifest.attacks)
    if (a.type == AttackType::taa) {
      base = a;
      break;
    }

  if (values.empty()) {
    switch (axis) {
      case AblationAxis::layer:
        for (int l = 1; l <= model.num_layers(); ++l) values.push_back(std::to_string(l));
        break;
      case AblationAxis::aggregation:
        values = {"class_token", "patch_tokens-concat_flatten", "patch_tokens-mean",
                  "class_plus_patch-concat_flatten"};
        break;
      case AblationAxis::centering: values = {"on", "off"}; break;
      case AblationAxis::step_rule: values = {"plain_gradient", "sign", "momentum"}; break;
    }
  }

  AblationTable table;
  table.manifest_sha256 = ws.manifest_hash;
  table.source = src_id;
  table.axis = axis;
  const int final_layer = model.num_layers();
  std::map<std::string, MeanVector> final_means;

  for (const auto& value : values) {
    AttackConfig cfg = base.config;
    try {
      switch (axis) {
        case AblationAxis::layer: cfg.layer = std::stoi(value); break;
        case AblationAxis::aggregation: cfg.agg = AggregationSpec::parse(value); break;
        case AblationAxis::centering:
          if (value != "on" && value != "off") throw ValidationError("centering values are on/off");
          cfg.centering = value == "on";
          break;
        case AblationAxis::step_rule: cfg.step_rule = parse_step_rule(value); break;
      }
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception& e) {
      throw ValidationError("bad " + to_string(axis) + " value '" + value + "': " + e.what());
    }
    const int layer = cfg.resolved_layer(model);
    if (layer < 1 || layer > final_layer)
      throw LayerOutOfRange("layer " + value + " outside [1, " + std::to_string(final_layer) + "]");
    const MeanVector mu = ws.mean_for(model, layer, cfg.agg);
    const std::string agg_key = cfg.agg.to_string();
    if (!final_means.count(agg_key))
      final_means.emplace(agg_key, ws.mean_for(model, final_layer, cfg.agg));
    const MeanVector& mu_final = final_means.at(agg_key);

    AblationRow row;
    row.value = value;
    row.layer = layer;
    row.agg = agg_key;
    row.centering = cfg.centering;
    row.step_rule = to_string(cfg.step_rule);
    std::vector<int> preds, labels;
    IouAccumulator iou(ws.blobs.num_seg_classes);
    double cls_sum = 0, fin_sum = 0, loss_sum = 0, psnr_sum = 0;
    int cls_n = 0, fin_n = 0, psnr_n = 0;
    row.max_linf = 0.0;
    const AggregationSpec cls_agg{TokenMode::class_token, PatchReduction::mean};
    for (std::size_t i = 0; i < ws.blobs.eval.size(); ++i) {
      const LabeledImage& li = ws.blobs.eval[i];
      cfg.seed = ws.attack_seed(base.name, "blobs", static_cast<int>(i));
      const AttackResult r = taa_attack(model, li.image, mu, cfg);
      const Image& adv = r.adversarial;
      if (ws.wants(Task::classification)) {
        preds.push_back(ws.cls_head(src_id).classify(model, adv));
        labels.push_back(li.label);
      }
      if (ws.wants(Task::segmentation)) iou.add(ws.seg_head(src_id).segment(model, adv), li.mask);
      const double cc = plain_cosine(model.forward_features(li.image, final_layer, cls_agg),
                                     model.forward_features(adv, final_layer, cls_agg));
      if (std::isfinite(cc)) cls_sum += cc, ++cls_n;
      const double fc =
          plain_cosine(minus(model.forward_features(adv, final_layer, cfg.agg), mu_final.mu),
                       minus(model.forward_features(li.image, final_layer, cfg.agg), mu_final.mu));
      if (std::isfinite(fc)) fin_sum += fc, ++fin_n;
      loss_sum += r.final_loss;
      row.max_linf = std::max(row.max_linf, r.linf);
      if (std::isfinite(r.psnr_db)) psnr_sum += r.psnr_db, ++psnr_n;
    }
    const int n = static_cast<int>(ws.blobs.eval.size());
    row.images = n;
    if (!preds.empty()) row.accuracy = accuracy_percent(preds, labels);
    if (ws.wants(Task::segmentation)) row.miou = iou.miou_percent();
    if (cls_n) row.cls_cos_sim = cls_sum / cls_n;
    if (fin_n) row.final_cos_sim = fin_sum / fin_n;
    row.attack_loss = loss_sum / n;
    row.psnr_db = psnr_n ? psnr_sum / psnr_n : std::numeric_limits<double>::infinity();
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string ablation_to_csv(const AblationTable& table) {
  std::ostringstream os;
  os << "# manifest_sha256=" << table.manifest_sha256 << "\n"
     << "source_model,axis,value,layer,agg,centering,step_rule,accuracy,mIoU,cls_cos_sim,"
        "final_cos_sim,attack_loss,max_linf,psnr_db,images\n";
  for (const auto& r : table.rows)
    os << csv_field(table.source) << ',' << to_string(table.axis) << ',' << csv_field(r.value)
       << ',' << r.layer << ',' << r.agg << ',' << (r.centering ? "true" : "false") << ','
       << r.step_rule << ',' << format_value(r.accuracy) << ',' << format_value(r.miou) << ','
       << format_value(r.cls_cos_sim) << ',' << format_value(r.final_cos_sim) << ','
       << format_value(r.attack_loss) << ',' << format_value(r.max_linf) << ','
       << format_value(r.psnr_db) << ',' << r.images << "\n";
  return os.str();
}

std::string ablation_to_json(const AblationTable& table) {
  json rows = json::array();
  for (const auto& r : table.rows)
    rows.push_back({{"value", r.value},
                    {"layer", r.layer},
                    {"agg", r.agg},
                    {"centering", r.centering},
                    {"step_rule", r.step_rule},
                    {"accuracy", format_value(r.accuracy)},
                    {"mIoU", format_value(r.miou)},
                    {"cls_cos_sim", format_value(r.cls_cos_sim)},
                    {"final_cos_sim", format_value(r.final_cos_sim)},
                    {"attack_loss", format_value(r.attack_loss)},
                    {"max_linf", format_value(r.max_linf)},
                    {"psnr_db", format_value(r.psnr_db)},
                    {"images", r.images}});
  const json j = {{"manifest_sha256", table.manifest_sha256},
                  {"source_model", table.source},
                  {"axis", to_string(table.axis)},
                  {"rows", rows}};
  return j.dump(2) + "\n";
}

}  // namespace taa
