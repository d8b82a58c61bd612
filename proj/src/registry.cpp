#include "taa/registry.hpp"

#include <algorithm>
#include <regex>
#include <sstream>

#include "taa/errors.hpp"
#include "taa/vit.hpp"

namespace taa {

std::optional<ReferenceIdParts> parse_reference_id(const std::string& id) {
  static const std::regex pattern(R"(ref-vit-d(\d+)-e(\d+)-p(\d+)-s(\d+))");
  std::smatch m;
  if (!std::regex_match(id, m, pattern)) return std::nullopt;
  try {
    ReferenceIdParts parts;
    parts.depth = std::stoi(m[1]);
    parts.embed_dim = std::stoi(m[2]);
    parts.patch_size = std::stoi(m[3]);
    parts.seed = std::stoull(m[4]);
    return parts;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

AdapterRegistry AdapterRegistry::with_defaults() {
  AdapterRegistry reg;
  const std::string ref = reference_model_id(2, 32, 4, 7);
  reg.add({ref, "reference pre-norm ViT (any ref-vit-d*-e*-p*-s* id resolves)",
           true, true, [] { return build_reference_backbone(2, 32, 4, 7); }});
  // Pretrained foundation models need external weights; they stay listed so
  // manifests can name them, but cannot be instantiated in this build.
  for (const char* id : {"dinov2-vits14", "dinov2-vitb14", "dinov2-vitl14",
                         "dinov2-vitg14", "dino-vitb16", "mae-vitb16",
                         "msn-vitb16", "ibot-vitb16", "clip-vitb16"}) {
    reg.add({id, "pretrained VFM (external weights required)", true, false,
             nullptr});
  }
  return reg;
}

void AdapterRegistry::add(AdapterEntry entry) {
  const bool taken = std::any_of(entries_.begin(), entries_.end(), [&](const AdapterEntry& e) {
    return e.model_id == entry.model_id;
  });
  if (taken)
    throw DuplicateModel("model_id already registered: " + entry.model_id);
  entries_.push_back(std::move(entry));
}

std::optional<AdapterEntry> AdapterRegistry::describe(
    const std::string& model_id) const {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const AdapterEntry& e) { return e.model_id == model_id; });
  if (it != entries_.end()) return *it;
  if (model_id.rfind("blackbox:", 0) == 0) {
    auto inner = describe(model_id.substr(9));
    if (!inner) return std::nullopt;
    AdapterEntry e = *inner;
    e.model_id = model_id;
    e.gradient_capable = false;
    e.description = "inference-only view of " + inner->model_id;
    auto inner_factory = inner->factory;
    if (inner_factory)
      e.factory = [inner_factory] {
        return std::make_shared<const InferenceOnlyBackbone>(inner_factory());
      };
    return e;
  }
  if (auto parts = parse_reference_id(model_id)) {
    AdapterEntry e;
    e.model_id = model_id;
    e.description = "reference pre-norm ViT";
    e.gradient_capable = true;
    e.available = true;
    const auto p = *parts;
    e.factory = [p] {
      return build_reference_backbone(p.depth, p.embed_dim, p.patch_size, p.seed);
    };
    return e;
  }
  return std::nullopt;
}

bool AdapterRegistry::resolvable(const std::string& model_id) const {
  auto e = describe(model_id);
  return e && e->available;
}

BackboneHandle AdapterRegistry::create(const std::string& model_id) const {
  auto e = describe(model_id);
  if (!e) throw UnknownModel("unknown model_id '" + model_id + "'\n" + listing());
  if (!e->available || !e->factory)
    throw UnknownModel("model '" + model_id +
                       "' is registered but unavailable in this environment");
  return e->factory();
}

std::string AdapterRegistry::listing() const {
  std::ostringstream os;
  os << "available adapters:\n";
  for (const auto& e : entries_)
    os << "  " << e.model_id << (e.gradient_capable ? "  [gradient]" : "  [transfer-only]")
       << (e.available ? "" : "  (unavailable)") << "  " << e.description << "\n";
  os << "  blackbox:<id>  [transfer-only]  inference-only view of any model\n";
  return os.str();
}

AdapterRegistry list_adapters() { return AdapterRegistry::with_defaults(); }

}  // namespace taa
