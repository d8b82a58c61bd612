#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "taa/model.hpp"

namespace taa {

struct AdapterEntry {
  std::string model_id;
  std::string description;
  bool gradient_capable = false;
  bool available = false;
  std::function<BackboneHandle()> factory;
};

// Backbone constructors addressed by model_id. Besides the explicit entries,
// the registry resolves any id of the form ref-vit-d{D}-e{E}-p{P}-s{S} and
// the prefix "blackbox:" (inference-only view of another model).
class AdapterRegistry {
 public:
  // Registry pre-populated with the reference backbone and the external
  // foundation models known to the harness (unavailable unless weights
  // have been supplied).
  static AdapterRegistry with_defaults();

  void add(AdapterEntry entry);  // throws DuplicateModel
  const std::vector<AdapterEntry>& entries() const { return entries_; }

  bool resolvable(const std::string& model_id) const;
  // Throws UnknownModel for unknown ids and for listed-but-unavailable ones.
  BackboneHandle create(const std::string& model_id) const;
  std::optional<AdapterEntry> describe(const std::string& model_id) const;

  std::string listing() const;

 private:
  std::vector<AdapterEntry> entries_;
};

AdapterRegistry list_adapters();

struct ReferenceIdParts {
  int depth = 0;
  int embed_dim = 0;
  int patch_size = 0;
  std::uint64_t seed = 0;
};
std::optional<ReferenceIdParts> parse_reference_id(const std::string& id);

}  // namespace taa
