#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "taa/image.hpp"

namespace taa {

struct HeatmapCell {
  double value = std::numeric_limits<double>::quiet_NaN();
  bool skipped = false;
  std::string reason;
};

struct HeatmapData {
  std::string title;
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  std::vector<HeatmapCell> cells;  // row-major, rows.size() x cols.size()
  // Color scale bounds; derived from the finite cell values when unset.
  std::optional<double> vmin;
  std::optional<double> vmax;
};

struct HeatmapRendering {
  Image image;
  std::string sidecar_json;  // scale bounds, labels, per-cell values and skip reasons
};

// Deterministic rendering: viridis-like color ramp, cell values annotated
// with a built-in bitmap font, skipped cells hatched.
HeatmapRendering render_heatmap(const HeatmapData& data);

// Writes the PNG and, next to it, the sidecar JSON.
void write_heatmap(const HeatmapData& data, const std::filesystem::path& png_path,
                   const std::filesystem::path& sidecar_path);

}  // namespace taa
