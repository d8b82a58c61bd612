#include "taa/heatmap.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

#include "taa/errors.hpp"

namespace taa {

namespace {

using Color = std::array<double, 3>;

constexpr int kScale = 2;
constexpr int kGlyphW = 3, kGlyphH = 5;
constexpr int kAdvance = (kGlyphW + 1) * kScale;
constexpr int kLineH = (kGlyphH + 2) * kScale;
constexpr int kPad = 6;

// 3x5 glyphs, one row per entry, bit 2 = leftmost column.
std::array<int, 5> glyph(char ch) {
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (c >= '0' && c <= '9') {
    static constexpr std::array<std::array<int, 5>, 10> digits = {{
        {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7},
        {5, 5, 7, 1, 1}, {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1},
        {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7}}};
    return digits[c - '0'];
  }
  if (c >= 'a' && c <= 'z') {
    static constexpr std::array<std::array<int, 5>, 26> letters = {{
        {2, 5, 7, 5, 5}, {6, 5, 6, 5, 6}, {3, 4, 4, 4, 3}, {6, 5, 5, 5, 6},
        {7, 4, 6, 4, 7}, {7, 4, 6, 4, 4}, {3, 4, 5, 5, 3}, {5, 5, 7, 5, 5},
        {7, 2, 2, 2, 7}, {1, 1, 1, 5, 2}, {5, 5, 6, 5, 5}, {4, 4, 4, 4, 7},
        {5, 7, 7, 5, 5}, {6, 5, 5, 5, 5}, {2, 5, 5, 5, 2}, {6, 5, 6, 4, 4},
        {2, 5, 5, 6, 3}, {6, 5, 6, 5, 5}, {3, 4, 2, 1, 6}, {7, 2, 2, 2, 2},
        {5, 5, 5, 5, 7}, {5, 5, 5, 5, 2}, {5, 5, 7, 7, 5}, {5, 5, 2, 5, 5},
        {5, 5, 2, 2, 2}, {7, 1, 2, 4, 7}}};
    return letters[c - 'a'];
  }
  switch (c) {
    case ' ': return {0, 0, 0, 0, 0};
    case '-': return {0, 0, 7, 0, 0};
    case '.': return {0, 0, 0, 0, 2};
    case '_': return {0, 0, 0, 0, 7};
    case ':': return {0, 2, 0, 2, 0};
    case '%': return {5, 1, 2, 4, 5};
    case '+': return {0, 2, 7, 2, 0};
    case '/': return {1, 1, 2, 4, 4};
    case '(': return {1, 2, 2, 2, 1};
    case ')': return {4, 2, 2, 2, 4};
    case '=': return {0, 7, 0, 7, 0};
    default: return {7, 1, 2, 0, 2};
  }
}

int text_width(const std::string& s) { return static_cast<int>(s.size()) * kAdvance; }

void fill_rect(Image& img, int x0, int y0, int w, int h, const Color& col) {
  for (int y = std::max(0, y0); y < std::min(img.height(), y0 + h); ++y)
    for (int x = std::max(0, x0); x < std::min(img.width(), x0 + w); ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
}

void draw_text(Image& img, int x0, int y0, const std::string& s, const Color& col) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto g = glyph(s[i]);
    const int gx = x0 + static_cast<int>(i) * kAdvance;
    for (int r = 0; r < kGlyphH; ++r)
      for (int b = 0; b < kGlyphW; ++b)
        if (g[r] & (4 >> b)) fill_rect(img, gx + b * kScale, y0 + r * kScale, kScale, kScale, col);
  }
}

Color ramp(double t) {
  static constexpr std::array<Color, 5> stops = {{{0.267, 0.005, 0.329},
                                                  {0.230, 0.322, 0.546},
                                                  {0.128, 0.567, 0.551},
                                                  {0.369, 0.789, 0.383},
                                                  {0.993, 0.906, 0.144}}};
  t = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
  const double f = t - static_cast<double>(i);
  Color out;
  for (int c = 0; c < 3; ++c) out[c] = stops[i][c] * (1 - f) + stops[i + 1][c] * f;
  return out;
}

std::string annotate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string bound_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

nlohmann::json number_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

}  // namespace

HeatmapRendering render_heatmap(const HeatmapData& data) {
  const std::size_t nr = data.rows.size(), nc = data.cols.size();
  if (nr == 0 || nc == 0) throw InvalidArgument("heatmap needs at least one row and column");
  if (data.cells.size() != nr * nc) throw IncompleteMatrix("heatmap cell count mismatch");

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& cell : data.cells)
    if (!cell.skipped && std::isfinite(cell.value)) {
      lo = std::min(lo, cell.value);
      hi = std::max(hi, cell.value);
    }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  const double vmin = data.vmin.value_or(lo);
  double vmax = data.vmax.value_or(hi);
  if (!(vmax > vmin)) vmax = vmin + 1.0;

  int label_w = 0;
  for (const auto& r : data.rows) label_w = std::max(label_w, text_width(r));
  int cell_w = text_width("-000.0") + 2 * kPad;
  for (const auto& c : data.cols) cell_w = std::max(cell_w, text_width(c) + 2 * kPad);
  const int cell_h = kLineH + 2 * kPad + 6;
  const int left = kPad + label_w + kPad;
  const int top = kPad + (data.title.empty() ? 0 : kLineH + kPad) + kLineH + kPad;
  const int grid_w = static_cast<int>(nc) * cell_w;
  const int grid_h = static_cast<int>(nr) * cell_h;
  const int bar_h = 10;
  const int width = std::max(left + grid_w + kPad, left + text_width(data.title) + kPad);
  const int height = top + grid_h + kPad + bar_h + kPad + kLineH + kPad;

  const Color white{1, 1, 1}, black{0, 0, 0}, hatch_bg{0.85, 0.85, 0.85}, hatch{0.45, 0.45, 0.45};
  Image img(height, width, 1.0);
  if (!data.title.empty()) draw_text(img, left, kPad, data.title, black);
  const int col_label_y = top - kPad - kLineH;
  for (std::size_t c = 0; c < nc; ++c) {
    const int x = left + static_cast<int>(c) * cell_w;
    draw_text(img, x + (cell_w - text_width(data.cols[c])) / 2, col_label_y, data.cols[c], black);
  }

  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t r = 0; r < nr; ++r) {
    const int y = top + static_cast<int>(r) * cell_h;
    draw_text(img, kPad, y + (cell_h - kGlyphH * kScale) / 2, data.rows[r], black);
    for (std::size_t c = 0; c < nc; ++c) {
      const HeatmapCell& cell = data.cells[r * nc + c];
      const int x = left + static_cast<int>(c) * cell_w;
      nlohmann::json entry = {{"row", data.rows[r]}, {"col", data.cols[c]}};
      if (cell.skipped) {
        fill_rect(img, x, y, cell_w, cell_h, hatch_bg);
        for (int yy = 0; yy < cell_h; ++yy)
          for (int xx = 0; xx < cell_w; ++xx)
            if ((xx + yy) % 6 == 0) fill_rect(img, x + xx, y + yy, 1, 1, hatch);
        entry["value"] = nullptr;
        entry["skipped"] = true;
        entry["reason"] = cell.reason;
      } else {
        const bool finite = std::isfinite(cell.value);
        const Color col = finite ? ramp((cell.value - vmin) / (vmax - vmin)) : hatch_bg;
        fill_rect(img, x, y, cell_w, cell_h, col);
        const double lum = 0.299 * col[0] + 0.587 * col[1] + 0.114 * col[2];
        const std::string text = finite ? annotate(cell.value) : "n/a";
        draw_text(img, x + (cell_w - text_width(text)) / 2, y + (cell_h - kGlyphH * kScale) / 2,
                  text, lum < 0.5 ? white : black);
        entry["value"] = number_or_null(cell.value);
        entry["skipped"] = false;
      }
      cells.push_back(std::move(entry));
    }
  }
  // Grid lines.
  for (std::size_t r = 0; r <= nr; ++r)
    fill_rect(img, left, top + static_cast<int>(r) * cell_h, grid_w, 1, black);
  for (std::size_t c = 0; c <= nc; ++c)
    fill_rect(img, left + static_cast<int>(c) * cell_w, top, 1, grid_h + 1, black);

  // Color bar with its bounds.
  const int bar_y = top + grid_h + kPad;
  for (int xx = 0; xx < grid_w; ++xx)
    fill_rect(img, left + xx, bar_y, 1, bar_h, ramp(grid_w > 1 ? xx / (grid_w - 1.0) : 0.0));
  const std::string lo_text = bound_label(vmin), hi_text = bound_label(vmax);
  draw_text(img, left, bar_y + bar_h + kPad, lo_text, black);
  draw_text(img, left + grid_w - text_width(hi_text), bar_y + bar_h + kPad, hi_text, black);

  nlohmann::json meta = {{"title", data.title},
                         {"rows", data.rows},
                         {"cols", data.cols},
                         {"colormap", "viridis-5stop"},
                         {"vmin", vmin},
                         {"vmax", vmax},
                         {"cells", cells}};
  return {quantize(img), meta.dump(2) + "\n"};
}

void write_heatmap(const HeatmapData& data, const std::filesystem::path& png_path,
                   const std::filesystem::path& sidecar_path) {
  const HeatmapRendering out = render_heatmap(data);
  write_png(out.image, png_path);
  std::ofstream f(sidecar_path, std::ios::binary);
  if (!f) throw IoFailure("cannot write " + sidecar_path.string());
  f << out.sidecar_json;
}

}  // namespace taa
