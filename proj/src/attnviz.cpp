// Copyright 2026 The Histograde Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "histograde/attnviz.hpp"

#include <algorithm>
#include <cmath>

#include "histograde/error.hpp"

namespace histograde {

void OverlayConfig::validate() const {
  require(alpha > 0.0 && alpha <= 1.0, ErrorCode::kConfig, "overlay alpha must be in (0, 1]");
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

Rgb diverging_ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  if (t <= 0.5) {
    const double s = 255.0 * 2.0 * t;
    return {to_byte(s), to_byte(s), 255};
  }
  const double s = 255.0 * 2.0 * (1.0 - t);
  return {255, to_byte(s), to_byte(s)};
}

std::vector<double> minmax_scale(std::span<const double> weights) {
  std::vector<double> out(weights.begin(), weights.end());
  if (out.empty()) return out;
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const double a = *lo, b = *hi;
  for (double& v : out) v = b > a ? (v - a) / (b - a) : 0.5;
  return out;
}

RasterImage read_region_image(const SlideImage& slide, const PatchGrid& grid, const Region& region,
                              int region_side) {
  require(region_side > 0, ErrorCode::kParameter, "region_side must be positive");
  const ExtractionLevel level = extraction_level(slide.info(), grid.target_magnification);
  const int p = grid.patch_size_px;
  RasterImage out(region_side * p, region_side * p, kWhite);
  for (int cy = 0; cy < region_side; ++cy) {
    for (int cx = 0; cx < region_side; ++cx) {
      const int gx = region.origin.x + cx, gy = region.origin.y + cy;
      const Rect rect = intersect({static_cast<std::int64_t>(gx) * p, static_cast<std::int64_t>(gy) * p, p, p},
                                  {0, 0, level.width, level.height});
      if (rect.empty()) continue;
      const PatchRecord rec{grid.slide_id, gx, gy, rect, 0.0};
      out.paste(read_patch(slide, grid, rec), cx * p, cy * p);
    }
  }
  return out;
}

RasterImage overlay_attention(const RasterImage& base, int patch_size, int region_side,
                              const AttentionMap& map, const OverlayConfig& cfg) {
  cfg.validate();
  require(patch_size > 0 && region_side > 0, ErrorCode::kParameter, "patch size and region side must be positive");
  require(base.width() == patch_size * region_side && base.height() == patch_size * region_side,
          ErrorCode::kShape, "region image does not match the region window");
  require(map.weights.size() == map.region.members.size() &&
              map.region.members.size() == map.region.relative.size(),
          ErrorCode::kContract, "attention map does not match its region");
  const std::vector<double> scaled = minmax_scale(map.weights);
  const auto side = static_cast<std::size_t>(region_side);
  std::vector<double> cell(side * side, 0.0);
  std::vector<std::uint8_t> present(side * side, 0);
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    const GridCoord rc = map.region.relative[i];
    require(rc.x >= 0 && rc.y >= 0 && rc.x < region_side && rc.y < region_side, ErrorCode::kContract,
            "region member lies outside the window");
    const std::size_t k = static_cast<std::size_t>(rc.y) * side + static_cast<std::size_t>(rc.x);
    cell[k] = scaled[i];
    present[k] = 1;
  }
  auto value_at = [&](int px, int py) {
    const int cx = px / patch_size, cy = py / patch_size;
    if (cfg.upsampling == Upsampling::kNearest) {
      return cell[static_cast<std::size_t>(cy) * side + static_cast<std::size_t>(cx)];
    }
    // Bilinear between cell centres, over present cells only.
    const double u = (px + 0.5) / patch_size - 0.5;
    const double v = (py + 0.5) / patch_size - 0.5;
    const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
    const double fx = u - x0, fy = v - y0;
    double num = 0.0, den = 0.0;
    for (int dy = 0; dy <= 1; ++dy) {
      for (int dx = 0; dx <= 1; ++dx) {
        const int x = std::clamp(x0 + dx, 0, region_side - 1);
        const int y = std::clamp(y0 + dy, 0, region_side - 1);
        const std::size_t k = static_cast<std::size_t>(y) * side + static_cast<std::size_t>(x);
        if (!present[k]) continue;
        const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
        num += w * cell[k];
        den += w;
      }
    }
    return den > 0.0 ? num / den : cell[static_cast<std::size_t>(cy) * side + static_cast<std::size_t>(cx)];
  };
  RasterImage out = base;
  for (int py = 0; py < out.height(); ++py) {
    for (int px = 0; px < out.width(); ++px) {
      const std::size_t k = static_cast<std::size_t>(py / patch_size) * side +
                            static_cast<std::size_t>(px / patch_size);
      if (!present[k]) continue;
      const Rgb ramp = diverging_ramp(value_at(px, py));
      const Rgb c = base.at(px, py);
      const double a = cfg.alpha;
      out.set(px, py, {to_byte((1.0 - a) * c.r + a * ramp.r), to_byte((1.0 - a) * c.g + a * ramp.g),
                       to_byte((1.0 - a) * c.b + a * ramp.b)});
    }
  }
  return out;
}

RasterImage render_attention_overlay(const SlideImage& slide, const PatchGrid& grid, const Region& region,
                                     const AttentionMap& map, int region_side, const OverlayConfig& cfg) {
  if (!(map.region == region)) fail(ErrorCode::kContract, "attention map belongs to a different region");
  return overlay_attention(read_region_image(slide, grid, region, region_side), grid.patch_size_px,
                           region_side, map, cfg);
}

CellPalette annotation_palette() {
  CellPalette p{};
  p[static_cast<std::size_t>(CellType::kEpithelial)] = {255, 0, 0};
  p[static_cast<std::size_t>(CellType::kLymphocyte)] = {0, 200, 0};
  p[static_cast<std::size_t>(CellType::kMacrophage)] = {0, 0, 255};
  p[static_cast<std::size_t>(CellType::kNeutrophil)] = {255, 220, 0};
  return p;
}

RasterImage draw_annotations(const RasterImage& base, const SlideImage& slide, const PatchGrid& grid,
                             const Region& region, std::span<const CellAnnotation> cells) {
  const ExtractionLevel level = extraction_level(slide.info(), grid.target_magnification);
  const double ds = level.downsample;
  const double ox = static_cast<double>(region.origin.x) * grid.patch_size_px;
  const double oy = static_cast<double>(region.origin.y) * grid.patch_size_px;
  const CellPalette palette = annotation_palette();
  RasterImage out = base;
  for (const auto& c : cells) {
    const double cx = c.cx / ds - ox, cy = c.cy / ds - oy;
    const double rx = std::max(c.rx / ds, 1.0), ry = std::max(c.ry / ds, 1.0);
    const Rgb colour = palette[static_cast<std::size_t>(c.cell_type)];
    const int x0 = static_cast<int>(std::floor(cx - rx)), x1 = static_cast<int>(std::ceil(cx + rx));
    const int y0 = static_cast<int>(std::floor(cy - ry)), y1 = static_cast<int>(std::ceil(cy + ry));
    for (int y = std::max(0, y0); y <= std::min(out.height() - 1, y1); ++y) {
      for (int x = std::max(0, x0); x <= std::min(out.width() - 1, x1); ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        if (dx * dx + dy * dy <= 1.0) out.set(x, y, colour);
      }
    }
  }
  return out;
}

std::vector<std::filesystem::path> export_panel(const SlideImage& slide, const PatchGrid& grid,
                                                const Region& region, const AttentionMap& map,
                                                int region_side, const OverlayConfig& cfg,
                                                const std::vector<CellAnnotation>* annotations,
                                                const std::filesystem::path& out_dir) {
  if (!(map.region == region)) fail(ErrorCode::kContract, "attention map belongs to a different region");
  std::filesystem::create_directories(out_dir);
  const RasterImage raw = read_region_image(slide, grid, region, region_side);
  const std::string stem = region.slide_id + "_" + std::to_string(region.origin.x) + "_" +
                           std::to_string(region.origin.y) + "_";
  std::vector<std::filesystem::path> paths{out_dir / (stem + "raw.png"), out_dir / (stem + "attention.png")};
  write_png(raw, paths[0]);
  write_png(overlay_attention(raw, grid.patch_size_px, region_side, map, cfg), paths[1]);
  if (annotations) {
    paths.push_back(out_dir / (stem + "annotations.png"));
    write_png(draw_annotations(raw, slide, grid, region, *annotations), paths.back());
  }
  return paths;
}

}  // namespace histograde
