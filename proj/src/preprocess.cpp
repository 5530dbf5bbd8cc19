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

#include "histograde/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "histograde/error.hpp"
#include "histograde/io.hpp"

namespace histograde {

std::int64_t TissueMask::count() const {
  return std::count(bits.begin(), bits.end(), std::uint8_t{1});
}

int nearest_level(const SlideInfo& info, double magnification) {
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int i = 0; i < info.level_count(); ++i) {
    const double d = std::abs(std::log(info.level_magnification(i) / magnification));
    if (d < best_dist - 1e-12) {
      best = i;
      best_dist = d;
    }
  }
  return best;
}

namespace {

// 3x3 erosion (take_max = false) or dilation, neighbourhood clipped at borders.
std::vector<std::uint8_t> morph(const std::vector<std::uint8_t>& in, int w, int h, bool take_max) {
  std::vector<std::uint8_t> out(in.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = take_max ? 0 : 1;
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          const std::uint8_t b = in[static_cast<std::size_t>(yy) * static_cast<std::size_t>(w) +
                                    static_cast<std::size_t>(xx)];
          v = take_max ? std::max(v, b) : std::min(v, b);
        }
      }
      out[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] =
          v;
    }
  }
  return out;
}

}  // namespace

void morphological_open_close(std::vector<std::uint8_t>& bits, int width, int height) {
  bits = morph(morph(bits, width, height, false), width, height, true);  // open
  bits = morph(morph(bits, width, height, true), width, height, false);  // close
}

TissueMask compute_tissue_mask(const SlideImage& slide, int mask_level,
                               const TissueThresholds& thresholds) {
  const SlideInfo& info = slide.info();
  require(mask_level >= 0 && mask_level < info.level_count(), ErrorCode::kBounds,
          "mask level " + std::to_string(mask_level) + " does not exist");
  const LevelInfo& li = info.levels[static_cast<std::size_t>(mask_level)];
  const RasterImage img = slide.read_region(mask_level, {0, 0, li.width, li.height});
  TissueMask mask;
  mask.width = li.width;
  mask.height = li.height;
  mask.mask_downsample = li.downsample;
  mask.bits.resize(static_cast<std::size_t>(li.width) * static_cast<std::size_t>(li.height));
  for (int y = 0; y < li.height; ++y) {
    for (int x = 0; x < li.width; ++x) {
      mask.bits[static_cast<std::size_t>(y) * static_cast<std::size_t>(li.width) +
                static_cast<std::size_t>(x)] = is_tissue_pixel(img.at(x, y), thresholds) ? 1 : 0;
    }
  }
  morphological_open_close(mask.bits, mask.width, mask.height);
  return mask;
}

TissueMask compute_tissue_mask(const SlideImage& slide) {
  return compute_tissue_mask(slide, nearest_level(slide.info(), 1.25));
}

ExtractionLevel extraction_level(const SlideInfo& info, double target_magnification) {
  require(target_magnification > 0.0, ErrorCode::kParameter,
          "target_magnification must be positive");
  if (target_magnification > info.base_magnification * (1.0 + 1e-9)) {
    fail(ErrorCode::kCapability, "target magnification " + std::to_string(target_magnification) +
                                     "x exceeds the slide's base " +
                                     std::to_string(info.base_magnification) + "x");
  }
  const double ds = info.base_magnification / target_magnification;
  ExtractionLevel out;
  for (int i = 0; i < info.level_count(); ++i) {
    const LevelInfo& li = info.levels[static_cast<std::size_t>(i)];
    if (std::abs(li.downsample - ds) < 1e-9 * ds) {
      return {i, static_cast<double>(li.downsample), li.width, li.height, false};
    }
    if (li.downsample < ds) out.source_level = i;
  }
  out.downsample = ds;
  out.width = std::max(1, static_cast<int>(std::lround(info.width / ds)));
  out.height = std::max(1, static_cast<int>(std::lround(info.height / ds)));
  out.virtual_level = true;
  return out;
}

double patch_tissue_fraction(const TissueMask& mask, double extraction_downsample, double x0,
                             double y0, int patch_size_px) {
  const double k = extraction_downsample / mask.mask_downsample;
  const double mx0 = x0 * k, mx1 = (x0 + patch_size_px) * k;
  const double my0 = y0 * k, my1 = (y0 + patch_size_px) * k;
  const int ix0 = std::max(0, static_cast<int>(std::floor(mx0)));
  const int ix1 = std::min(mask.width, static_cast<int>(std::ceil(mx1)));
  const int iy0 = std::max(0, static_cast<int>(std::floor(my0)));
  const int iy1 = std::min(mask.height, static_cast<int>(std::ceil(my1)));
  double covered = 0.0;
  for (int y = iy0; y < iy1; ++y) {
    const double oy = std::min<double>(y + 1, my1) - std::max<double>(y, my0);
    double row = 0.0;
    for (int x = ix0; x < ix1; ++x) {
      if (!mask.at(x, y)) continue;
      row += std::min<double>(x + 1, mx1) - std::max<double>(x, mx0);
    }
    covered += row * oy;
  }
  const double side = patch_size_px * k;
  return std::clamp(covered / (side * side), 0.0, 1.0);
}

PatchGrid extract_patch_grid(const SlideImage& slide, const TissueMask& mask,
                             const std::string& slide_id, const ExtractionParams& params) {
  require(params.patch_size_px > 0, ErrorCode::kParameter, "patch_size_px must be positive");
  require(params.min_tissue >= 0.0 && params.min_tissue <= 1.0, ErrorCode::kParameter,
          "min_tissue must be in [0, 1]");
  const ExtractionLevel level = extraction_level(slide.info(), params.target_magnification);
  PatchGrid grid;
  grid.slide_id = slide_id;
  grid.patch_size_px = params.patch_size_px;
  grid.target_magnification = params.target_magnification;
  const int p = params.patch_size_px;
  const int nx = (level.width + p - 1) / p;
  const int ny = (level.height + p - 1) / p;
  for (int gy = 0; gy < ny; ++gy) {
    for (int gx = 0; gx < nx; ++gx) {
      const double frac =
          patch_tissue_fraction(mask, level.downsample, gx * p, gy * p, p);
      if (frac < params.min_tissue) continue;
      const Rect rect = intersect({static_cast<std::int64_t>(gx) * p,
                                   static_cast<std::int64_t>(gy) * p, p, p},
                                  {0, 0, level.width, level.height});
      grid.records.push_back({slide_id, gx, gy, rect, frac});
    }
  }
  return grid;
}

namespace {

RasterImage read_virtual(const SlideImage& slide, const ExtractionLevel& level, const Rect& rect) {
  const LevelInfo& src = slide.info().levels[static_cast<std::size_t>(level.source_level)];
  const double r = level.downsample / src.downsample;
  auto src_coord = [r](std::int64_t v, int limit) {
    return std::clamp((v + 0.5) * r - 0.5, 0.0, static_cast<double>(limit - 1));
  };
  const int sx0 = static_cast<int>(std::floor(src_coord(rect.x, src.width)));
  const int sx1 = std::min(src.width - 1,
                           static_cast<int>(std::floor(src_coord(rect.right() - 1, src.width))) + 1);
  const int sy0 = static_cast<int>(std::floor(src_coord(rect.y, src.height)));
  const int sy1 = std::min(src.height - 1,
                           static_cast<int>(std::floor(src_coord(rect.bottom() - 1, src.height))) + 1);
  const RasterImage window =
      slide.read_region(level.source_level, {sx0, sy0, sx1 - sx0 + 1, sy1 - sy0 + 1});
  RasterImage out(static_cast<int>(rect.w), static_cast<int>(rect.h));
  for (std::int64_t y = 0; y < rect.h; ++y) {
    const double sy = src_coord(rect.y + y, src.height) - sy0;
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, window.height() - 1);
    const double fy = sy - y0;
    for (std::int64_t x = 0; x < rect.w; ++x) {
      const double sx = src_coord(rect.x + x, src.width) - sx0;
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, window.width() - 1);
      const double fx = sx - x0;
      const Rgb a = window.at(x0, y0), b = window.at(x1, y0);
      const Rgb c = window.at(x0, y1), d = window.at(x1, y1);
      auto lerp = [&](double va, double vb, double vc, double vd) {
        const double top = va + (vb - va) * fx;
        const double bottom = vc + (vd - vc) * fx;
        return static_cast<std::uint8_t>(std::lround(top + (bottom - top) * fy));
      };
      out.set(static_cast<int>(x), static_cast<int>(y),
              {lerp(a.r, b.r, c.r, d.r), lerp(a.g, b.g, c.g, d.g), lerp(a.b, b.b, c.b, d.b)});
    }
  }
  return out;
}

}  // namespace

RasterImage read_patch(const SlideImage& slide, const PatchGrid& grid, const PatchRecord& record) {
  const ExtractionLevel level = extraction_level(slide.info(), grid.target_magnification);
  const Rect& rect = record.px_rect;
  if (rect.empty() || rect.x < 0 || rect.y < 0 || rect.right() > level.width ||
      rect.bottom() > level.height || rect.w > grid.patch_size_px ||
      rect.h > grid.patch_size_px) {
    fail(ErrorCode::kBounds, "patch record (" + std::to_string(record.grid_x) + "," +
                                 std::to_string(record.grid_y) + ") lies outside the slide");
  }
  const RasterImage pixels = level.virtual_level ? read_virtual(slide, level, rect)
                                                 : slide.read_region(level.source_level, rect);
  if (pixels.width() == grid.patch_size_px && pixels.height() == grid.patch_size_px) {
    return pixels;
  }
  RasterImage out(grid.patch_size_px, grid.patch_size_px, kWhite);
  out.paste(pixels, 0, 0);
  return out;
}

void save_patch_grid(const PatchGrid& grid, const std::filesystem::path& path) {
  Json header;
  header["schema_version"] = 1;
  header["slide_id"] = grid.slide_id;
  header["patch_size_px"] = grid.patch_size_px;
  header["target_magnification"] = grid.target_magnification;
  std::string text = header.dump() + "\n";
  for (const auto& r : grid.records) {
    Json obj;
    obj["slide_id"] = r.slide_id;
    obj["grid_x"] = r.grid_x;
    obj["grid_y"] = r.grid_y;
    obj["x0"] = r.px_rect.x;
    obj["y0"] = r.px_rect.y;
    obj["w"] = r.px_rect.w;
    obj["h"] = r.px_rect.h;
    obj["tissue_fraction"] = r.tissue_fraction;
    text += obj.dump() + "\n";
  }
  write_text_file(path, text);
}

PatchGrid load_patch_grid(const std::filesystem::path& path) {
  PatchGrid grid;
  bool have_header = false;
  for_each_jsonl(path, [&](const Json& obj, int line) {
    try {
      if (!have_header) {
        if (json_field(obj, "schema_version", line).get<int>() != 1) {
          fail(ErrorCode::kParse, "unsupported patch grid schema_version");
        }
        grid.slide_id = json_field(obj, "slide_id", line).get<std::string>();
        grid.patch_size_px = json_field(obj, "patch_size_px", line).get<int>();
        grid.target_magnification = json_field(obj, "target_magnification", line).get<double>();
        have_header = true;
        return;
      }
      PatchRecord r;
      r.slide_id = json_field(obj, "slide_id", line).get<std::string>();
      r.grid_x = json_field(obj, "grid_x", line).get<int>();
      r.grid_y = json_field(obj, "grid_y", line).get<int>();
      r.px_rect = {json_field(obj, "x0", line).get<std::int64_t>(),
                   json_field(obj, "y0", line).get<std::int64_t>(),
                   json_field(obj, "w", line).get<std::int64_t>(),
                   json_field(obj, "h", line).get<std::int64_t>()};
      r.tissue_fraction = json_field(obj, "tissue_fraction", line).get<double>();
      grid.records.push_back(std::move(r));
    } catch (const Json::type_error& e) {
      fail(ErrorCode::kParse, "line " + std::to_string(line) + ": " + e.what());
    }
  });
  if (!have_header) fail(ErrorCode::kParse, "patch grid file has no header: " + path.string());
  return grid;
}

}  // namespace histograde
