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

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "histograde/raster.hpp"
#include "histograde/slide.hpp"

namespace histograde {

/// Saturation / luminance test separating stained tissue from glass.
struct TissueThresholds {
  double saturation = 0.08;
  double luminance = 0.82;
};

inline bool is_tissue_pixel(Rgb c, const TissueThresholds& t = {}) {
  return saturation(c) > t.saturation || luminance(c) < t.luminance;
}

struct TissueMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1
  int mask_downsample = 1;         // relative to slide level 0

  bool at(int x, int y) const {
    return bits[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                static_cast<std::size_t>(x)] != 0;
  }
  std::int64_t count() const;
};

/// Level whose magnification is closest to `magnification` in log scale.
int nearest_level(const SlideInfo& info, double magnification);

/// Classifies each pixel of `mask_level`, then applies one 3x3 opening and one
/// 3x3 closing (borders replicate).
TissueMask compute_tissue_mask(const SlideImage& slide, int mask_level,
                               const TissueThresholds& thresholds = {});
/// Mask at the level nearest 1.25x.
TissueMask compute_tissue_mask(const SlideImage& slide);

void morphological_open_close(std::vector<std::uint8_t>& bits, int width, int height);

struct PatchRecord {
  std::string slide_id;
  int grid_x = 0;
  int grid_y = 0;
  Rect px_rect;  // at the extraction level, clipped to the level bounds
  double tissue_fraction = 0.0;

  friend bool operator==(const PatchRecord&, const PatchRecord&) = default;
};

struct PatchGrid {
  std::string slide_id;
  int patch_size_px = 224;
  double target_magnification = 20.0;
  std::vector<PatchRecord> records;  // row-major: grid_y, then grid_x

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

struct ExtractionParams {
  int patch_size_px = 224;
  double target_magnification = 20.0;
  double min_tissue = 0.05;
};

/// Where patches at a target magnification come from. When no stored level
/// matches exactly, pixels are resampled bilinearly from the nearest finer
/// stored level (`virtual_level`).
struct ExtractionLevel {
  int source_level = 0;
  double downsample = 1.0;  // relative to level 0
  int width = 0;
  int height = 0;
  bool virtual_level = false;
};

ExtractionLevel extraction_level(const SlideInfo& info, double target_magnification);

/// Fraction of the patch-sized square at (x0, y0) of the extraction level
/// covered by mask tissue, by area-weighted projection onto the mask grid.
double patch_tissue_fraction(const TissueMask& mask, double extraction_downsample, double x0,
                             double y0, int patch_size_px);

PatchGrid extract_patch_grid(const SlideImage& slide, const TissueMask& mask,
                             const std::string& slide_id, const ExtractionParams& params = {});

/// patch_size_px square for `record`; area outside the slide is white.
RasterImage read_patch(const SlideImage& slide, const PatchGrid& grid, const PatchRecord& record);

/// JSONL: a header line {schema_version, slide_id, patch_size_px,
/// target_magnification}, then {slide_id, grid_x, grid_y, x0, y0, w, h,
/// tissue_fraction} per record.
void save_patch_grid(const PatchGrid& grid, const std::filesystem::path& path);
PatchGrid load_patch_grid(const std::filesystem::path& path);

}  // namespace histograde
