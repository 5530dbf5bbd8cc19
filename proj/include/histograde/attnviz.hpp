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

/// @file attnviz.hpp
/// @brief Attention heatmap overlays on region imagery.

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "histograde/preprocess.hpp"
#include "histograde/raster.hpp"
#include "histograde/slide.hpp"
#include "histograde/vit.hpp"

namespace histograde {

enum class Upsampling { kNearest, kBilinear };

struct OverlayConfig {
  double alpha = 0.45;
  Upsampling upsampling = Upsampling::kBilinear;

  void validate() const;
};

/// Blue (t = 0) through white (t = 0.5) to red (t = 1).
Rgb diverging_ramp(double t);

/// Min-max scaled weights; a constant map gives 0.5 everywhere.
std::vector<double> minmax_scale(std::span<const double> weights);

/// Pixels of the region window at the extraction level, side * patch_size
/// square; cells outside the slide are white.
RasterImage read_region_image(const SlideImage& slide, const PatchGrid& grid, const Region& region,
                              int region_side);

/// Blends the colour-mapped attention over `base` (the region image). Cells
/// without a retained patch stay unshaded.
RasterImage overlay_attention(const RasterImage& base, int patch_size, int region_side,
                              const AttentionMap& map, const OverlayConfig& cfg);

RasterImage render_attention_overlay(const SlideImage& slide, const PatchGrid& grid, const Region& region,
                                     const AttentionMap& map, int region_side, const OverlayConfig& cfg);

/// Epithelial red, lymphocyte green, macrophage blue, neutrophil yellow.
CellPalette annotation_palette();

/// Filled cell outlines in annotation_palette() over `base`. Annotations are
/// in level-0 pixels.
RasterImage draw_annotations(const RasterImage& base, const SlideImage& slide, const PatchGrid& grid,
                             const Region& region, std::span<const CellAnnotation> cells);

/// Writes `{slide_id}_{gx}_{gy}_raw.png`, `..._attention.png` and, with
/// annotations, `..._annotations.png` into `out_dir`. Returns the paths.
std::vector<std::filesystem::path> export_panel(const SlideImage& slide, const PatchGrid& grid,
                                                const Region& region, const AttentionMap& map,
                                                int region_side, const OverlayConfig& cfg,
                                                const std::vector<CellAnnotation>* annotations,
                                                const std::filesystem::path& out_dir);

}  // namespace histograde
