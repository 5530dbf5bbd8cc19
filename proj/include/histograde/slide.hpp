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

/// @file slide.hpp
/// @brief Slide catalog, tiled pyramid reader, and the synthetic slide generator.
///
/// A slide on disk is a directory holding `slide.json` (dimensions, pyramid
/// levels, scanner metadata) and one sub-directory of PNG tiles per level,
/// `level_<i>/<tx>_<ty>.png`. Level 0 is full resolution; level i is
/// downsampled by 2^i with a 2x2 box filter. Generated slides additionally
/// carry `cells.jsonl`, the ground-truth cell placements.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "histograde/raster.hpp"

namespace histograde {

inline constexpr int kNumClasses = 4;
inline constexpr int kNumCellTypes = 4;

/// Activity grades, ordered by severity.
enum class ActivityClass : int { kInactive = 0, kMild = 1, kModerate = 2, kSevere = 3 };

std::string_view class_name(int label);
/// Accepts "inactive", "mild", "moderate", "severe".
std::optional<int> parse_class_name(std::string_view name);

enum class CellType : int { kEpithelial = 0, kLymphocyte = 1, kMacrophage = 2, kNeutrophil = 3 };

std::string_view cell_type_name(CellType type);
std::optional<CellType> parse_cell_type(std::string_view name);

// ---------------------------------------------------------------------------
// Manifest

struct SlideEntry {
  std::string slide_id;
  std::string patient_id;
  int class_label = 0;
  /// Slide directory, relative to the manifest's directory unless absolute.
  std::string path;
  double base_magnification = 40.0;
  double microns_per_pixel = 0.25;

  friend bool operator==(const SlideEntry&, const SlideEntry&) = default;
};

struct SlideManifest {
  static constexpr int kSchemaVersion = 1;

  std::vector<SlideEntry> entries;
  int schema_version = kSchemaVersion;

  /// Throws kValidation naming the first violated invariant.
  void validate() const;
  const SlideEntry* find(std::string_view slide_id) const;

  friend bool operator==(const SlideManifest&, const SlideManifest&) = default;
};

/// JSONL: a `{"schema_version": N}` header line followed by one record per
/// slide with exactly the SlideEntry fields.
SlideManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const SlideManifest& manifest, const std::filesystem::path& path);

std::filesystem::path resolve_slide_dir(const std::filesystem::path& manifest_path,
                                        const SlideEntry& entry);

// ---------------------------------------------------------------------------
// Slide images

struct LevelInfo {
  int downsample = 1;
  int width = 0;
  int height = 0;
};

struct SlideInfo {
  int width = 0;
  int height = 0;
  int tile_size = 512;
  std::vector<LevelInfo> levels;
  double base_magnification = 40.0;
  double microns_per_pixel = 0.25;

  int level_count() const { return static_cast<int>(levels.size()); }
  double level_magnification(int level) const {
    return base_magnification / levels.at(level).downsample;
  }
};

/// Pyramid level geometry for a base size: halve until the longer side is at
/// most `min_side`.
std::vector<LevelInfo> pyramid_levels(int width, int height, int min_side = 64);

/// Read-only access to a tiled pyramid. Implementations supply tiles;
/// region reads stitch across tile boundaries. Safe for concurrent reads.
class SlideImage {
 public:
  virtual ~SlideImage() = default;

  const SlideInfo& info() const { return info_; }

  /// RGB raster of `rect` at `level`. Empty or out-of-bounds rects raise kBounds.
  RasterImage read_region(int level, const Rect& rect) const;

  /// The stored tile at grid position (tx, ty); edge tiles may be smaller.
  virtual RasterImage read_tile(int level, int tx, int ty) const = 0;

 protected:
  explicit SlideImage(SlideInfo info) : info_(std::move(info)) {}

 private:
  SlideInfo info_;
};

/// Pyramid held in memory; used for tests and for freshly generated slides.
class InMemorySlide final : public SlideImage {
 public:
  InMemorySlide(RasterImage level0, int tile_size = 512, double base_magnification = 40.0,
                double microns_per_pixel = 0.25);

  RasterImage read_tile(int level, int tx, int ty) const override;
  const RasterImage& level_image(int level) const { return levels_.at(level); }

 private:
  std::vector<RasterImage> levels_;
};

/// Pyramid stored as a PNG tile directory.
class TiledSlide final : public SlideImage {
 public:
  static std::unique_ptr<TiledSlide> open(const std::filesystem::path& dir);

  RasterImage read_tile(int level, int tx, int ty) const override;
  const std::filesystem::path& directory() const { return dir_; }

 private:
  TiledSlide(std::filesystem::path dir, SlideInfo info)
      : SlideImage(std::move(info)), dir_(std::move(dir)) {}

  std::filesystem::path dir_;
};

/// Writes every level of `slide` as tiles plus `slide.json`.
void write_tiled_slide(const InMemorySlide& slide, const std::filesystem::path& dir,
                       std::int64_t tissue_pixels = -1);

// ---------------------------------------------------------------------------
// Synthetic generation

struct CellAnnotation {
  CellType cell_type = CellType::kEpithelial;
  double cx = 0, cy = 0;  // level-0 pixel coordinates of the centre
  double rx = 0, ry = 0;  // semi-axes in pixels

  friend bool operator==(const CellAnnotation&, const CellAnnotation&) = default;
};

std::vector<CellAnnotation> load_annotations(const std::filesystem::path& path);
void save_annotations(const std::vector<CellAnnotation>& cells,
                      const std::filesystem::path& path);

using CellPalette = std::array<Rgb, kNumCellTypes>;
/// [class][cell type] mean blobs per tissue megapixel.
using DensityProfile = std::array<std::array<double, kNumCellTypes>, kNumClasses>;

CellPalette default_cell_palette();
DensityProfile default_density_profile();

inline constexpr Rgb kGlassColor{245, 245, 245};
inline constexpr Rgb kTissueColor{236, 176, 204};

struct SynthConfig {
  int n_slides = 200;
  std::uint64_t seed = 1;
  std::array<double, kNumClasses> class_mix{1.0, 1.0, 1.0, 1.0};
  int slide_px = 2048;
  int tile_size = 512;
  double base_magnification = 40.0;
  double microns_per_pixel = 0.25;
  CellPalette cell_palette = default_cell_palette();
  DensityProfile density_profile = default_density_profile();
  /// Extra small tissue fragments per slide, drawn uniformly in [0, max].
  int max_fragments = 2;
  /// Per-channel uniform noise amplitude on glass and tissue.
  int background_noise = 0;

  /// Throws kValidation naming the violated invariant.
  void validate() const;
};

struct TissueEllipse {
  double cx = 0, cy = 0, a = 0, b = 0, angle = 0;

  bool contains(double x, double y) const;
  double area() const { return 3.14159265358979323846 * a * b; }
};

/// Everything needed to rasterise one slide.
struct SlideLayout {
  int width = 0;
  int height = 0;
  std::vector<TissueEllipse> tissue;
  std::vector<CellAnnotation> cells;
};

struct RenderedSlide {
  RasterImage image;
  std::vector<CellAnnotation> cells;  // exactly the blobs drawn
  std::int64_t tissue_pixels = 0;
};

/// Draws tissue and cell blobs. Cells whose blob would touch another blob are
/// skipped and left out of the returned annotations.
RenderedSlide render_slide(const SlideLayout& layout, const CellPalette& palette,
                           std::uint64_t noise_seed, int noise_amplitude);

/// Random slide layout for a class: tissue ellipses covering at least 30% of
/// the slide and Poisson cell counts from the density profile.
SlideLayout random_layout(const SynthConfig& cfg, int class_label, std::uint64_t seed);

/// Writes `n_slides` tiled slides under `out_dir/slides/`, their annotation
/// sidecars, and `out_dir/manifest.jsonl`. Deterministic given cfg.seed.
SlideManifest generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                               int threads = 1);

}  // namespace histograde
