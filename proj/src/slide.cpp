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

#include "histograde/slide.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include "histograde/error.hpp"
#include "histograde/io.hpp"
#include "histograde/parallel.hpp"
#include "histograde/rng.hpp"

namespace fs = std::filesystem;

namespace histograde {

namespace {

constexpr std::array<std::string_view, kNumClasses> kClassNames = {"inactive", "mild",
                                                                   "moderate", "severe"};
constexpr std::array<std::string_view, kNumCellTypes> kCellTypeNames = {
    "epithelial", "lymphocyte", "macrophage", "neutrophil"};

}  // namespace

std::string_view class_name(int label) {
  require(label >= 0 && label < kNumClasses, ErrorCode::kContract,
          "invalid class label " + std::to_string(label));
  return kClassNames[static_cast<std::size_t>(label)];
}

std::optional<int> parse_class_name(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i) {
    if (kClassNames[static_cast<std::size_t>(i)] == name) return i;
  }
  return std::nullopt;
}

std::string_view cell_type_name(CellType type) {
  return kCellTypeNames[static_cast<std::size_t>(type)];
}

std::optional<CellType> parse_cell_type(std::string_view name) {
  for (int i = 0; i < kNumCellTypes; ++i) {
    if (kCellTypeNames[static_cast<std::size_t>(i)] == name) return static_cast<CellType>(i);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Manifest

void SlideManifest::validate() const {
  std::set<std::string_view> seen;
  for (const auto& e : entries) {
    if (e.slide_id.empty()) fail(ErrorCode::kValidation, "slide_id must be nonempty");
    if (!seen.insert(e.slide_id).second) {
      fail(ErrorCode::kValidation, "duplicate slide_id '" + e.slide_id + "'");
    }
    if (e.patient_id.empty()) {
      fail(ErrorCode::kValidation, "slide '" + e.slide_id + "' has an empty patient_id");
    }
    if (e.class_label < 0 || e.class_label >= kNumClasses) {
      fail(ErrorCode::kValidation, "slide '" + e.slide_id + "' has class_label outside 0..3");
    }
    if (!(e.base_magnification > 0.0) || !(e.microns_per_pixel > 0.0)) {
      fail(ErrorCode::kValidation,
           "slide '" + e.slide_id + "' needs positive magnification and microns_per_pixel");
    }
  }
}

const SlideEntry* SlideManifest::find(std::string_view slide_id) const {
  for (const auto& e : entries) {
    if (e.slide_id == slide_id) return &e;
  }
  return nullptr;
}

SlideManifest load_manifest(const fs::path& path) {
  SlideManifest manifest;
  bool have_header = false;
  for_each_jsonl(path, [&](const Json& obj, int line) {
    if (!have_header) {
      json_only_fields(obj, {"schema_version"}, line);
      const auto& version = json_field(obj, "schema_version", line);
      if (!version.is_number_integer() || version.get<int>() != SlideManifest::kSchemaVersion) {
        fail(ErrorCode::kParse, "line " + std::to_string(line) +
                                    ": unsupported manifest schema_version " + version.dump());
      }
      manifest.schema_version = version.get<int>();
      have_header = true;
      return;
    }
    json_only_fields(obj, {"slide_id", "patient_id", "class_label", "path",
                           "base_magnification", "microns_per_pixel"},
                     line);
    try {
      SlideEntry e;
      e.slide_id = json_field(obj, "slide_id", line).get<std::string>();
      e.patient_id = json_field(obj, "patient_id", line).get<std::string>();
      e.class_label = json_field(obj, "class_label", line).get<int>();
      e.path = json_field(obj, "path", line).get<std::string>();
      e.base_magnification = json_field(obj, "base_magnification", line).get<double>();
      e.microns_per_pixel = json_field(obj, "microns_per_pixel", line).get<double>();
      manifest.entries.push_back(std::move(e));
    } catch (const Json::type_error& err) {
      fail(ErrorCode::kParse, "line " + std::to_string(line) + ": " + err.what());
    }
  });
  if (!have_header) fail(ErrorCode::kParse, "manifest has no schema_version header");
  manifest.validate();
  return manifest;
}

void save_manifest(const SlideManifest& manifest, const fs::path& path) {
  manifest.validate();
  std::string text = Json{{"schema_version", manifest.schema_version}}.dump() + "\n";
  for (const auto& e : manifest.entries) {
    Json obj;
    obj["slide_id"] = e.slide_id;
    obj["patient_id"] = e.patient_id;
    obj["class_label"] = e.class_label;
    obj["path"] = e.path;
    obj["base_magnification"] = e.base_magnification;
    obj["microns_per_pixel"] = e.microns_per_pixel;
    text += obj.dump() + "\n";
  }
  write_text_file(path, text);
}

fs::path resolve_slide_dir(const fs::path& manifest_path, const SlideEntry& entry) {
  const fs::path p(entry.path);
  return p.is_absolute() ? p : manifest_path.parent_path() / p;
}

// ---------------------------------------------------------------------------
// Slide images

std::vector<LevelInfo> pyramid_levels(int width, int height, int min_side) {
  std::vector<LevelInfo> levels{{1, width, height}};
  while (std::max(levels.back().width, levels.back().height) > min_side) {
    const auto& prev = levels.back();
    levels.push_back({prev.downsample * 2, (prev.width + 1) / 2, (prev.height + 1) / 2});
  }
  return levels;
}

RasterImage SlideImage::read_region(int level, const Rect& rect) const {
  require(level >= 0 && level < info_.level_count(), ErrorCode::kBounds,
          "level " + std::to_string(level) + " does not exist");
  const LevelInfo& li = info_.levels[static_cast<std::size_t>(level)];
  if (rect.empty() || rect.x < 0 || rect.y < 0 || rect.right() > li.width ||
      rect.bottom() > li.height) {
    fail(ErrorCode::kBounds, "region [" + std::to_string(rect.x) + "," + std::to_string(rect.y) +
                                 " " + std::to_string(rect.w) + "x" + std::to_string(rect.h) +
                                 "] outside level " + std::to_string(level) + " bounds");
  }
  const int ts = info_.tile_size;
  RasterImage out(static_cast<int>(rect.w), static_cast<int>(rect.h));
  const auto tx0 = rect.x / ts, tx1 = (rect.right() - 1) / ts;
  const auto ty0 = rect.y / ts, ty1 = (rect.bottom() - 1) / ts;
  for (auto ty = ty0; ty <= ty1; ++ty) {
    for (auto tx = tx0; tx <= tx1; ++tx) {
      const RasterImage tile = read_tile(level, static_cast<int>(tx), static_cast<int>(ty));
      out.paste(tile, static_cast<int>(tx * ts - rect.x), static_cast<int>(ty * ts - rect.y));
    }
  }
  return out;
}

InMemorySlide::InMemorySlide(RasterImage level0, int tile_size, double base_magnification,
                             double microns_per_pixel)
    : SlideImage([&] {
        require(tile_size > 0, ErrorCode::kParameter, "tile_size must be positive");
        require(!level0.empty(), ErrorCode::kShape, "slide image is empty");
        SlideInfo info;
        info.width = level0.width();
        info.height = level0.height();
        info.tile_size = tile_size;
        info.levels = pyramid_levels(info.width, info.height);
        info.base_magnification = base_magnification;
        info.microns_per_pixel = microns_per_pixel;
        return info;
      }()) {
  levels_.push_back(std::move(level0));
  while (levels_.size() < info().levels.size()) {
    levels_.push_back(downsample_half(levels_.back()));
  }
}

RasterImage InMemorySlide::read_tile(int level, int tx, int ty) const {
  const RasterImage& img = levels_.at(static_cast<std::size_t>(level));
  const int ts = info().tile_size;
  const Rect tile{static_cast<std::int64_t>(tx) * ts, static_cast<std::int64_t>(ty) * ts, ts, ts};
  return img.crop(intersect(tile, {0, 0, img.width(), img.height()}));
}

std::unique_ptr<TiledSlide> TiledSlide::open(const fs::path& dir) {
  const fs::path meta = dir / "slide.json";
  if (!fs::exists(meta)) fail(ErrorCode::kCorruption, "missing slide metadata: " + meta.string());
  SlideInfo info;
  try {
    const Json j = Json::parse(read_text_file(meta));
    info.width = j.at("width").get<int>();
    info.height = j.at("height").get<int>();
    info.tile_size = j.at("tile_size").get<int>();
    info.base_magnification = j.at("base_magnification").get<double>();
    info.microns_per_pixel = j.at("microns_per_pixel").get<double>();
    for (const auto& l : j.at("levels")) {
      info.levels.push_back(
          {l.at("downsample").get<int>(), l.at("width").get<int>(), l.at("height").get<int>()});
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::kCorruption, "bad slide metadata " + meta.string() + ": " + e.what());
  }
  if (info.levels.empty() || info.levels[0].downsample != 1) {
    fail(ErrorCode::kCorruption, "level 0 must have downsample 1: " + meta.string());
  }
  for (std::size_t i = 1; i < info.levels.size(); ++i) {
    if (info.levels[i].downsample <= info.levels[i - 1].downsample) {
      fail(ErrorCode::kCorruption, "downsample factors must increase: " + meta.string());
    }
  }
  return std::unique_ptr<TiledSlide>(new TiledSlide(dir, std::move(info)));
}

RasterImage TiledSlide::read_tile(int level, int tx, int ty) const {
  const fs::path file =
      dir_ / ("level_" + std::to_string(level)) / (std::to_string(tx) + "_" + std::to_string(ty) + ".png");
  RasterImage tile = read_png(file);
  const LevelInfo& li = info().levels.at(static_cast<std::size_t>(level));
  const int ts = info().tile_size;
  const int ew = std::min(ts, li.width - tx * ts);
  const int eh = std::min(ts, li.height - ty * ts);
  if (tile.width() != ew || tile.height() != eh) {
    fail(ErrorCode::kCorruption, "tile has unexpected size: " + file.string());
  }
  return tile;
}

void write_tiled_slide(const InMemorySlide& slide, const fs::path& dir,
                       std::int64_t tissue_pixels) {
  const SlideInfo& info = slide.info();
  fs::create_directories(dir);
  Json levels = Json::array();
  for (int level = 0; level < info.level_count(); ++level) {
    const LevelInfo& li = info.levels[static_cast<std::size_t>(level)];
    levels.push_back({{"downsample", li.downsample}, {"width", li.width}, {"height", li.height}});
    const fs::path level_dir = dir / ("level_" + std::to_string(level));
    fs::create_directories(level_dir);
    const int nx = (li.width + info.tile_size - 1) / info.tile_size;
    const int ny = (li.height + info.tile_size - 1) / info.tile_size;
    for (int ty = 0; ty < ny; ++ty) {
      for (int tx = 0; tx < nx; ++tx) {
        write_png(slide.read_tile(level, tx, ty),
                  level_dir / (std::to_string(tx) + "_" + std::to_string(ty) + ".png"));
      }
    }
  }
  Json meta;
  meta["width"] = info.width;
  meta["height"] = info.height;
  meta["tile_size"] = info.tile_size;
  meta["base_magnification"] = info.base_magnification;
  meta["microns_per_pixel"] = info.microns_per_pixel;
  meta["levels"] = levels;
  if (tissue_pixels >= 0) meta["tissue_pixels"] = tissue_pixels;
  write_text_file(dir / "slide.json", meta.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Annotations

std::vector<CellAnnotation> load_annotations(const fs::path& path) {
  std::vector<CellAnnotation> cells;
  for_each_jsonl(path, [&](const Json& obj, int line) {
    json_only_fields(obj, {"cell_type", "cx", "cy", "rx", "ry"}, line);
    const auto type = parse_cell_type(json_field(obj, "cell_type", line).get<std::string>());
    if (!type) fail(ErrorCode::kParse, "line " + std::to_string(line) + ": unknown cell_type");
    cells.push_back({*type, json_field(obj, "cx", line).get<double>(),
                     json_field(obj, "cy", line).get<double>(),
                     json_field(obj, "rx", line).get<double>(),
                     json_field(obj, "ry", line).get<double>()});
  });
  return cells;
}

void save_annotations(const std::vector<CellAnnotation>& cells, const fs::path& path) {
  std::string text;
  for (const auto& c : cells) {
    Json obj;
    obj["cell_type"] = cell_type_name(c.cell_type);
    obj["cx"] = c.cx;
    obj["cy"] = c.cy;
    obj["rx"] = c.rx;
    obj["ry"] = c.ry;
    text += obj.dump() + "\n";
  }
  write_text_file(path, text);
}

// ---------------------------------------------------------------------------
// Synthesis

CellPalette default_cell_palette() {
  // Each colour falls in an 8-bin channel histogram cell no other element of
  // the slide uses, and differs from glass/tissue by > 24 in some channel.
  return {Rgb{196, 84, 132},   // epithelial
          Rgb{52, 44, 148},    // lymphocyte
          Rgb{148, 100, 60},   // macrophage
          Rgb{90, 20, 200}};   // neutrophil
}

DensityProfile default_density_profile() {
  //        epithelial lymphocyte macrophage neutrophil
  return {{{260.0, 80.0, 40.0, 30.0},      // inactive
           {220.0, 140.0, 50.0, 50.0},     // mild
           {180.0, 220.0, 70.0, 100.0},    // moderate
           {140.0, 300.0, 90.0, 260.0}}};  // severe
}

void SynthConfig::validate() const {
  require(n_slides > 0, ErrorCode::kValidation, "n_slides must be positive");
  double mix = 0.0;
  for (double w : class_mix) {
    require(w >= 0.0 && std::isfinite(w), ErrorCode::kValidation,
            "class_mix weights must be nonnegative");
    mix += w;
  }
  require(mix > 0.0, ErrorCode::kValidation, "class_mix must sum to a positive value");
  require(slide_px >= 256, ErrorCode::kValidation, "slide_px must be at least 256");
  require(tile_size > 0, ErrorCode::kValidation, "tile_size must be positive");
  require(base_magnification > 0.0 && microns_per_pixel > 0.0, ErrorCode::kValidation,
          "base_magnification and microns_per_pixel must be positive");
  require(max_fragments >= 0, ErrorCode::kValidation, "max_fragments must be nonnegative");
  require(background_noise >= 0 && background_noise <= 8, ErrorCode::kValidation,
          "background_noise must be in [0, 8]");
  for (const auto& row : density_profile) {
    for (double d : row) {
      require(d >= 0.0 && std::isfinite(d), ErrorCode::kValidation,
              "density_profile entries must be nonnegative");
    }
  }
  const auto neutro = static_cast<std::size_t>(CellType::kNeutrophil);
  for (std::size_t c = 1; c < kNumClasses; ++c) {
    require(density_profile[c][neutro] >= density_profile[c - 1][neutro],
            ErrorCode::kValidation,
            "density_profile must be nondecreasing in neutrophil density from inactive to "
            "severe");
  }
  auto distinct = [](Rgb a, Rgb b) {
    return std::abs(a.r - b.r) > 24 || std::abs(a.g - b.g) > 24 || std::abs(a.b - b.b) > 24;
  };
  for (std::size_t i = 0; i < cell_palette.size(); ++i) {
    require(distinct(cell_palette[i], kGlassColor) && distinct(cell_palette[i], kTissueColor),
            ErrorCode::kValidation, "cell_palette colours must differ from glass and tissue");
    for (std::size_t j = i + 1; j < cell_palette.size(); ++j) {
      require(distinct(cell_palette[i], cell_palette[j]), ErrorCode::kValidation,
              "cell_palette colours must be mutually distinct");
    }
  }
}

bool TissueEllipse::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = (dx * c + dy * s) / a;
  const double v = (-dx * s + dy * c) / b;
  return u * u + v * v <= 1.0;
}

namespace {

constexpr int kCellMargin = 8;
constexpr double kCellGap = 2.0;

/// Uniform grid over blob centres for overlap queries.
class BlobIndex {
 public:
  BlobIndex(int width, int height)
      : nx_(width / kCell + 1), ny_(height / kCell + 1),
        buckets_(static_cast<std::size_t>(nx_ * ny_)) {}

  bool conflicts(const CellAnnotation& c) const {
    const double rc = std::max(c.rx, c.ry);
    const int bx = static_cast<int>(c.cx) / kCell, by = static_cast<int>(c.cy) / kCell;
    for (int y = std::max(0, by - 1); y <= std::min(ny_ - 1, by + 1); ++y) {
      for (int x = std::max(0, bx - 1); x <= std::min(nx_ - 1, bx + 1); ++x) {
        for (const auto& o : buckets_[static_cast<std::size_t>(y * nx_ + x)]) {
          const double limit = rc + std::max(o.rx, o.ry) + kCellGap;
          const double dx = c.cx - o.cx, dy = c.cy - o.cy;
          if (dx * dx + dy * dy < limit * limit) return true;
        }
      }
    }
    return false;
  }

  void add(const CellAnnotation& c) {
    const int bx = static_cast<int>(c.cx) / kCell, by = static_cast<int>(c.cy) / kCell;
    buckets_[static_cast<std::size_t>(by * nx_ + bx)].push_back(c);
  }

 private:
  // Bucket edge exceeds the largest possible conflict distance (7 + 7 + 2).
  static constexpr int kCell = 20;
  int nx_, ny_;
  std::vector<std::vector<CellAnnotation>> buckets_;
};

bool cell_in_bounds(const CellAnnotation& c, int width, int height) {
  return c.cx >= kCellMargin && c.cy >= kCellMargin && c.cx <= width - kCellMargin &&
         c.cy <= height - kCellMargin && c.rx > 0 && c.ry > 0 && c.rx <= 7.0 && c.ry <= 7.0;
}

std::vector<std::uint8_t> tissue_bitmap(const SlideLayout& layout) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(layout.width) *
                                 static_cast<std::size_t>(layout.height));
  for (const auto& e : layout.tissue) {
    const double r = std::max(e.a, e.b);
    const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - r)));
    const int x1 = std::min(layout.width - 1, static_cast<int>(std::ceil(e.cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - r)));
    const int y1 = std::min(layout.height - 1, static_cast<int>(std::ceil(e.cy + r)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (e.contains(x + 0.5, y + 0.5)) {
          bits[static_cast<std::size_t>(y) * static_cast<std::size_t>(layout.width) +
               static_cast<std::size_t>(x)] = 1;
        }
      }
    }
  }
  return bits;
}

}  // namespace

RenderedSlide render_slide(const SlideLayout& layout, const CellPalette& palette,
                           std::uint64_t noise_seed, int noise_amplitude) {
  require(layout.width > 0 && layout.height > 0, ErrorCode::kShape, "layout has no area");
  RenderedSlide out;
  out.image = RasterImage(layout.width, layout.height);
  const auto tissue = tissue_bitmap(layout);

  Rng noise(noise_seed);
  const std::uint64_t span = static_cast<std::uint64_t>(2 * noise_amplitude + 1);
  auto jitter = [&](std::uint8_t base, std::uint64_t bits) {
    const int v = base + static_cast<int>(bits % span) - noise_amplitude;
    return static_cast<std::uint8_t>(std::clamp(v, 0, 255));
  };
  for (int y = 0; y < layout.height; ++y) {
    std::uint8_t* row = out.image.row(y);
    for (int x = 0; x < layout.width; ++x) {
      const bool is_tissue =
          tissue[static_cast<std::size_t>(y) * static_cast<std::size_t>(layout.width) +
                 static_cast<std::size_t>(x)] != 0;
      out.tissue_pixels += is_tissue ? 1 : 0;
      const Rgb base = is_tissue ? kTissueColor : kGlassColor;
      const std::uint64_t bits = noise_amplitude > 0 ? noise.next() : 0;
      row[3 * x] = jitter(base.r, bits);
      row[3 * x + 1] = jitter(base.g, bits >> 16);
      row[3 * x + 2] = jitter(base.b, bits >> 32);
    }
  }

  BlobIndex index(layout.width, layout.height);
  for (const auto& c : layout.cells) {
    if (!cell_in_bounds(c, layout.width, layout.height) || index.conflicts(c)) continue;
    index.add(c);
    out.cells.push_back(c);
    const Rgb color = palette[static_cast<std::size_t>(c.cell_type)];
    const int x0 = static_cast<int>(std::floor(c.cx - c.rx));
    const int x1 = static_cast<int>(std::ceil(c.cx + c.rx));
    const int y0 = static_cast<int>(std::floor(c.cy - c.ry));
    const int y1 = static_cast<int>(std::ceil(c.cy + c.ry));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double u = (x + 0.5 - c.cx) / c.rx;
        const double v = (y + 0.5 - c.cy) / c.ry;
        if (u * u + v * v <= 1.0) out.image.set(x, y, color);
      }
    }
  }
  return out;
}

SlideLayout random_layout(const SynthConfig& cfg, int class_label, std::uint64_t seed) {
  Rng rng(seed);
  const double s = cfg.slide_px;
  SlideLayout layout;
  layout.width = cfg.slide_px;
  layout.height = cfg.slide_px;
  // The main ellipse alone covers at least pi * 0.33^2 > 34% of the slide and
  // stays inside it for any rotation.
  layout.tissue.push_back({s * rng.uniform(0.47, 0.53), s * rng.uniform(0.47, 0.53),
                           s * rng.uniform(0.33, 0.46), s * rng.uniform(0.33, 0.46),
                           rng.uniform(0.0, 3.141592653589793)});
  const auto fragments = rng.between(0, cfg.max_fragments);
  for (std::int64_t i = 0; i < fragments; ++i) {
    const double a = s * rng.uniform(0.06, 0.14);
    const double b = s * rng.uniform(0.06, 0.14);
    const double r = std::max(a, b);
    layout.tissue.push_back({rng.uniform(r, s - r), rng.uniform(r, s - r), a, b,
                             rng.uniform(0.0, 3.141592653589793)});
  }

  const auto tissue = tissue_bitmap(layout);
  const auto tissue_px = std::count(tissue.begin(), tissue.end(), std::uint8_t{1});
  const double megapixels = static_cast<double>(tissue_px) / 1e6;

  BlobIndex index(layout.width, layout.height);
  const auto& densities = cfg.density_profile.at(static_cast<std::size_t>(class_label));
  for (int t = 0; t < kNumCellTypes; ++t) {
    const auto target = rng.poisson(densities[static_cast<std::size_t>(t)] * megapixels);
    for (std::int64_t k = 0; k < target; ++k) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        CellAnnotation c;
        c.cell_type = static_cast<CellType>(t);
        c.cx = rng.uniform(kCellMargin, s - kCellMargin);
        c.cy = rng.uniform(kCellMargin, s - kCellMargin);
        c.rx = rng.uniform(3.0, 7.0);
        c.ry = rng.uniform(3.0, 7.0);
        const auto px = static_cast<std::size_t>(c.cy) * static_cast<std::size_t>(layout.width) +
                        static_cast<std::size_t>(c.cx);
        if (!tissue[px] || index.conflicts(c)) continue;
        index.add(c);
        layout.cells.push_back(c);
        break;
      }
    }
  }
  return layout;
}

SlideManifest generate_dataset(const SynthConfig& cfg, const fs::path& out_dir, int threads) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "slides", ec);
  if (ec) fail(ErrorCode::kIo, "cannot create dataset directory: " + ec.message());

  Rng rng(mix_seed(cfg.seed, "dataset"));
  const double mix_total = std::accumulate(cfg.class_mix.begin(), cfg.class_mix.end(), 0.0);
  SlideManifest manifest;
  int patient = 0;
  while (static_cast<int>(manifest.entries.size()) < cfg.n_slides) {
    const int remaining = cfg.n_slides - static_cast<int>(manifest.entries.size());
    const int n = std::min<int>(remaining, static_cast<int>(rng.between(1, 4)));
    char patient_id[16];
    std::snprintf(patient_id, sizeof patient_id, "P%04d", patient++);
    for (int k = 0; k < n; ++k) {
      const double u = rng.uniform() * mix_total;
      int label = 0;
      double cumulative = 0.0;
      for (int c = 0; c < kNumClasses; ++c) {
        if (cfg.class_mix[static_cast<std::size_t>(c)] <= 0.0) continue;
        label = c;
        cumulative += cfg.class_mix[static_cast<std::size_t>(c)];
        if (u < cumulative) break;
      }
      char slide_id[16];
      std::snprintf(slide_id, sizeof slide_id, "S%04zu", manifest.entries.size());
      manifest.entries.push_back({slide_id, patient_id, label, std::string("slides/") + slide_id,
                                  cfg.base_magnification, cfg.microns_per_pixel});
    }
  }

  parallel_for(manifest.entries.size(), threads, [&](std::size_t i) {
    const SlideEntry& e = manifest.entries[i];
    const std::uint64_t slide_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(i));
    const SlideLayout layout = random_layout(cfg, e.class_label, slide_seed);
    RenderedSlide rendered =
        render_slide(layout, cfg.cell_palette, mix_seed(slide_seed, "noise"), cfg.background_noise);
    if (rendered.tissue_pixels * 10 < static_cast<std::int64_t>(layout.width) * layout.height * 3) {
      fail(ErrorCode::kValidation, "slide " + e.slide_id + " has less than 30% tissue");
    }
    const fs::path dir = out_dir / e.path;
    InMemorySlide slide(std::move(rendered.image), cfg.tile_size, cfg.base_magnification,
                        cfg.microns_per_pixel);
    write_tiled_slide(slide, dir, rendered.tissue_pixels);
    save_annotations(rendered.cells, dir / "cells.jsonl");
  });

  save_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

}  // namespace histograde
