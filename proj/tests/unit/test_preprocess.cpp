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

#include <set>
#include <utility>

#include "doctest.h"
#include "histograde/preprocess.hpp"
#include "histograde/rng.hpp"
#include "test_util.hpp"

using namespace histograde;
using histograde::testing::TempDir;
using histograde::testing::thrown_code;

TEST_SUITE("preprocess") {
  TEST_CASE("glass gives an empty mask and pink tissue a full one") {
    const InMemorySlide glass(RasterImage(256, 256, kWhite), 128);
    CHECK(compute_tissue_mask(glass, 0).count() == 0);
    const InMemorySlide pink(RasterImage(256, 256, kTissueColor), 128);
    const TissueMask m = compute_tissue_mask(pink, 1);
    CHECK(m.count() == 128 * 128);
    CHECK(m.mask_downsample == 2);
  }

  TEST_CASE("mask area tracks the generated tissue area") {
    SynthConfig cfg;
    cfg.slide_px = 2048;
    for (std::uint64_t seed : {3u, 4u, 5u}) {
      SlideLayout layout = random_layout(cfg, 0, seed);
      layout.cells.clear();
      const RenderedSlide r = render_slide(layout, cfg.cell_palette, 1, 0);
      const InMemorySlide slide(r.image);
      const TissueMask mask = compute_tissue_mask(slide);
      CHECK(mask.mask_downsample == 32);
      const double area = static_cast<double>(mask.count()) * 32.0 * 32.0;
      CHECK(area == doctest::Approx(static_cast<double>(r.tissue_pixels)).epsilon(0.05));
    }
  }

  TEST_CASE("opening removes specks and closing fills pinholes") {
    std::vector<std::uint8_t> bits(10 * 10, 0);
    bits[5 * 10 + 5] = 1;
    morphological_open_close(bits, 10, 10);
    CHECK(std::count(bits.begin(), bits.end(), 1) == 0);
    std::vector<std::uint8_t> full(10 * 10, 1);
    full[5 * 10 + 5] = 0;
    morphological_open_close(full, 10, 10);
    CHECK(std::count(full.begin(), full.end(), 0) == 0);
  }

  TEST_CASE("extraction level selection") {
    const InMemorySlide slide(RasterImage(1024, 512), 256);
    const ExtractionLevel exact = extraction_level(slide.info(), 20.0);
    CHECK(exact.source_level == 1);
    CHECK_FALSE(exact.virtual_level);
    CHECK(exact.width == 512);
    const ExtractionLevel virt = extraction_level(slide.info(), 15.0);
    CHECK(virt.virtual_level);
    CHECK(virt.source_level == 1);
    CHECK(virt.downsample == doctest::Approx(40.0 / 15.0));
    CHECK(virt.width == 384);
    CHECK(thrown_code([&] { extraction_level(slide.info(), 60.0); }) == ErrorCode::kCapability);
  }

  TEST_CASE("all-glass slide yields an empty grid") {
    const InMemorySlide glass(RasterImage(512, 512, kWhite), 256);
    CHECK(extract_patch_grid(glass, compute_tissue_mask(glass, 0), "g").empty());
  }

  TEST_CASE("exact tiling of an all-tissue slide") {
    const InMemorySlide slide(RasterImage(448, 448, kTissueColor), 256, 20.0, 0.5);
    const PatchGrid grid = extract_patch_grid(slide, compute_tissue_mask(slide, 0), "t");
    REQUIRE(grid.size() == 4);
    const std::vector<std::pair<int, int>> expected{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(grid.records[i].grid_x == expected[i].first);
      CHECK(grid.records[i].grid_y == expected[i].second);
      CHECK(grid.records[i].px_rect == Rect{expected[i].first * 224, expected[i].second * 224, 224, 224});
      CHECK(grid.records[i].tissue_fraction == doctest::Approx(1.0));
    }
  }

  TEST_CASE("five percent threshold is applied to the projected fraction") {
    // Two 100 px patches side by side; tissue strips of 4.9% and 5.1% of a patch.
    const InMemorySlide slide(RasterImage(200, 100, kWhite), 256, 20.0, 0.5);
    TissueMask mask;
    mask.width = 200;
    mask.height = 100;
    mask.mask_downsample = 1;
    mask.bits.assign(200 * 100, 0);
    for (int y = 0; y < 49; ++y) {
      for (int x = 0; x < 10; ++x) mask.bits[static_cast<std::size_t>(y * 200 + x)] = 1;
    }
    for (int y = 0; y < 51; ++y) {
      for (int x = 100; x < 110; ++x) mask.bits[static_cast<std::size_t>(y * 200 + x)] = 1;
    }
    CHECK(patch_tissue_fraction(mask, 1.0, 0, 0, 100) == doctest::Approx(0.049));
    CHECK(patch_tissue_fraction(mask, 1.0, 100, 0, 100) == doctest::Approx(0.051));
    ExtractionParams params;
    params.patch_size_px = 100;
    const PatchGrid grid = extract_patch_grid(slide, mask, "s", params);
    REQUIRE(grid.size() == 1);
    CHECK(grid.records[0].grid_x == 1);
  }

  TEST_CASE("projected fraction with a coarser mask is area weighted") {
    TissueMask mask;
    mask.width = 2;
    mask.height = 2;
    mask.mask_downsample = 4;
    mask.bits = {1, 0, 0, 0};
    // Extraction level at downsample 2: the patch of 4 px covers 8 level-0 px.
    CHECK(patch_tissue_fraction(mask, 2.0, 0, 0, 4) == doctest::Approx(0.25));
    CHECK(patch_tissue_fraction(mask, 2.0, 0, 0, 2) == doctest::Approx(1.0));
    CHECK(patch_tissue_fraction(mask, 2.0, 1, 1, 2) == doctest::Approx(0.25));
    CHECK(patch_tissue_fraction(mask, 2.0, 1, 0, 2) == doctest::Approx(0.5));
  }

  TEST_CASE("retained patches satisfy the threshold, never overlap and shrink monotonically") {
    SynthConfig cfg;
    cfg.slide_px = 1024;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const RenderedSlide r = render_slide(random_layout(cfg, static_cast<int>(seed % 4), seed),
                                           cfg.cell_palette, seed, 2);
      const InMemorySlide slide(r.image);
      const TissueMask mask = compute_tissue_mask(slide);
      ExtractionParams params;
      params.patch_size_px = 100;
      const PatchGrid grid = extract_patch_grid(slide, mask, "s", params);
      std::set<std::pair<int, int>> seen;
      for (const auto& rec : grid.records) {
        CHECK(rec.tissue_fraction >= 0.05);
        CHECK(seen.insert({rec.grid_x, rec.grid_y}).second);
        CHECK(rec.px_rect.x == rec.grid_x * 100);
        CHECK(rec.px_rect.y == rec.grid_y * 100);
      }
      for (std::size_t i = 1; i < grid.size(); ++i) {
        const auto& a = grid.records[i - 1];
        const auto& b = grid.records[i];
        CHECK(std::make_pair(a.grid_y, a.grid_x) < std::make_pair(b.grid_y, b.grid_x));
      }
      params.min_tissue = 0.01;
      const PatchGrid looser = extract_patch_grid(slide, mask, "s", params);
      std::set<std::pair<int, int>> loose_set;
      for (const auto& rec : looser.records) loose_set.insert({rec.grid_x, rec.grid_y});
      for (const auto& p : seen) CHECK(loose_set.count(p) == 1);
    }
  }

  TEST_CASE("read_patch returns full-size, white-padded, repeatable patches") {
    RasterImage img(300, 300, kTissueColor);
    const InMemorySlide slide(img, 128, 20.0, 0.5);
    const PatchGrid grid = extract_patch_grid(slide, compute_tissue_mask(slide, 0), "s");
    REQUIRE(grid.size() == 4);
    const RasterImage interior = read_patch(slide, grid, grid.records[0]);
    CHECK(interior.width() == 224);
    CHECK(interior.height() == 224);
    const RasterImage edge = read_patch(slide, grid, grid.records[3]);
    CHECK(edge.width() == 224);
    CHECK(edge.at(75, 75) == kTissueColor);
    CHECK(edge.at(76, 0) == kWhite);
    CHECK(edge.at(0, 76) == kWhite);
    CHECK(edge.at(223, 223) == kWhite);
    CHECK(read_patch(slide, grid, grid.records[3]) == edge);
    PatchRecord stale = grid.records[3];
    stale.px_rect.x += 500;
    CHECK(thrown_code([&] { read_patch(slide, grid, stale); }) == ErrorCode::kBounds);
  }

  TEST_CASE("virtual level patches are resampled") {
    RasterImage img(800, 800, kTissueColor);
    const InMemorySlide slide(img, 256);
    ExtractionParams params;
    params.target_magnification = 15.0;
    params.patch_size_px = 100;
    const PatchGrid grid = extract_patch_grid(slide, compute_tissue_mask(slide), "v", params);
    CHECK(grid.size() == 9);
    const RasterImage p = read_patch(slide, grid, grid.records[0]);
    CHECK(p.at(50, 50) == kTissueColor);
  }

  TEST_CASE("patch grid JSONL round-trip") {
    TempDir dir("grid");
    const InMemorySlide slide(RasterImage(448, 300, kTissueColor), 256, 20.0, 0.5);
    const PatchGrid grid = extract_patch_grid(slide, compute_tissue_mask(slide, 0), "S9");
    save_patch_grid(grid, dir / "g.jsonl");
    CHECK(load_patch_grid(dir / "g.jsonl") == grid);
  }
}
