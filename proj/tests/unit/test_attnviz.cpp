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

#include <algorithm>
#include <vector>

#include "doctest.h"
#include "histograde/attnviz.hpp"
#include "histograde/io.hpp"
#include "histograde/rng.hpp"
#include "histograde/trainer.hpp"
#include "test_util.hpp"

using namespace histograde;
using histograde::testing::TempDir;
using histograde::testing::thrown_code;

namespace {

constexpr int kPatch = 32;
constexpr int kSide = 4;

struct Fixture {
  RasterImage image;
  std::unique_ptr<InMemorySlide> slide;
  PatchGrid grid;
  Region region;

  Fixture() {
    Rng rng(4);
    image = RasterImage(kPatch * 6, kPatch * 6, kTissueColor);
    for (auto& b : image.bytes()) {
      b = static_cast<std::uint8_t>(std::clamp<int>(b - 10 + static_cast<int>(rng.below(21)), 0, 255));
    }
    // Two glass cells so the region has holes.
    for (int y = 0; y < kPatch; ++y) {
      for (int x = kPatch; x < 2 * kPatch; ++x) image.set(x, y, kGlassColor);
      for (int x = 0; x < kPatch; ++x) image.set(x, y + 2 * kPatch, kGlassColor);
    }
    slide = std::make_unique<InMemorySlide>(image, 64, 20.0, 0.5);
    ExtractionParams params;
    params.patch_size_px = kPatch;
    grid = extract_patch_grid(*slide, compute_tissue_mask(*slide, 0), "R1", params);
    region = sample_regions(grid, 1, kSide, 0, SampleMode::kVal).at(0);
  }

  AttentionMap map(std::vector<double> w) const { return AttentionMap{region, std::move(w)}; }
};

}  // namespace

TEST_SUITE("attnviz") {
  TEST_CASE("ramp endpoints and scaling") {
    CHECK(diverging_ramp(0.0) == Rgb{0, 0, 255});
    CHECK(diverging_ramp(0.5) == Rgb{255, 255, 255});
    CHECK(diverging_ramp(1.0) == Rgb{255, 0, 0});
    const std::vector<double> flat{0.2, 0.2, 0.2};
    for (double v : minmax_scale(flat)) CHECK(v == 0.5);
    Rng rng(1);
    std::vector<double> w(20);
    for (auto& v : w) v = rng.uniform();
    const auto s = minmax_scale(w);
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (std::size_t j = 0; j < w.size(); ++j) {
        if (w[i] > w[j]) CHECK(s[i] > s[j]);
      }
    }
    OverlayConfig bad;
    bad.alpha = 0.0;
    CHECK(thrown_code([&] { bad.validate(); }) == ErrorCode::kConfig);
    bad.alpha = 1.2;
    CHECK(thrown_code([&] { bad.validate(); }) == ErrorCode::kConfig);
  }

  TEST_CASE("region image and holes") {
    const Fixture f;
    REQUIRE(f.region.members.size() == 14);
    const RasterImage raw = read_region_image(*f.slide, f.grid, f.region, kSide);
    CHECK(raw.width() == kSide * kPatch);
    CHECK(raw == f.image.crop({0, 0, kSide * kPatch, kSide * kPatch}));
  }

  TEST_CASE("alpha one, nearest upsampling matches a per-pixel oracle") {
    const Fixture f;
    Rng rng(9);
    std::vector<double> w(f.region.members.size());
    for (auto& v : w) v = rng.uniform();
    OverlayConfig cfg{1.0, Upsampling::kNearest};
    const RasterImage got = render_attention_overlay(*f.slide, f.grid, f.region, f.map(w), kSide, cfg);

    const double lo = *std::min_element(w.begin(), w.end());
    const double hi = *std::max_element(w.begin(), w.end());
    RasterImage expect = f.image.crop({0, 0, kSide * kPatch, kSide * kPatch});
    for (int py = 0; py < expect.height(); ++py) {
      for (int px = 0; px < expect.width(); ++px) {
        for (std::size_t i = 0; i < w.size(); ++i) {
          if (f.region.relative[i].x == px / kPatch && f.region.relative[i].y == py / kPatch) {
            expect.set(px, py, diverging_ramp((w[i] - lo) / (hi - lo)));
          }
        }
      }
    }
    CHECK(got == expect);
  }

  TEST_CASE("uniform and one-hot maps") {
    const Fixture f;
    const std::size_t k = f.region.members.size();
    for (auto mode : {Upsampling::kNearest, Upsampling::kBilinear}) {
      OverlayConfig cfg{1.0, mode};
      const RasterImage u =
          render_attention_overlay(*f.slide, f.grid, f.region, f.map(std::vector<double>(k, 1.0 / k)), kSide, cfg);
      for (const auto& rc : f.region.relative) {
        for (int dy = 0; dy < kPatch; dy += 7) {
          for (int dx = 0; dx < kPatch; dx += 7) CHECK(u.at(rc.x * kPatch + dx, rc.y * kPatch + dy) == Rgb{255, 255, 255});
        }
      }
      // Holes stay unshaded.
      CHECK(u.at(kPatch + 3, 3) == kGlassColor);
    }
    std::vector<double> hot(k, 0.0);
    hot[3] = 1.0;
    const RasterImage h =
        render_attention_overlay(*f.slide, f.grid, f.region, f.map(hot), kSide, {1.0, Upsampling::kNearest});
    for (std::size_t i = 0; i < k; ++i) {
      const auto rc = f.region.relative[i];
      CHECK(h.at(rc.x * kPatch + 5, rc.y * kPatch + 5) == (i == 3 ? Rgb{255, 0, 0} : Rgb{0, 0, 255}));
    }

    const Region other = sample_regions(f.grid, 2, kSide, 0, SampleMode::kVal).at(1);
    CHECK(thrown_code([&] {
            render_attention_overlay(*f.slide, f.grid, other, f.map(hot), kSide, {});
          }) == ErrorCode::kContract);
  }

  TEST_CASE("default blend is alpha weighted") {
    const Fixture f;
    std::vector<double> hot(f.region.members.size(), 0.0);
    hot[0] = 1.0;
    const RasterImage o =
        render_attention_overlay(*f.slide, f.grid, f.region, f.map(hot), kSide, {0.45, Upsampling::kNearest});
    const auto rc = f.region.relative[0];
    const Rgb base = f.image.at(rc.x * kPatch + 2, rc.y * kPatch + 2);
    const Rgb got = o.at(rc.x * kPatch + 2, rc.y * kPatch + 2);
    CHECK(got.r == static_cast<int>(std::lround(0.55 * base.r + 0.45 * 255)));
    CHECK(got.g == static_cast<int>(std::lround(0.55 * base.g)));
  }

  TEST_CASE("panels") {
    const Fixture f;
    TempDir dir("panel");
    const std::size_t k = f.region.members.size();
    const AttentionMap m = f.map(std::vector<double>(k, 1.0 / k));
    const auto two = export_panel(*f.slide, f.grid, f.region, m, kSide, {}, nullptr, dir / "a");
    CHECK(two.size() == 2);
    CHECK(two[0].filename() == "R1_0_0_raw.png");
    CHECK(two[1].filename() == "R1_0_0_attention.png");

    const std::vector<CellAnnotation> cells{{CellType::kEpithelial, 20, 20, 6, 6},
                                            {CellType::kLymphocyte, 52, 20, 6, 6},
                                            {CellType::kMacrophage, 20, 52, 6, 6},
                                            {CellType::kNeutrophil, 84, 84, 6, 6}};
    const auto three = export_panel(*f.slide, f.grid, f.region, m, kSide, {}, &cells, dir / "b");
    REQUIRE(three.size() == 3);
    const RasterImage ann = read_png(three[2]);
    CHECK(ann.at(20, 20) == Rgb{255, 0, 0});
    CHECK(ann.at(52, 20) == Rgb{0, 200, 0});
    CHECK(ann.at(20, 52) == Rgb{0, 0, 255});
    CHECK(ann.at(84, 84) == Rgb{255, 220, 0});

    const auto again = export_panel(*f.slide, f.grid, f.region, m, kSide, {}, &cells, dir / "c");
    for (std::size_t i = 0; i < 3; ++i) CHECK(read_file_bytes(three[i]) == read_file_bytes(again[i]));
  }
}
