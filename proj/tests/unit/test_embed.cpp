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
#include <cmath>

#include "doctest.h"
#include "histograde/embed.hpp"
#include "histograde/io.hpp"
#include "histograde/preprocess.hpp"
#include "histograde/rng.hpp"
#include "test_util.hpp"

using namespace histograde;
using histograde::testing::TempDir;
using histograde::testing::thrown_code;

namespace {

RasterImage random_patch(std::uint64_t seed, int size = 224) {
  Rng rng(seed);
  RasterImage img(size, size);
  for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

EmbeddingMatrix random_matrix(int dim, std::size_t rows, const std::string& id) {
  Rng rng(5);
  EmbeddingMatrix m{id, dim, rows, {}, "external-tool"};
  m.values.resize(rows * static_cast<std::size_t>(dim));
  for (auto& v : m.values) v = static_cast<float>(rng.normal());
  return m;
}

}  // namespace

TEST_SUITE("embed") {
  TEST_CASE("black patch puts all histogram mass in bin 0") {
    const auto f = embed_patch_reference(RasterImage(224, 224, {0, 0, 0}));
    for (int c = 0; c < 3; ++c) {
      CHECK(f[static_cast<std::size_t>(c * 8)] == doctest::Approx(1.0));
      for (int b = 1; b < 8; ++b) CHECK(f[static_cast<std::size_t>(c * 8 + b)] == 0.0);
      CHECK(f[static_cast<std::size_t>(24 + c)] == 0.0);
    }
  }

  TEST_CASE("mirroring keeps histogram and moment features") {
    const RasterImage p = random_patch(11);
    RasterImage mirrored(224, 224);
    for (int y = 0; y < 224; ++y) {
      for (int x = 0; x < 224; ++x) mirrored.set(223 - x, y, p.at(x, y));
    }
    const auto a = embed_patch_reference(p);
    const auto b = embed_patch_reference(mirrored);
    for (std::size_t i = 0; i < 24; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    for (std::size_t i = 24; i < 30; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
  }

  TEST_CASE("features are deterministic, bounded and size-checked") {
    const RasterImage p = random_patch(3);
    const auto a = embed_patch_reference(p);
    CHECK(a == embed_patch_reference(p));
    for (double v : a) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(thrown_code([] { embed_patch_reference(RasterImage(100, 224)); }) == ErrorCode::kShape);
    for (std::uint64_t s = 20; s < 30; ++s) {
      for (double v : embed_patch_reference(random_patch(s, 64), 64)) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }

  TEST_CASE("embed_slide rows follow records; parallel equals serial; empty grid") {
    SynthConfig cfg;
    cfg.slide_px = 1024;
    const RenderedSlide r = render_slide(random_layout(cfg, 2, 8), cfg.cell_palette, 1, 0);
    const InMemorySlide slide(r.image);
    const PatchGrid grid = extract_patch_grid(slide, compute_tissue_mask(slide), "S");
    REQUIRE(grid.size() >= 4);
    const EmbeddingMatrix serial = embed_slide(slide, grid, 1);
    const EmbeddingMatrix parallel = embed_slide(slide, grid, 4);
    CHECK(serial == parallel);
    CHECK(serial.n_rows == grid.size());
    CHECK(serial.dim == kReferenceDim);
    CHECK(serial.embedder_id == kReferenceEmbedderId);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto f = embed_patch_reference(read_patch(slide, grid, grid.records[i]));
      for (std::size_t k = 0; k < f.size(); ++k) CHECK(serial.row(i)[k] == static_cast<float>(f[k]));
    }
    PatchGrid reversed = grid;
    std::reverse(reversed.records.begin(), reversed.records.end());
    const EmbeddingMatrix rev = embed_slide(slide, reversed, 1);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto a = serial.row(i);
      const auto b = rev.row(grid.size() - 1 - i);
      CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
    PatchGrid empty = grid;
    empty.records.clear();
    const EmbeddingMatrix none = embed_slide(slide, empty);
    CHECK(none.n_rows == 0);
    CHECK(none.dim == kReferenceDim);
  }

  TEST_CASE("embedding store round-trip, any dimension") {
    TempDir dir("emb");
    const EmbeddingMatrix m = random_matrix(512, 7, "S3");
    write_embeddings(m, dir / "m.hge");
    CHECK(import_embeddings(dir / "m.hge") == m);
    CHECK(import_embeddings(dir / "m.hge", nullptr, 512) == m);
    CHECK(thrown_code([&] { import_embeddings(dir / "m.hge", nullptr, 64); }) == ErrorCode::kFormat);
  }

  TEST_CASE("embedding store rejects corruption") {
    TempDir dir("emb_bad");
    const EmbeddingMatrix m = random_matrix(8, 3, "S1");
    write_embeddings(m, dir / "m.hge");
    auto bytes = read_file_bytes(dir / "m.hge");

    auto truncated = bytes;
    truncated.resize(truncated.size() - 9);
    write_file_bytes(dir / "t.hge", truncated);
    CHECK(thrown_code([&] { import_embeddings(dir / "t.hge"); }) == ErrorCode::kChecksum);

    auto flipped = bytes;
    flipped[40] ^= 0x10;
    write_file_bytes(dir / "f.hge", flipped);
    CHECK(thrown_code([&] { import_embeddings(dir / "f.hge"); }) == ErrorCode::kChecksum);

    auto magic = bytes;
    magic[0] = 'X';
    write_file_bytes(dir / "x.hge", magic);
    CHECK(thrown_code([&] { import_embeddings(dir / "x.hge"); }) == ErrorCode::kFormat);

    PatchGrid grid;
    grid.slide_id = "S1";
    grid.records.resize(4);
    CHECK(thrown_code([&] { import_embeddings(dir / "m.hge", &grid); }) == ErrorCode::kFormat);
    grid.records.resize(3);
    CHECK_NOTHROW(import_embeddings(dir / "m.hge", &grid));
    grid.slide_id = "S2";
    CHECK(thrown_code([&] { import_embeddings(dir / "m.hge", &grid); }) == ErrorCode::kFormat);
  }
}
