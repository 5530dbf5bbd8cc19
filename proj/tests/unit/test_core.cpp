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
#include <atomic>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "doctest.h"
#include "histograde/io.hpp"
#include "histograde/parallel.hpp"
#include "histograde/raster.hpp"
#include "histograde/rng.hpp"
#include "test_util.hpp"

using namespace histograde;
using histograde::testing::TempDir;
using histograde::testing::thrown_code;

TEST_SUITE("core") {
  TEST_CASE("crc32 matches the standard check value") {
    const std::string s = "123456789";
    const std::vector<std::uint8_t> bytes(s.begin(), s.end());
    CHECK(crc32(bytes) == 0xCBF43926u);
  }

  TEST_CASE("byte writer and reader round-trip and seal") {
    ByteWriter w;
    w.raw("ABCD");
    w.u32(7);
    w.u64(1ULL << 40);
    w.f32(1.5f);
    w.f64(-2.25);
    w.str("slide");
    w.seal();
    const auto payload = verify_sealed(w.bytes());
    ByteReader r(payload, ErrorCode::kFormat);
    CHECK(r.raw(4) == "ABCD");
    CHECK(r.u32() == 7);
    CHECK(r.u64() == (1ULL << 40));
    CHECK(r.f32() == 1.5f);
    CHECK(r.f64() == -2.25);
    CHECK(r.str() == "slide");
    CHECK(r.remaining() == 0);
    CHECK(thrown_code([&] { r.u32(); }) == ErrorCode::kFormat);

    auto corrupt = w.bytes();
    corrupt[5] ^= 0x01;
    CHECK(thrown_code([&] { verify_sealed(corrupt); }) == ErrorCode::kChecksum);
    const std::vector<std::uint8_t> tiny{1, 2};
    CHECK(thrown_code([&] { verify_sealed(tiny); }) == ErrorCode::kChecksum);
  }

  TEST_CASE("jsonl reader reports the failing line") {
    TempDir dir("jsonl");
    write_text_file(dir / "a.jsonl", "{\"x\":1}\n\n{\"x\":2}\n{bad\n");
    int seen = 0;
    try {
      for_each_jsonl(dir / "a.jsonl", [&](const Json&, int) { ++seen; });
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kParse);
      CHECK(std::string(e.what()).find(":4") != std::string::npos);
    }
    CHECK(seen == 2);
    try {
      json_field(Json{{"a", 1}}, "slide_id", 3);
      FAIL("expected missing field");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kParse);
      CHECK(std::string(e.what()).find("slide_id") != std::string::npos);
    }
  }

  TEST_CASE("rng is reproducible and seed mixing separates streams") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
      const auto x = a.next();
      CHECK(x == b.next());
      (void)c.next();
    }
    CHECK(mix_seed(1, "synth") != mix_seed(1, "train"));
    CHECK(mix_seed(1, "synth") == mix_seed(1, "synth"));
    CHECK(mix_seed(1, 0) != mix_seed(2, 0));
  }

  TEST_CASE("rng distributions have the expected moments") {
    Rng rng(7);
    const int n = 20000;
    double su = 0, sn = 0, sn2 = 0, sp = 0;
    for (int i = 0; i < n; ++i) {
      const double u = rng.uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
      su += u;
      const double z = rng.normal();
      sn += z;
      sn2 += z * z;
      sp += static_cast<double>(rng.poisson(4.0));
    }
    CHECK(su / n == doctest::Approx(0.5).epsilon(0.02));
    CHECK(std::abs(sn / n) < 0.03);
    CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.03));
    CHECK(sp / n == doctest::Approx(4.0).epsilon(0.03));
    std::vector<int> v(10);
    std::iota(v.begin(), v.end(), 0);
    rng.shuffle(v.begin(), v.end());
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 10; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  }

  TEST_CASE("parallel_for visits every index once and rethrows") {
    std::vector<std::atomic<int>> hits(257);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
    CHECK(thrown_code([&] {
            parallel_for(10, 3, [](std::size_t i) {
              if (i == 5) fail(ErrorCode::kValidation, "boom");
            });
          }) == ErrorCode::kValidation);
  }

  TEST_CASE("raster crop, paste and bounds") {
    RasterImage img(5, 4, {1, 2, 3});
    img.set(4, 3, {9, 9, 9});
    const RasterImage c = img.crop({3, 2, 2, 2});
    CHECK(c.width() == 2);
    CHECK(c.at(1, 1) == Rgb{9, 9, 9});
    CHECK(thrown_code([&] { img.crop({4, 3, 2, 2}); }) == ErrorCode::kBounds);
    RasterImage dst(3, 3, kWhite);
    dst.paste(c, 2, 2);
    CHECK(dst.at(2, 2) == Rgb{1, 2, 3});
    CHECK(dst.at(1, 1) == kWhite);
    CHECK(intersect({0, 0, 10, 10}, {5, 5, 10, 10}) == Rect{5, 5, 5, 5});
    CHECK(intersect({0, 0, 2, 2}, {5, 5, 1, 1}).empty());
  }

  TEST_CASE("downsample_half averages 2x2 blocks") {
    RasterImage img(4, 2, kWhite);
    img.set(0, 0, {0, 0, 0});
    img.set(1, 0, {100, 100, 100});
    img.set(0, 1, {200, 200, 200});
    img.set(1, 1, {100, 100, 100});
    const RasterImage half = downsample_half(img);
    CHECK(half.width() == 2);
    CHECK(half.height() == 1);
    CHECK(half.at(0, 0) == Rgb{100, 100, 100});
    CHECK(half.at(1, 0) == kWhite);
  }

  TEST_CASE("png round-trip is lossless and deterministic") {
    TempDir dir("png");
    RasterImage img(17, 9);
    for (int y = 0; y < 9; ++y) {
      for (int x = 0; x < 17; ++x) {
        img.set(x, y, {static_cast<std::uint8_t>(x * 13), static_cast<std::uint8_t>(y * 29),
                       static_cast<std::uint8_t>(x ^ y)});
      }
    }
    write_png(img, dir / "a.png");
    write_png(img, dir / "b.png");
    CHECK(read_png(dir / "a.png") == img);
    CHECK(read_file_bytes(dir / "a.png") == read_file_bytes(dir / "b.png"));
    CHECK(thrown_code([&] { read_png(dir / "missing.png"); }) == ErrorCode::kCorruption);
    write_text_file(dir / "bad.png", "not a png");
    CHECK(thrown_code([&] { read_png(dir / "bad.png"); }) == ErrorCode::kCorruption);
  }

  TEST_CASE("luminance and saturation") {
    CHECK(luminance(kWhite) == doctest::Approx(1.0));
    CHECK(luminance({0, 0, 0}) == 0.0);
    CHECK(saturation({200, 200, 200}) == 0.0);
    CHECK(saturation({255, 0, 0}) == doctest::Approx(1.0));
  }
}
