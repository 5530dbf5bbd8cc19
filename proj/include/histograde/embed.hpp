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

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "histograde/preprocess.hpp"
#include "histograde/raster.hpp"
#include "histograde/slide.hpp"

namespace histograde {

inline constexpr int kReferenceDim = 64;
inline constexpr const char* kReferenceEmbedderId = "reference-v1";

/// Per-slide patch features, row i aligned with PatchGrid::records[i].
struct EmbeddingMatrix {
  std::string slide_id;
  int dim = 0;
  std::size_t n_rows = 0;
  std::vector<float> values;  // n_rows * dim, row-major
  std::string embedder_id;

  std::span<const float> row(std::size_t i) const {
    return {values.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;
};

/// Hand-built 64-d descriptor of a square RGB patch, every entry in [0, 1]:
///   [0, 24)  8-bin histogram per channel (sqrt of bin fraction)
///   [24, 30) per-channel mean / 255 and std / 127.5
///   [30, 38) 8-bin histogram of central-difference luminance gradient
///            magnitude, bin width 1/32, last bin open (sqrt of fraction)
///   [38, 63) 5x5 block mean luminance
///   63       fraction of pixels passing the tissue test
/// The square-root transform spreads the small fractions contributed by
/// sparse cell colours.
std::array<double, kReferenceDim> embed_patch_reference(const RasterImage& patch,
                                                        int patch_size_px = 224);

EmbeddingMatrix embed_slide(const SlideImage& slide, const PatchGrid& grid, int threads = 1);

/// Binary store, little-endian: "HGE1", u32 schema (1), u32 dim, u64 n_rows,
/// u32-length-prefixed slide_id and embedder_id, n_rows*dim float32, then the
/// CRC32 of all preceding bytes.
void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path);

/// Rejects bad magic, schema, checksum or truncation (kFormat / kChecksum).
/// When `paired` is given, slide_id and row count must match it; when
/// `expected_dim` is given the dimension must match.
EmbeddingMatrix import_embeddings(const std::filesystem::path& path,
                                  const PatchGrid* paired = nullptr,
                                  std::optional<int> expected_dim = std::nullopt);

}  // namespace histograde
