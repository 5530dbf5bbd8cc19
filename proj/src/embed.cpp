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

#include "histograde/embed.hpp"

#include <algorithm>
#include <cmath>

#include "histograde/error.hpp"
#include "histograde/io.hpp"
#include "histograde/parallel.hpp"

namespace histograde {

std::array<double, kReferenceDim> embed_patch_reference(const RasterImage& patch,
                                                        int patch_size_px) {
  if (patch.width() != patch_size_px || patch.height() != patch_size_px) {
    fail(ErrorCode::kShape, "patch must be " + std::to_string(patch_size_px) + "x" +
                                std::to_string(patch_size_px) + ", got " +
                                std::to_string(patch.width()) + "x" +
                                std::to_string(patch.height()));
  }
  const int w = patch.width(), h = patch.height();
  const double n = static_cast<double>(w) * h;
  std::array<double, kReferenceDim> f{};

  std::array<std::array<std::int64_t, 8>, 3> hist{};
  std::array<double, 3> sum{}, sum_sq{};
  std::vector<double> lum(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  std::int64_t tissue = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Rgb c = patch.at(x, y);
      const std::array<int, 3> ch{c.r, c.g, c.b};
      for (std::size_t k = 0; k < 3; ++k) {
        ++hist[k][static_cast<std::size_t>(ch[k] >> 5)];
        sum[k] += ch[k];
        sum_sq[k] += static_cast<double>(ch[k]) * ch[k];
      }
      lum[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] =
          luminance(c);
      tissue += is_tissue_pixel(c) ? 1 : 0;
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t b = 0; b < 8; ++b) f[k * 8 + b] = std::sqrt(hist[k][b] / n);
    const double mean = sum[k] / n;
    const double var = std::max(0.0, sum_sq[k] / n - mean * mean);
    f[24 + k] = mean / 255.0;
    f[27 + k] = std::min(1.0, std::sqrt(var) / 127.5);
  }

  auto L = [&](int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return lum[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)];
  };
  std::array<std::int64_t, 8> grad{};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = 0.5 * (L(x + 1, y) - L(x - 1, y));
      const double gy = 0.5 * (L(x, y + 1) - L(x, y - 1));
      const auto bin = std::min<std::size_t>(7, static_cast<std::size_t>(std::hypot(gx, gy) * 32.0));
      ++grad[bin];
    }
  }
  for (std::size_t b = 0; b < 8; ++b) f[30 + b] = std::sqrt(grad[b] / n);

  for (int by = 0; by < 5; ++by) {
    const int y0 = by * h / 5, y1 = (by + 1) * h / 5;
    for (int bx = 0; bx < 5; ++bx) {
      const int x0 = bx * w / 5, x1 = (bx + 1) * w / 5;
      double s = 0.0;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) s += L(x, y);
      }
      f[38 + static_cast<std::size_t>(by * 5 + bx)] =
          s / (static_cast<double>(x1 - x0) * (y1 - y0));
    }
  }
  f[63] = tissue / n;
  for (double& v : f) v = std::clamp(v, 0.0, 1.0);
  return f;
}

EmbeddingMatrix embed_slide(const SlideImage& slide, const PatchGrid& grid, int threads) {
  EmbeddingMatrix m;
  m.slide_id = grid.slide_id;
  m.dim = kReferenceDim;
  m.n_rows = grid.records.size();
  m.embedder_id = kReferenceEmbedderId;
  m.values.resize(m.n_rows * kReferenceDim);
  parallel_for(m.n_rows, threads, [&](std::size_t i) {
    const auto f =
        embed_patch_reference(read_patch(slide, grid, grid.records[i]), grid.patch_size_px);
    std::transform(f.begin(), f.end(), m.values.begin() + static_cast<std::ptrdiff_t>(i * kReferenceDim),
                   [](double v) { return static_cast<float>(v); });
  });
  return m;
}

void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  require(m.dim > 0, ErrorCode::kShape, "embedding dim must be positive");
  require(m.values.size() == m.n_rows * static_cast<std::size_t>(m.dim), ErrorCode::kShape,
          "embedding values do not match n_rows x dim");
  ByteWriter w;
  w.raw("HGE1");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(m.dim));
  w.u64(m.n_rows);
  w.str(m.slide_id);
  w.str(m.embedder_id);
  for (float v : m.values) {
    require(std::isfinite(v), ErrorCode::kShape, "embedding values must be finite");
    w.f32(v);
  }
  w.seal();
  write_file_bytes(path, w.bytes());
}

EmbeddingMatrix import_embeddings(const std::filesystem::path& path, const PatchGrid* paired,
                                  std::optional<int> expected_dim) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 4 || std::string(bytes.begin(), bytes.begin() + 4) != "HGE1") {
    fail(ErrorCode::kFormat, "not an embedding store (bad magic): " + path.string());
  }
  ByteReader r(verify_sealed(bytes), ErrorCode::kFormat);
  r.raw(4);
  if (r.u32() != 1) fail(ErrorCode::kFormat, "unsupported embedding schema: " + path.string());
  EmbeddingMatrix m;
  m.dim = static_cast<int>(r.u32());
  m.n_rows = r.u64();
  m.slide_id = r.str();
  m.embedder_id = r.str();
  if (m.dim <= 0) fail(ErrorCode::kFormat, "embedding dim must be positive");
  const std::size_t count = m.n_rows * static_cast<std::size_t>(m.dim);
  if (r.remaining() != count * sizeof(float)) {
    fail(ErrorCode::kFormat, "embedding payload size does not match header");
  }
  m.values.resize(count);
  for (auto& v : m.values) {
    v = r.f32();
    if (!std::isfinite(v)) fail(ErrorCode::kFormat, "non-finite embedding value");
  }
  if (expected_dim && *expected_dim != m.dim) {
    fail(ErrorCode::kFormat, "embedding dim " + std::to_string(m.dim) + " != expected " +
                                 std::to_string(*expected_dim));
  }
  if (paired) {
    if (paired->slide_id != m.slide_id || paired->records.size() != m.n_rows) {
      fail(ErrorCode::kFormat, "embeddings for '" + m.slide_id + "' (" +
                                   std::to_string(m.n_rows) + " rows) do not match patch grid '" +
                                   paired->slide_id + "' (" +
                                   std::to_string(paired->records.size()) + " records)");
    }
  }
  return m;
}

}  // namespace histograde
