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

/// @file cytostats.hpp
/// @brief Palette-based cell counting and rank statistics across grades.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "histograde/io.hpp"
#include "histograde/slide.hpp"

namespace histograde {

using CellCounts = std::array<std::int64_t, kNumCellTypes>;

struct DetectParams {
  int tolerance = 12;  // per channel
  int min_area = 20;   // pixels
};

/// Connected components (8-neighbour) of palette-coloured pixels at level 0;
/// one count per component of at least min_area pixels.
CellCounts detect_cells(const SlideImage& slide, const CellPalette& palette,
                        const DetectParams& params = {});

/// Palette from a JSON object keyed by cell type name with [r, g, b] values.
/// Unknown keys raise kConfig; missing keys keep the default colour.
CellPalette parse_palette(const Json& obj);

struct CellCountRow {
  std::string slide_id;
  int class_label = 0;
  CellCounts counts{};

  friend bool operator==(const CellCountRow&, const CellCountRow&) = default;
};

struct CellCountTable {
  std::vector<CellCountRow> rows;

  /// Values of one cell type for slides of one class, in table order.
  std::vector<double> values(CellType type, int class_label) const;
};

/// JSONL: {slide_id, class_label, epithelial, lymphocyte, macrophage, neutrophil};
/// class_label is the class name.
void save_cell_counts(const CellCountTable& table, const std::filesystem::path& path);
CellCountTable load_cell_counts(const std::filesystem::path& path);

enum class MannWhitneyMethod { kExact, kNormal };

struct MannWhitneyResult {
  double u = 0.0;
  double z = 0.0;
  double p_one_sided = 1.0;
  double r_rank_biserial = 0.0;
  double ps = 0.0;
  std::int64_t n1 = 0;
  std::int64_t n2 = 0;
  MannWhitneyMethod method = MannWhitneyMethod::kNormal;
};

/// U = #{x_i > y_j} + 0.5 #{x_i = y_j}.
double mann_whitney_u(std::span<const double> x, std::span<const double> y);

/// P(U >= u) under the null for tie-free samples, by counting arrangements.
/// `u` must be an integer in [0, n1 n2].
double mann_whitney_exact_upper(std::int64_t u, std::int64_t n1, std::int64_t n2);

/// Alternative: x tends to exceed y. Exact when n1 n2 <= 10000 and there are
/// no ties; otherwise the normal approximation with tie-corrected variance and
/// no continuity correction.
MannWhitneyResult mann_whitney_one_sided(std::span<const double> x, std::span<const double> y);

double probability_of_superiority(double u, std::int64_t n1, std::int64_t n2);
double rank_biserial(double u, std::int64_t n1, std::int64_t n2);

Json mann_whitney_to_json(const MannWhitneyResult& r);

struct ClassDistribution {
  int class_label = 0;
  std::vector<double> sorted;
  std::array<double, 5> quantiles{};  // 5th, 25th, 50th, 75th, 95th
  std::vector<double> histogram;      // counts per bin
};

struct DistributionExport {
  CellType cell_type = CellType::kNeutrophil;
  double range_lo = 0.0;
  double range_hi = 0.0;
  int bins = 32;
  std::vector<ClassDistribution> classes;  // classes with at least one slide
};

DistributionExport class_distribution_export(const CellCountTable& table, CellType cell_type,
                                             int bins = 32);
DistributionExport class_distribution_export(const CellCountTable& table,
                                             std::string_view cell_type, int bins = 32);
Json distribution_to_json(const DistributionExport& d);
/// Mirrored histograms smoothed with [1, 2, 1] / 4, one violin per class.
std::string distribution_to_svg(const DistributionExport& d);

struct ClassPair {
  int higher = 0;
  int lower = 0;
};

/// "mild:inactive,moderate:mild" -> pairs; unknown names raise kConfig.
std::vector<ClassPair> parse_class_pairs(std::string_view text);
std::vector<ClassPair> adjacent_class_pairs();
/// "<higher>_vs_<lower>".
std::string pair_key(const ClassPair& pair);

/// One result per pair for `cell_type`, keyed by pair_key.
Json stats_report(const CellCountTable& table, CellType cell_type, std::span<const ClassPair> pairs);

}  // namespace histograde
