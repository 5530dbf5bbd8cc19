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

#include "histograde/cytostats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "histograde/error.hpp"
#include "histograde/metrics.hpp"

namespace histograde {

CellCounts detect_cells(const SlideImage& slide, const CellPalette& palette, const DetectParams& params) {
  require(params.tolerance >= 0 && params.min_area > 0, ErrorCode::kParameter,
          "detection tolerance must be nonnegative and min_area positive");
  const SlideInfo& info = slide.info();
  const RasterImage img = slide.read_region(0, {0, 0, info.width, info.height});
  const int w = img.width(), h = img.height();
  constexpr std::uint8_t kNone = 0xff;
  std::vector<std::uint8_t> label(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), kNone);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Rgb c = img.at(x, y);
      for (std::size_t t = 0; t < palette.size(); ++t) {
        const Rgb& p = palette[t];
        if (std::abs(c.r - p.r) <= params.tolerance && std::abs(c.g - p.g) <= params.tolerance &&
            std::abs(c.b - p.b) <= params.tolerance) {
          label[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] =
              static_cast<std::uint8_t>(t);
          break;
        }
      }
    }
  }
  CellCounts counts{};
  std::vector<std::uint8_t> seen(label.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < label.size(); ++start) {
    if (label[start] == kNone || seen[start]) continue;
    const std::uint8_t type = label[start];
    std::int64_t area = 0;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++area;
      const int x = static_cast<int>(i % static_cast<std::size_t>(w));
      const int y = static_cast<int>(i / static_cast<std::size_t>(w));
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const std::size_t j = static_cast<std::size_t>(ny) * static_cast<std::size_t>(w) +
                                static_cast<std::size_t>(nx);
          if (label[j] == type && !seen[j]) {
            seen[j] = 1;
            stack.push_back(j);
          }
        }
      }
    }
    if (area >= params.min_area) ++counts[type];
  }
  return counts;
}

CellPalette parse_palette(const Json& obj) {
  require(obj.is_object(), ErrorCode::kConfig, "palette must be an object");
  CellPalette palette = default_cell_palette();
  for (const auto& [key, value] : obj.items()) {
    const auto type = parse_cell_type(key);
    if (!type) fail(ErrorCode::kConfig, "unknown palette key '" + key + "'");
    if (!value.is_array() || value.size() != 3) {
      fail(ErrorCode::kConfig, "palette entry '" + key + "' must be [r, g, b]");
    }
    std::array<int, 3> c{};
    for (std::size_t i = 0; i < 3; ++i) {
      if (!value[i].is_number_integer() || value[i].get<int>() < 0 || value[i].get<int>() > 255) {
        fail(ErrorCode::kConfig, "palette entry '" + key + "' has a channel outside 0..255");
      }
      c[i] = value[i].get<int>();
    }
    palette[static_cast<std::size_t>(*type)] = {static_cast<std::uint8_t>(c[0]),
                                                static_cast<std::uint8_t>(c[1]),
                                                static_cast<std::uint8_t>(c[2])};
  }
  return palette;
}

std::vector<double> CellCountTable::values(CellType type, int class_label) const {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.class_label == class_label) {
      out.push_back(static_cast<double>(r.counts[static_cast<std::size_t>(type)]));
    }
  }
  return out;
}

void save_cell_counts(const CellCountTable& table, const std::filesystem::path& path) {
  std::string text;
  for (const auto& r : table.rows) {
    Json obj;
    obj["slide_id"] = r.slide_id;
    obj["class_label"] = std::string(class_name(r.class_label));
    for (int t = 0; t < kNumCellTypes; ++t) {
      obj[std::string(cell_type_name(static_cast<CellType>(t)))] = r.counts[static_cast<std::size_t>(t)];
    }
    text += obj.dump() + "\n";
  }
  write_text_file(path, text);
}

CellCountTable load_cell_counts(const std::filesystem::path& path) {
  CellCountTable table;
  for_each_jsonl(path, [&](const Json& obj, int line) {
    json_only_fields(obj, {"slide_id", "class_label", "epithelial", "lymphocyte", "macrophage", "neutrophil"},
                     line);
    CellCountRow row;
    const std::string where = path.string() + ":" + std::to_string(line) + ": ";
    try {
      row.slide_id = json_field(obj, "slide_id", line).get<std::string>();
      const auto label = parse_class_name(json_field(obj, "class_label", line).get<std::string>());
      if (!label) fail(ErrorCode::kParse, where + "unknown class_label");
      row.class_label = *label;
      for (int t = 0; t < kNumCellTypes; ++t) {
        const auto v = json_field(obj, cell_type_name(static_cast<CellType>(t)), line).get<std::int64_t>();
        if (v < 0) fail(ErrorCode::kParse, where + "negative cell count");
        row.counts[static_cast<std::size_t>(t)] = v;
      }
    } catch (const nlohmann::json::type_error& e) {
      fail(ErrorCode::kParse, where + e.what());
    }
    table.rows.push_back(std::move(row));
  });
  return table;
}

// ---------------------------------------------------------------------------
// Mann-Whitney

namespace {

struct RankSummary {
  double rank_sum_x = 0.0;
  double tie_term = 0.0;  // sum of t^3 - t over tie groups
  bool ties = false;
};

RankSummary rank_summary(std::span<const double> x, std::span<const double> y) {
  std::vector<std::pair<double, int>> all;
  all.reserve(x.size() + y.size());
  for (double v : x) all.emplace_back(v, 0);
  for (double v : y) all.emplace_back(v, 1);
  std::sort(all.begin(), all.end());
  RankSummary s;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j + 1 < all.size() && all[j + 1].first == all[i].first) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    const double t = static_cast<double>(j - i + 1);
    if (t > 1) {
      s.ties = true;
      s.tie_term += t * t * t - t;
    }
    for (std::size_t k = i; k <= j; ++k) {
      if (all[k].second == 0) s.rank_sum_x += midrank;
    }
    i = j + 1;
  }
  return s;
}

void check_samples(std::span<const double> x, std::span<const double> y) {
  require(!x.empty() && !y.empty(), ErrorCode::kContract, "Mann-Whitney needs two nonempty samples");
  for (double v : x) require(std::isfinite(v), ErrorCode::kValidation, "sample values must be finite");
  for (double v : y) require(std::isfinite(v), ErrorCode::kValidation, "sample values must be finite");
}

}  // namespace

double mann_whitney_u(std::span<const double> x, std::span<const double> y) {
  check_samples(x, y);
  const double n1 = static_cast<double>(x.size());
  return rank_summary(x, y).rank_sum_x - n1 * (n1 + 1.0) / 2.0;
}

double mann_whitney_exact_upper(std::int64_t u, std::int64_t n1, std::int64_t n2) {
  require(n1 >= 1 && n2 >= 1, ErrorCode::kContract, "sample sizes must be positive");
  require(u >= 0 && u <= n1 * n2, ErrorCode::kContract, "U outside [0, n1 n2]");
  const auto a = static_cast<std::size_t>(std::min(n1, n2));
  const auto b = static_cast<std::size_t>(std::max(n1, n2));
  const std::size_t width = a * b + 1;
  // g[i][v]: arrangements of i values from the first sample and j from the
  // second with U = v, advanced one j at a time.
  std::vector<double> g((a + 1) * width, 0.0);
  for (std::size_t i = 0; i <= a; ++i) g[i * width] = 1.0;
  for (std::size_t j = 1; j <= b; ++j) {
    for (std::size_t i = 1; i <= a; ++i) {
      double* row = &g[i * width];
      const double* prev = &g[(i - 1) * width];
      for (std::size_t v = i * j; v >= j; --v) row[v] += prev[v - j];
    }
  }
  const double* full = &g[a * width];
  double total = 0.0, upper = 0.0;
  for (std::size_t v = 0; v < width; ++v) {
    total += full[v];
    if (v >= static_cast<std::size_t>(u)) upper += full[v];
  }
  return upper / total;
}

MannWhitneyResult mann_whitney_one_sided(std::span<const double> x, std::span<const double> y) {
  check_samples(x, y);
  MannWhitneyResult r;
  r.n1 = static_cast<std::int64_t>(x.size());
  r.n2 = static_cast<std::int64_t>(y.size());
  const RankSummary s = rank_summary(x, y);
  const double n1 = static_cast<double>(r.n1), n2 = static_cast<double>(r.n2), n = n1 + n2;
  r.u = s.rank_sum_x - n1 * (n1 + 1.0) / 2.0;
  r.ps = probability_of_superiority(r.u, r.n1, r.n2);
  r.r_rank_biserial = rank_biserial(r.u, r.n1, r.n2);
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - s.tie_term / (n * (n - 1.0)));
  r.z = var > 0.0 ? (r.u - n1 * n2 / 2.0) / std::sqrt(var) : 0.0;
  if (!s.ties && r.n1 * r.n2 <= 10000) {
    r.method = MannWhitneyMethod::kExact;
    r.p_one_sided = mann_whitney_exact_upper(static_cast<std::int64_t>(std::llround(r.u)), r.n1, r.n2);
  } else {
    r.method = MannWhitneyMethod::kNormal;
    r.p_one_sided = 0.5 * std::erfc(r.z / std::sqrt(2.0));
  }
  return r;
}

double probability_of_superiority(double u, std::int64_t n1, std::int64_t n2) {
  require(n1 >= 1 && n2 >= 1, ErrorCode::kContract, "sample sizes must be positive");
  const double pairs = static_cast<double>(n1) * static_cast<double>(n2);
  require(u >= 0.0 && u <= pairs, ErrorCode::kContract, "U outside [0, n1 n2]");
  return u / pairs;
}

double rank_biserial(double u, std::int64_t n1, std::int64_t n2) {
  return 2.0 * probability_of_superiority(u, n1, n2) - 1.0;
}

Json mann_whitney_to_json(const MannWhitneyResult& r) {
  Json obj;
  obj["u"] = r.u;
  obj["z"] = r.z;
  obj["p_one_sided"] = r.p_one_sided;
  obj["r_rank_biserial"] = r.r_rank_biserial;
  obj["ps"] = r.ps;
  obj["n1"] = r.n1;
  obj["n2"] = r.n2;
  obj["method"] = r.method == MannWhitneyMethod::kExact ? "exact" : "normal-approx";
  return obj;
}

// ---------------------------------------------------------------------------
// Distributions

DistributionExport class_distribution_export(const CellCountTable& table, CellType cell_type, int bins) {
  require(!table.rows.empty(), ErrorCode::kContract, "cell count table is empty");
  require(bins > 0, ErrorCode::kParameter, "bins must be positive");
  DistributionExport out;
  out.cell_type = cell_type;
  out.bins = bins;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int c = 0; c < kNumClasses; ++c) {
    ClassDistribution d;
    d.class_label = c;
    d.sorted = table.values(cell_type, c);
    if (d.sorted.empty()) continue;
    std::sort(d.sorted.begin(), d.sorted.end());
    lo = std::min(lo, d.sorted.front());
    hi = std::max(hi, d.sorted.back());
    const std::array<double, 5> levels{0.05, 0.25, 0.5, 0.75, 0.95};
    for (std::size_t i = 0; i < levels.size(); ++i) d.quantiles[i] = quantile_linear(d.sorted, levels[i]);
    out.classes.push_back(std::move(d));
  }
  if (hi <= lo) hi = lo + 1.0;
  out.range_lo = lo;
  out.range_hi = hi;
  for (auto& d : out.classes) {
    d.histogram.assign(static_cast<std::size_t>(bins), 0.0);
    for (double v : d.sorted) {
      auto b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
      b = std::clamp(b, 0, bins - 1);
      d.histogram[static_cast<std::size_t>(b)] += 1.0;
    }
  }
  return out;
}

DistributionExport class_distribution_export(const CellCountTable& table, std::string_view cell_type,
                                             int bins) {
  const auto type = parse_cell_type(cell_type);
  if (!type) fail(ErrorCode::kConfig, "unknown cell type '" + std::string(cell_type) + "'");
  return class_distribution_export(table, *type, bins);
}

Json distribution_to_json(const DistributionExport& d) {
  Json classes = Json::object();
  for (const auto& c : d.classes) {
    Json e;
    e["n"] = c.sorted.size();
    e["sorted"] = c.sorted;
    e["quantiles"] = {{"p05", c.quantiles[0]}, {"p25", c.quantiles[1]}, {"p50", c.quantiles[2]},
                      {"p75", c.quantiles[3]}, {"p95", c.quantiles[4]}};
    e["histogram"] = c.histogram;
    classes[std::string(class_name(c.class_label))] = e;
  }
  Json out;
  out["cell_type"] = std::string(cell_type_name(d.cell_type));
  out["range"] = {d.range_lo, d.range_hi};
  out["bins"] = d.bins;
  out["classes"] = classes;
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string distribution_to_svg(const DistributionExport& d) {
  constexpr double kSlot = 140.0, kHalf = 55.0, kTop = 30.0, kPlot = 300.0;
  const double width = kSlot * static_cast<double>(std::max<std::size_t>(1, d.classes.size()));
  const double height = kTop + kPlot + 40.0;
  auto y_of = [&](double v) { return kTop + kPlot * (1.0 - (v - d.range_lo) / (d.range_hi - d.range_lo)); };
  const double bin_h = kPlot / d.bins;

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" +
                    fmt(height) + "\">\n";
  svg += "<text x=\"8\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" +
         std::string(cell_type_name(d.cell_type)) + " count per slide (" + fmt(d.range_lo) + " to " +
         fmt(d.range_hi) + ")</text>\n";
  for (std::size_t k = 0; k < d.classes.size(); ++k) {
    const ClassDistribution& c = d.classes[k];
    const double cx = kSlot * (static_cast<double>(k) + 0.5);
    const bool degenerate = c.sorted.front() == c.sorted.back();
    if (degenerate) {
      const double y = y_of(c.sorted.front());
      svg += "<rect x=\"" + fmt(cx - 1.0) + "\" y=\"" + fmt(y - bin_h / 2) + "\" width=\"2.00\" height=\"" +
             fmt(bin_h) + "\" fill=\"#7a5195\"/>\n";
    } else {
      std::vector<double> s(c.histogram.size(), 0.0);
      for (std::size_t b = 0; b < s.size(); ++b) {
        const double left = b > 0 ? c.histogram[b - 1] : 0.0;
        const double right = b + 1 < s.size() ? c.histogram[b + 1] : 0.0;
        s[b] = (left + 2.0 * c.histogram[b] + right) / 4.0;
      }
      const double peak = *std::max_element(s.begin(), s.end());
      std::string right_side, left_side;
      for (std::size_t b = 0; b < s.size(); ++b) {
        const double y = kTop + kPlot - (static_cast<double>(b) + 0.5) * bin_h;
        const double half = kHalf * s[b] / peak;
        right_side += " " + fmt(cx + half) + "," + fmt(y);
        left_side = " " + fmt(cx - half) + "," + fmt(y) + left_side;
      }
      svg += "<polygon points=\"" + right_side.substr(1) + left_side + "\" fill=\"#7a5195\" "
             "fill-opacity=\"0.6\" stroke=\"#3d2a4b\"/>\n";
    }
    const double ym = y_of(c.quantiles[2]);
    svg += "<line x1=\"" + fmt(cx - 12) + "\" y1=\"" + fmt(ym) + "\" x2=\"" + fmt(cx + 12) + "\" y2=\"" +
           fmt(ym) + "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    svg += "<line x1=\"" + fmt(cx) + "\" y1=\"" + fmt(y_of(c.quantiles[1])) + "\" x2=\"" + fmt(cx) +
           "\" y2=\"" + fmt(y_of(c.quantiles[3])) + "\" stroke=\"black\" stroke-width=\"4\"/>\n";
    svg += "<text x=\"" + fmt(cx) + "\" y=\"" + fmt(kTop + kPlot + 25) +
           "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">" +
           std::string(class_name(c.class_label)) + " (n=" + std::to_string(c.sorted.size()) + ")</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::vector<ClassPair> parse_class_pairs(std::string_view text) {
  std::vector<ClassPair> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string_view item = text.substr(pos, comma - pos);
    const std::size_t colon = item.find(':');
    if (colon == std::string_view::npos) {
      fail(ErrorCode::kConfig, "class pair '" + std::string(item) + "' must be higher:lower");
    }
    const auto hi = parse_class_name(item.substr(0, colon));
    const auto lo = parse_class_name(item.substr(colon + 1));
    if (!hi || !lo) fail(ErrorCode::kConfig, "unknown class name in pair '" + std::string(item) + "'");
    if (*hi == *lo) fail(ErrorCode::kConfig, "pair '" + std::string(item) + "' compares a class to itself");
    out.push_back({*hi, *lo});
    pos = comma + 1;
  }
  return out;
}

std::vector<ClassPair> adjacent_class_pairs() { return {{1, 0}, {2, 1}, {3, 2}}; }

std::string pair_key(const ClassPair& pair) {
  return std::string(class_name(pair.higher)) + "_vs_" + std::string(class_name(pair.lower));
}

Json stats_report(const CellCountTable& table, CellType cell_type, std::span<const ClassPair> pairs) {
  Json results = Json::object();
  for (const auto& p : pairs) {
    const auto x = table.values(cell_type, p.higher);
    const auto y = table.values(cell_type, p.lower);
    if (x.empty() || y.empty()) {
      fail(ErrorCode::kContract, "no slides for one side of " + pair_key(p));
    }
    results[pair_key(p)] = mann_whitney_to_json(mann_whitney_one_sided(x, y));
  }
  Json out;
  out["cell_type"] = std::string(cell_type_name(cell_type));
  out["results"] = results;
  return out;
}

}  // namespace histograde
