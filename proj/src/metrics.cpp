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

#include "histograde/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "histograde/error.hpp"
#include "histograde/parallel.hpp"
#include "histograde/rng.hpp"

namespace histograde {

int argmax_class(std::span<const double> probabilities) {
  require(!probabilities.empty(), ErrorCode::kContract, "argmax of an empty vector");
  int best = 0;
  for (std::size_t c = 1; c < probabilities.size(); ++c) {
    if (probabilities[c] > probabilities[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  return best;
}

void save_predictions(std::span<const PredictionRecord> records, const std::filesystem::path& path) {
  std::string text;
  for (const auto& r : records) {
    Json obj;
    obj["slide_id"] = r.slide_id;
    obj["patient_id"] = r.patient_id;
    obj["fold"] = r.fold;
    obj["true_label"] = r.true_label;
    for (int c = 0; c < kNumClasses; ++c) {
      obj["p" + std::to_string(c)] = r.probabilities[static_cast<std::size_t>(c)];
    }
    obj["predicted_label"] = r.predicted_label;
    text += obj.dump() + "\n";
  }
  write_text_file(path, text);
}

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  std::vector<PredictionRecord> out;
  for_each_jsonl(path, [&](const Json& obj, int line) {
    json_only_fields(obj, {"slide_id", "patient_id", "fold", "true_label", "p0", "p1", "p2", "p3",
                           "predicted_label"},
                     line);
    PredictionRecord r;
    try {
      r.slide_id = json_field(obj, "slide_id", line).get<std::string>();
      r.patient_id = json_field(obj, "patient_id", line).get<std::string>();
      r.fold = json_field(obj, "fold", line).get<int>();
      r.true_label = json_field(obj, "true_label", line).get<int>();
      for (int c = 0; c < kNumClasses; ++c) {
        r.probabilities[static_cast<std::size_t>(c)] =
            json_field(obj, "p" + std::to_string(c), line).get<double>();
      }
      r.predicted_label = json_field(obj, "predicted_label", line).get<int>();
    } catch (const nlohmann::json::type_error& e) {
      fail(ErrorCode::kParse, path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
    if (r.true_label < 0 || r.true_label >= kNumClasses || r.predicted_label < 0 ||
        r.predicted_label >= kNumClasses) {
      fail(ErrorCode::kParse, path.string() + ":" + std::to_string(line) + ": label out of range");
    }
    out.push_back(std::move(r));
  });
  return out;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (const auto& row : counts) t += std::accumulate(row.begin(), row.end(), std::int64_t{0});
  return t;
}

std::int64_t ConfusionMatrix::support(int true_class) const {
  const auto& row = counts[static_cast<std::size_t>(true_class)];
  return std::accumulate(row.begin(), row.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::predicted(int predicted_class) const {
  std::int64_t t = 0;
  for (const auto& row : counts) t += row[static_cast<std::size_t>(predicted_class)];
  return t;
}

ConfusionMatrix confusion_matrix(std::span<const PredictionRecord> records) {
  require(!records.empty(), ErrorCode::kContract, "confusion matrix of no records");
  ConfusionMatrix m;
  for (const auto& r : records) {
    require(r.true_label >= 0 && r.true_label < kNumClasses && r.predicted_label >= 0 &&
                r.predicted_label < kNumClasses,
            ErrorCode::kValidation, "label out of range in " + r.slide_id);
    ++m.counts[static_cast<std::size_t>(r.true_label)][static_cast<std::size_t>(r.predicted_label)];
  }
  return m;
}

PrfResult prf(const ConfusionMatrix& conf) {
  PrfResult out;
  const double total = static_cast<double>(conf.total());
  for (int c = 0; c < kNumClasses; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    const double tp = static_cast<double>(conf.counts[uc][uc]);
    const std::int64_t col = conf.predicted(c);
    const std::int64_t row = conf.support(c);
    ClassScores& s = out.per_class[uc];
    out.support[uc] = row;
    out.zero_precision_denominator[uc] = col == 0;
    s.precision = col > 0 ? tp / static_cast<double>(col) : 0.0;
    s.recall = row > 0 ? tp / static_cast<double>(row) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                                        : 0.0;
    if (total > 0.0) {
      const double w = static_cast<double>(row) / total;
      out.weighted.precision += w * s.precision;
      out.weighted.recall += w * s.recall;
      out.weighted.f1 += w * s.f1;
    }
  }
  return out;
}

namespace {

void check_binary(std::span<const double> scores, std::span<const int> labels,
                  std::int64_t& pos, std::int64_t& neg) {
  require(scores.size() == labels.size(), ErrorCode::kShape, "scores and labels differ in length");
  pos = neg = 0;
  for (int l : labels) {
    require(l == 0 || l == 1, ErrorCode::kValidation, "binary labels must be 0 or 1");
    (l == 1 ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0) {
    fail(ErrorCode::kUndefinedAuc, "AUC needs both positive and negative examples");
  }
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  std::int64_t pos = 0, neg = 0;
  check_binary(scores, labels, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) rank_sum += midrank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  std::int64_t pos = 0, neg = 0;
  check_binary(scores, labels, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> curve{{0.0, 0.0}};
  std::int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    curve.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                     static_cast<double>(tp) / static_cast<double>(pos)});
  }
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  }
  return area;
}

std::array<std::optional<double>, kNumClasses> per_class_auc(std::span<const PredictionRecord> records) {
  std::array<std::optional<double>, kNumClasses> out{};
  std::vector<double> scores(records.size());
  std::vector<int> labels(records.size());
  for (int c = 0; c < kNumClasses; ++c) {
    std::int64_t pos = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
      scores[i] = records[i].probabilities[static_cast<std::size_t>(c)];
      labels[i] = records[i].true_label == c ? 1 : 0;
      pos += labels[i];
    }
    if (pos > 0 && pos < static_cast<std::int64_t>(records.size())) {
      out[static_cast<std::size_t>(c)] = roc_auc(scores, labels);
    }
  }
  return out;
}

double weighted_auc(std::span<const PredictionRecord> records) {
  std::array<std::int64_t, kNumClasses> support{};
  for (const auto& r : records) ++support[static_cast<std::size_t>(r.true_label)];
  const auto present = std::count_if(support.begin(), support.end(), [](std::int64_t s) { return s > 0; });
  if (present < 2) fail(ErrorCode::kUndefinedAuc, "weighted AUC needs at least two classes");
  const auto aucs = per_class_auc(records);
  std::array<double, kNumClasses> values{};
  for (std::size_t c = 0; c < values.size(); ++c) values[c] = aucs[c].value_or(0.0);
  return support_weighted_mean(values, support);
}

double support_weighted_mean(std::span<const double> values, std::span<const std::int64_t> supports) {
  require(values.size() == supports.size(), ErrorCode::kShape, "values and supports differ in length");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    num += static_cast<double>(supports[i]) * values[i];
    den += static_cast<double>(supports[i]);
  }
  require(den > 0.0, ErrorCode::kContract, "weighted mean with zero total support");
  return num / den;
}

double weighted_f1(std::span<const PredictionRecord> records) {
  return prf(confusion_matrix(records)).weighted.f1;
}

double quantile_linear(std::span<const double> sorted, double p) {
  require(!sorted.empty(), ErrorCode::kContract, "quantile of an empty sample");
  require(p >= 0.0 && p <= 1.0, ErrorCode::kParameter, "quantile level outside [0, 1]");
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_ci(std::span<const PredictionRecord> records, const MetricFn& metric,
                      int resamples, double alpha, std::uint64_t seed, int threads) {
  require(!records.empty(), ErrorCode::kContract, "bootstrap of no records");
  require(resamples > 0, ErrorCode::kParameter, "bootstrap needs at least one resample");
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::kParameter, "alpha must be in (0, 1)");
  const auto max_draws = static_cast<std::int64_t>(resamples) * 10;
  std::atomic<std::int64_t> draws{0};
  std::vector<double> values(static_cast<std::size_t>(resamples));
  parallel_for(values.size(), threads, [&](std::size_t b) {
    std::vector<PredictionRecord> sample(records.size());
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (draws.fetch_add(1) >= max_draws) {
        fail(ErrorCode::kDegenerateBootstrap,
             "bootstrap exceeded " + std::to_string(max_draws) + " draws on degenerate resamples");
      }
      Rng rng(mix_seed(mix_seed(seed, b), attempt));
      for (auto& s : sample) s = records[rng.below(records.size())];
      try {
        values[b] = metric(sample);
        return;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kUndefinedAuc) throw;
      }
    }
  });
  std::sort(values.begin(), values.end());
  return {quantile_linear(values, alpha / 2.0), quantile_linear(values, 1.0 - alpha / 2.0)};
}

MetricReport build_report(std::span<const PredictionRecord> records, const MetricsParams& params,
                          std::uint64_t seed, int threads) {
  MetricReport rep;
  const ConfusionMatrix conf = confusion_matrix(records);
  const PrfResult scores = prf(conf);
  rep.per_class = scores.per_class;
  rep.support = scores.support;
  rep.weighted = scores.weighted;
  rep.per_class_auc = per_class_auc(records);
  rep.weighted_auc = weighted_auc(records);
  rep.n_records = static_cast<std::int64_t>(records.size());
  for (int c = 0; c < kNumClasses; ++c) {
    if (scores.zero_precision_denominator[static_cast<std::size_t>(c)]) {
      rep.warnings.push_back("no predictions for class " + std::string(class_name(c)) +
                             "; precision set to 0");
    }
  }
  if (params.confidence_intervals) {
    const std::vector<std::pair<std::string, MetricFn>> fns = {
        {"auc", [](auto r) { return weighted_auc(r); }},
        {"precision", [](auto r) { return prf(confusion_matrix(r)).weighted.precision; }},
        {"recall", [](auto r) { return prf(confusion_matrix(r)).weighted.recall; }},
        {"f1", [](auto r) { return weighted_f1(r); }},
    };
    for (const auto& [name, fn] : fns) {
      rep.ci[name] = bootstrap_ci(records, fn, params.bootstrap_resamples, params.alpha,
                                  mix_seed(seed, name), threads);
    }
  }
  return rep;
}

Json report_to_json(const MetricReport& report) {
  Json per_class = Json::object();
  for (int c = 0; c < kNumClasses; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    Json e;
    e["support"] = report.support[uc];
    e["precision"] = report.per_class[uc].precision;
    e["recall"] = report.per_class[uc].recall;
    e["f1"] = report.per_class[uc].f1;
    e["auc"] = report.per_class_auc[uc] ? Json(*report.per_class_auc[uc]) : Json(nullptr);
    per_class[std::string(class_name(c))] = e;
  }
  Json weighted;
  weighted["auc"] = report.weighted_auc;
  weighted["precision"] = report.weighted.precision;
  weighted["recall"] = report.weighted.recall;
  weighted["f1"] = report.weighted.f1;
  Json ci = Json::object();
  for (const auto& [name, iv] : report.ci) ci[name] = Json::array({iv.lo, iv.hi});
  Json out;
  out["n_records"] = report.n_records;
  out["per_class"] = per_class;
  out["weighted"] = weighted;
  out["ci95"] = ci;
  out["warnings"] = report.warnings;
  return out;
}

std::string confusion_csv(const ConfusionMatrix& conf) {
  std::string out = "true\\predicted";
  for (int c = 0; c < kNumClasses; ++c) out += "," + std::string(class_name(c));
  out += "\n";
  for (int t = 0; t < kNumClasses; ++t) {
    out += class_name(t);
    for (int p = 0; p < kNumClasses; ++p) {
      out += "," + std::to_string(conf.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]);
    }
    out += "\n";
  }
  return out;
}

}  // namespace histograde
