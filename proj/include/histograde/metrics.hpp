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

/// @file metrics.hpp
/// @brief Slide-level classification metrics and bootstrap intervals.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "histograde/io.hpp"
#include "histograde/slide.hpp"

namespace histograde {

struct PredictionRecord {
  std::string slide_id;
  std::string patient_id;
  int true_label = 0;
  std::array<double, kNumClasses> probabilities{};
  int predicted_label = 0;
  int fold = 0;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

/// Index of the largest probability; ties go to the lower class.
int argmax_class(std::span<const double> probabilities);

/// JSONL: {slide_id, patient_id, fold, true_label, p0..p3, predicted_label}.
void save_predictions(std::span<const PredictionRecord> records, const std::filesystem::path& path);
std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);

struct ConfusionMatrix {
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};  // [true][predicted]

  std::int64_t total() const;
  std::int64_t support(int true_class) const;
  std::int64_t predicted(int predicted_class) const;
};

/// Throws kContract on an empty record list.
ConfusionMatrix confusion_matrix(std::span<const PredictionRecord> records);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct PrfResult {
  std::array<ClassScores, kNumClasses> per_class{};
  ClassScores weighted;
  std::array<std::int64_t, kNumClasses> support{};
  std::array<bool, kNumClasses> zero_precision_denominator{};
};

/// Precision with an empty predicted column is 0 and flagged.
PrfResult prf(const ConfusionMatrix& conf);

/// One-vs-rest AUC from ranks (midranks for ties). labels are 0/1.
/// Throws kUndefinedAuc unless both labels occur.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Empirical ROC, one point per distinct threshold, from (0,0) to (1,1).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
double trapezoid_area(std::span<const RocPoint> curve);

/// Per-class one-vs-rest AUC; classes without both positives and negatives are nullopt.
std::array<std::optional<double>, kNumClasses> per_class_auc(std::span<const PredictionRecord> records);

/// Support-weighted mean of one-vs-rest AUCs. Throws kUndefinedAuc when
/// fewer than two classes are present.
double weighted_auc(std::span<const PredictionRecord> records);

/// Support-weighted mean of given per-class values.
double support_weighted_mean(std::span<const double> values, std::span<const std::int64_t> supports);

double weighted_f1(std::span<const PredictionRecord> records);

/// Linear interpolation between closest ranks, h = (n - 1) p. `sorted` must be ascending.
double quantile_linear(std::span<const double> sorted, double p);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Interval&, const Interval&) = default;
};

using MetricFn = std::function<double(std::span<const PredictionRecord>)>;

/// Percentile bootstrap over records. A resample on which `metric` throws
/// kUndefinedAuc is redrawn; more than 10 B draws in total raise
/// kDegenerateBootstrap.
Interval bootstrap_ci(std::span<const PredictionRecord> records, const MetricFn& metric,
                      int resamples = 1000, double alpha = 0.05, std::uint64_t seed = 0,
                      int threads = 1);

struct MetricsParams {
  int bootstrap_resamples = 1000;
  double alpha = 0.05;
  bool confidence_intervals = true;
};

struct MetricReport {
  std::array<ClassScores, kNumClasses> per_class{};
  std::array<std::optional<double>, kNumClasses> per_class_auc{};
  std::array<std::int64_t, kNumClasses> support{};
  ClassScores weighted;
  double weighted_auc = 0.0;
  std::map<std::string, Interval> ci;  // keyed by weighted metric name
  std::vector<std::string> warnings;
  std::int64_t n_records = 0;
};

MetricReport build_report(std::span<const PredictionRecord> records, const MetricsParams& params,
                          std::uint64_t seed, int threads = 1);
Json report_to_json(const MetricReport& report);
/// Header row "true\\predicted,inactive,...", one row per true class.
std::string confusion_csv(const ConfusionMatrix& conf);

}  // namespace histograde
