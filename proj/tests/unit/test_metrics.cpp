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
#include <vector>

#include "doctest.h"
#include "histograde/metrics.hpp"
#include "histograde/rng.hpp"
#include "test_util.hpp"

using namespace histograde;
using histograde::testing::TempDir;
using histograde::testing::thrown_code;

namespace {

PredictionRecord record(int truth, int predicted, std::array<double, 4> probs = {0.25, 0.25, 0.25, 0.25}) {
  PredictionRecord r;
  r.slide_id = "S";
  r.patient_id = "P";
  r.true_label = truth;
  r.predicted_label = predicted;
  r.probabilities = probs;
  return r;
}

// Records whose true class probability is boosted by `signal` on top of noise.
std::vector<PredictionRecord> random_records(std::size_t n, double signal, Rng& rng) {
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    PredictionRecord r;
    r.slide_id = "S" + std::to_string(i);
    r.patient_id = r.slide_id;
    r.true_label = static_cast<int>(rng.below(4));
    double s = 0;
    for (int c = 0; c < 4; ++c) {
      r.probabilities[static_cast<std::size_t>(c)] = rng.uniform() + (c == r.true_label ? signal : 0.0);
      s += r.probabilities[static_cast<std::size_t>(c)];
    }
    for (double& p : r.probabilities) p /= s;
    r.predicted_label = argmax_class(r.probabilities);
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("argmax breaks ties toward the lower class") {
    const std::array<double, 4> tie{0.1, 0.4, 0.4, 0.1};
    CHECK(argmax_class(tie) == 1);
    const std::array<double, 4> flat{0.25, 0.25, 0.25, 0.25};
    CHECK(argmax_class(flat) == 0);
  }

  TEST_CASE("confusion matrix basics") {
    std::vector<PredictionRecord> rs{record(0, 0), record(1, 1), record(2, 2), record(3, 3)};
    const auto c = confusion_matrix(rs);
    for (int t = 0; t < 4; ++t) {
      for (int p = 0; p < 4; ++p) CHECK(c.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] == (t == p ? 1 : 0));
    }
    const std::vector<PredictionRecord> one{record(2, 1)};
    const auto c1 = confusion_matrix(one);
    CHECK(c1.counts[2][1] == 1);
    CHECK(c1.total() == 1);
    CHECK(thrown_code([] { confusion_matrix({}); }) == ErrorCode::kContract);

    const auto p = prf(c);
    for (const auto& s : p.per_class) {
      CHECK(s.precision == 1.0);
      CHECK(s.recall == 1.0);
      CHECK(s.f1 == 1.0);
    }
    CHECK(p.weighted.f1 == 1.0);
  }

  TEST_CASE("recalls and weighted recall from reported confusion counts") {
    const std::array<int, 4> support{647, 885, 358, 187};
    const std::array<int, 4> correct{531, 622, 171, 125};
    std::vector<PredictionRecord> rs;
    for (int c = 0; c < 4; ++c) {
      for (int i = 0; i < support[static_cast<std::size_t>(c)]; ++i) {
        const bool hit = i < correct[static_cast<std::size_t>(c)];
        rs.push_back(record(c, hit ? c : (c + 1 + i % 3) % 4));
      }
    }
    const auto conf = confusion_matrix(rs);
    const auto p = prf(conf);
    CHECK(std::abs(p.per_class[0].recall - 0.821) <= 0.0005);
    CHECK(std::abs(p.per_class[1].recall - 0.703) <= 0.0005);
    CHECK(std::abs(p.per_class[2].recall - 0.478) <= 0.0005);
    CHECK(std::abs(p.per_class[3].recall - 0.668) <= 0.0005);
    CHECK(p.weighted.recall == doctest::Approx(1449.0 / 2077.0).epsilon(1e-15));
    for (int c = 0; c < 4; ++c) CHECK(conf.support(c) == support[static_cast<std::size_t>(c)]);

    // Relabeling predictions keeps row sums.
    for (auto& r : rs) r.predicted_label = 3 - r.predicted_label;
    const auto relabeled = confusion_matrix(rs);
    for (int c = 0; c < 4; ++c) CHECK(relabeled.support(c) == support[static_cast<std::size_t>(c)]);
  }

  TEST_CASE("empty predicted column gives zero precision and a flag") {
    std::vector<PredictionRecord> rs{record(0, 0), record(1, 0), record(2, 2), record(3, 2)};
    const auto p = prf(confusion_matrix(rs));
    CHECK(p.per_class[1].precision == 0.0);
    CHECK(p.per_class[1].f1 == 0.0);
    CHECK(p.zero_precision_denominator[1]);
    CHECK(p.zero_precision_denominator[3]);
    CHECK(!p.zero_precision_denominator[0]);
    MetricsParams mp;
    mp.confidence_intervals = false;
    CHECK(build_report(rs, mp, 1).warnings.size() == 2);
  }

  TEST_CASE("roc auc examples") {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y{0, 0, 1, 1};
    CHECK(roc_auc(s, y) == 0.75);
    const std::vector<double> sep{0.1, 0.2, 0.8, 0.9};
    CHECK(roc_auc(sep, y) == 1.0);
    const std::vector<double> same{0.3, 0.3, 0.3, 0.3};
    CHECK(roc_auc(same, y) == 0.5);
    const std::vector<int> one_class{1, 1, 1, 1};
    CHECK(thrown_code([&] { roc_auc(s, one_class); }) == ErrorCode::kUndefinedAuc);
  }

  TEST_CASE("rank AUC equals trapezoid AUC and is tie-symmetric") {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 2 + rng.below(60);
      std::vector<double> s(n), neg(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = static_cast<double>(rng.below(8)) / 8.0;  // coarse grid forces ties
        neg[i] = -s[i];
        y[i] = static_cast<int>(rng.below(2));
      }
      y[0] = 0;
      y[1] = 1;
      const double a = roc_auc(s, y);
      const auto curve = roc_curve(s, y);
      CHECK(std::abs(a - trapezoid_area(curve)) <= 1e-12);
      CHECK(std::abs(a + roc_auc(neg, y) - 1.0) <= 1e-12);
    }
  }

  TEST_CASE("weighted auc") {
    const std::array<double, 4> aucs{0.925, 0.826, 0.861, 0.923};
    const std::array<std::int64_t, 4> supports{647, 885, 358, 187};
    const double w = support_weighted_mean(aucs, supports);
    CHECK(w == doctest::Approx(1810.324 / 2077.0).epsilon(1e-12));
    const std::array<std::int64_t, 4> equal{5, 5, 5, 5};
    CHECK(support_weighted_mean(aucs, equal) == doctest::Approx((0.925 + 0.826 + 0.861 + 0.923) / 4));

    std::vector<PredictionRecord> two{record(0, 0, {0.9, 0.1, 0, 0}), record(0, 0, {0.8, 0.2, 0, 0}),
                                      record(1, 1, {0.2, 0.8, 0, 0}), record(1, 1, {0.1, 0.9, 0, 0})};
    CHECK(weighted_auc(two) == 1.0);
    const auto per = per_class_auc(two);
    CHECK(per[0].has_value());
    CHECK(!per[2].has_value());
    std::vector<PredictionRecord> single{record(1, 1), record(1, 1)};
    CHECK(thrown_code([&] { weighted_auc(single); }) == ErrorCode::kUndefinedAuc);
  }

  TEST_CASE("linear quantiles") {
    std::vector<double> v(100);
    for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = i + 1;
    CHECK(quantile_linear(v, 0.0) == 1.0);
    CHECK(quantile_linear(v, 1.0) == 100.0);
    CHECK(quantile_linear(v, 0.5) == 50.5);
    CHECK(quantile_linear(v, 0.25) == 25.75);
    CHECK(quantile_linear(v, 0.025) == doctest::Approx(3.475));
  }

  TEST_CASE("bootstrap intervals") {
    Rng rng(3);
    const auto rs = random_records(120, 0.5, rng);
    const Interval constant = bootstrap_ci(rs, [](auto) { return 0.42; }, 200, 0.05, 1);
    CHECK(constant.lo == 0.42);
    CHECK(constant.hi == 0.42);
    const Interval a = bootstrap_ci(rs, weighted_f1, 300, 0.05, 9);
    CHECK(a == bootstrap_ci(rs, weighted_f1, 300, 0.05, 9, 4));
    CHECK(a.lo <= a.hi);
    const double point = weighted_f1(rs);
    CHECK(a.lo <= point);
    CHECK(point <= a.hi);

    // Redraws skip resamples where AUC is undefined.
    std::vector<PredictionRecord> skewed;
    for (int i = 0; i < 30; ++i) skewed.push_back(record(0, 0, {0.7, 0.1, 0.1, 0.1}));
    skewed.push_back(record(1, 1, {0.1, 0.7, 0.1, 0.1}));
    const Interval auc = bootstrap_ci(skewed, weighted_auc, 100, 0.05, 2);
    CHECK(auc.lo <= auc.hi);
    const std::vector<PredictionRecord> hopeless{record(0, 0), record(0, 0)};
    CHECK(thrown_code([&] { bootstrap_ci(hopeless, weighted_auc, 50, 0.05, 2); }) ==
          ErrorCode::kDegenerateBootstrap);
  }

  TEST_CASE("bootstrap interval contains the point estimate on random prediction sets") {
    Rng rng(2024);
    int contained = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const auto rs = random_records(40 + rng.below(160), 0.2 + rng.uniform(), rng);
      const Interval ci = bootstrap_ci(rs, weighted_f1, 200, 0.05, static_cast<std::uint64_t>(trial));
      REQUIRE(ci.lo <= ci.hi);
      const double point = weighted_f1(rs);
      contained += (ci.lo <= point && point <= ci.hi) ? 1 : 0;
    }
    CHECK(contained >= 99);
  }

  TEST_CASE("report values and serialisation") {
    Rng rng(5);
    const auto rs = random_records(200, 0.6, rng);
    MetricsParams mp;
    mp.bootstrap_resamples = 100;
    const MetricReport r = build_report(rs, mp, 4);
    CHECK(r.n_records == 200);
    std::array<double, 4> f1{};
    for (std::size_t c = 0; c < 4; ++c) {
      f1[c] = r.per_class[c].f1;
      CHECK(r.per_class[c].precision >= 0.0);
      CHECK(r.per_class[c].precision <= 1.0);
    }
    CHECK(r.weighted.f1 == doctest::Approx(support_weighted_mean(f1, r.support)).epsilon(1e-12));
    for (const char* k : {"auc", "precision", "recall", "f1"}) CHECK(r.ci.count(k) == 1);
    const Json j = report_to_json(r);
    CHECK(j.at("n_records") == 200);
    CHECK(j.at("per_class").contains("severe"));
    CHECK(j.at("ci95").contains("auc"));
    CHECK(build_report(rs, mp, 4).ci == r.ci);

    const std::string csv = confusion_csv(confusion_matrix(rs));
    CHECK(csv.rfind("true\\predicted,inactive,mild,moderate,severe\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  }

  TEST_CASE("prediction JSONL round-trip") {
    TempDir dir("pred");
    Rng rng(8);
    auto rs = random_records(10, 0.3, rng);
    for (std::size_t i = 0; i < rs.size(); ++i) rs[i].fold = static_cast<int>(i % 5);
    save_predictions(rs, dir / "p.jsonl");
    CHECK(load_predictions(dir / "p.jsonl") == rs);
  }
}
