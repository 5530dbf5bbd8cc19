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
#include <set>
#include <utility>
#include <vector>

#include "doctest.h"
#include "histograde/rng.hpp"
#include "histograde/trainer.hpp"
#include "test_util.hpp"

using namespace histograde;
using histograde::testing::TempDir;
using histograde::testing::thrown_code;

namespace {

SlideManifest manifest_from(const std::vector<std::pair<std::string, int>>& patient_labels) {
  SlideManifest m;
  int i = 0;
  for (const auto& [patient, label] : patient_labels) {
    SlideEntry e;
    e.slide_id = "S" + std::to_string(i++);
    e.patient_id = patient;
    e.class_label = label;
    e.path = "slides/" + e.slide_id;
    m.entries.push_back(e);
  }
  return m;
}

PatchGrid full_grid(const std::string& id, int w, int h) {
  PatchGrid g;
  g.slide_id = id;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      PatchRecord r;
      r.slide_id = id;
      r.grid_x = x;
      r.grid_y = y;
      r.px_rect = {x * 224, y * 224, 224, 224};
      r.tissue_fraction = 1.0;
      g.records.push_back(r);
    }
  }
  return g;
}

// Embeddings whose first channels carry the class, plus noise.
EmbeddingMatrix class_embeddings(const PatchGrid& grid, int label, int dim, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingMatrix m{grid.slide_id, dim, grid.size(), {}, kReferenceEmbedderId};
  m.values.resize(grid.size() * static_cast<std::size_t>(dim));
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (int c = 0; c < dim; ++c) {
      const double signal = c < 4 ? (c == label ? 1.0 : 0.0) : 0.0;
      m.values[r * static_cast<std::size_t>(dim) + static_cast<std::size_t>(c)] =
          static_cast<float>(signal + 0.1 * rng.normal());
    }
  }
  return m;
}

class RecordingSource : public EmbeddingSource {
 public:
  explicit RecordingSource(InMemoryEmbeddingSource& inner) : inner_(inner) {}
  const PatchGrid& grid(const std::string& id, Access a) override {
    (a == Access::kTrain ? train_ : eval_).insert(id);
    return inner_.grid(id, a);
  }
  const EmbeddingMatrix& embeddings(const std::string& id, Access a) override {
    (a == Access::kTrain ? train_ : eval_).insert(id);
    return inner_.embeddings(id, a);
  }
  std::set<std::string> train_, eval_;

 private:
  InMemoryEmbeddingSource& inner_;
};

struct ToyData {
  SlideManifest manifest;
  InMemoryEmbeddingSource source;
};

void build_toy(ToyData& d, int patients, int dim) {
  std::vector<std::pair<std::string, int>> rows;
  for (int p = 0; p < patients; ++p) {
    const int slides = 1 + p % 2;
    for (int s = 0; s < slides; ++s) rows.push_back({"P" + std::to_string(p), p % 4});
  }
  d.manifest = manifest_from(rows);
  for (const auto& e : d.manifest.entries) {
    const PatchGrid g = full_grid(e.slide_id, 3, 3);
    d.source.add(g, class_embeddings(g, e.class_label, dim, mix_seed(1, e.slide_id)));
  }
}

TrainConfig toy_config(int dim) {
  TrainConfig cfg;
  cfg.model.input_dim = dim;
  cfg.model.d_model = 16;
  cfg.model.n_heads = 2;
  cfg.model.n_layers = 1;
  cfg.model.region_side = 2;
  cfg.regions_per_iter_train = 2;
  cfg.regions_per_slide_val = 4;
  cfg.batch_size = 4;
  cfg.max_epochs = 3;
  cfg.patience = 2;
  cfg.folds = 4;
  cfg.lr = 1e-2;
  return cfg;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("one patient per fold when k equals the patient count") {
    const auto m = manifest_from({{"A", 0}, {"B", 1}, {"C", 2}, {"D", 3}, {"E", 0}});
    const auto f = make_folds(m, 5, 3);
    std::set<int> used;
    for (const auto& [p, fold] : f.patient_fold) used.insert(fold);
    CHECK(used.size() == 5);
    CHECK(thrown_code([&] { make_folds(m, 6, 3); }) == ErrorCode::kConfig);
    CHECK(thrown_code([&] { make_folds(m, 1, 3); }) == ErrorCode::kConfig);
  }

  TEST_CASE("a patient's slides share a fold") {
    std::vector<std::pair<std::string, int>> rows;
    for (int i = 0; i < 6; ++i) rows.push_back({"BIG", 2});
    for (int i = 0; i < 12; ++i) rows.push_back({"P" + std::to_string(i), i % 4});
    const auto m = manifest_from(rows);
    const auto f = make_folds(m, 5, 1);
    for (const auto& e : m.entries) CHECK(f.fold_of(e.slide_id) == f.patient_fold.at(e.patient_id));
  }

  TEST_CASE("folds are balanced, grouped, and partition the manifest") {
    Rng rng(42);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<std::pair<std::string, int>> rows;
      for (int p = 0; p < 200; ++p) {
        const int slides = 1 + static_cast<int>(rng.below(3));
        const int label = static_cast<int>(rng.below(4));
        for (int s = 0; s < slides; ++s) rows.push_back({"P" + std::to_string(p), label});
      }
      const auto m = manifest_from(rows);
      const auto f = make_folds(m, 5, static_cast<std::uint64_t>(trial));
      std::vector<int> sizes(5, 0);
      std::set<std::string> seen;
      for (int k = 0; k < 5; ++k) {
        for (const auto& id : f.slides_in(m, k)) {
          CHECK(seen.insert(id).second);
          ++sizes[static_cast<std::size_t>(k)];
        }
      }
      CHECK(seen.size() == m.entries.size());
      for (const auto& e : m.entries) CHECK(f.fold_of(e.slide_id) == f.patient_fold.at(e.patient_id));
      const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
      CHECK(*lo > 0);
      CHECK(static_cast<double>(*hi) / *lo <= 1.3);
    }
  }

  TEST_CASE("fold assignment ignores manifest order") {
    Rng rng(7);
    std::vector<std::pair<std::string, int>> rows;
    for (int p = 0; p < 40; ++p) {
      for (int s = 0; s <= p % 3; ++s) rows.push_back({"P" + std::to_string(p), p % 4});
    }
    auto m = manifest_from(rows);
    const auto a = make_folds(m, 5, 9);
    rng.shuffle(m.entries.begin(), m.entries.end());
    const auto b = make_folds(m, 5, 9);
    CHECK(a.slide_fold == b.slide_fold);
    CHECK(a.patient_fold == b.patient_fold);
  }

  TEST_CASE("region sampling") {
    const PatchGrid tiny = full_grid("T", 2, 3);
    const auto val = sample_regions(tiny, 5, 4, 0, SampleMode::kVal);
    REQUIRE(val.size() == 1);
    CHECK(val[0].members.size() == 6);
    const auto train = sample_regions(tiny, 5, 4, 1, SampleMode::kTrain);
    CHECK(train.size() == 5);
    for (const auto& r : train) CHECK(r == val[0]);

    const PatchGrid big = full_grid("B", 24, 19);  // 21 x 16 = 336 windows
    const auto v = sample_regions(big, 175, 4, 0, SampleMode::kVal);
    REQUIRE(v.size() == 175);
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(v[i].origin.x == static_cast<int>(i % 21));
      CHECK(v[i].origin.y == static_cast<int>(i / 21));
      CHECK(v[i].members.size() == 16);
    }
    CHECK(sample_regions(big, 400, 4, 0, SampleMode::kVal).size() == 336);

    const auto t1 = sample_regions(big, 4, 4, 11, SampleMode::kTrain);
    CHECK(t1 == sample_regions(big, 4, 4, 11, SampleMode::kTrain));
    std::set<std::pair<int, int>> origins;
    for (const auto& r : t1) {
      origins.insert({r.origin.x, r.origin.y});
      for (std::size_t i = 0; i < r.members.size(); ++i) {
        const auto& rec = big.records[static_cast<std::size_t>(r.members[i])];
        CHECK(rec.grid_x - r.origin.x == r.relative[i].x);
        CHECK(rec.grid_y - r.origin.y == r.relative[i].y);
        CHECK(r.relative[i].x < 4);
        CHECK(r.relative[i].y < 4);
      }
    }
    CHECK(origins.size() == 4);

    PatchGrid sparse = full_grid("S", 8, 8);
    sparse.records.erase(std::remove_if(sparse.records.begin(), sparse.records.end(),
                                        [](const PatchRecord& r) { return r.grid_x >= 2 && r.grid_x < 6; }),
                         sparse.records.end());
    for (const auto& r : sample_regions(sparse, 100, 2, 0, SampleMode::kVal)) CHECK(!r.members.empty());

    PatchGrid empty;
    CHECK(thrown_code([&] { sample_regions(empty, 4, 4, 0, SampleMode::kTrain); }) == ErrorCode::kContract);
  }

  TEST_CASE("class weights") {
    const auto w = compute_class_weights(std::array<std::int64_t, 4>{647, 885, 358, 187});
    CHECK(w.w[0] == doctest::Approx(0.8026).epsilon(1e-4));
    CHECK(w.w[1] == doctest::Approx(0.5867).epsilon(1e-4));
    CHECK(w.w[2] == doctest::Approx(1.4504).epsilon(1e-4));
    CHECK(w.w[3] == doctest::Approx(2.7767).epsilon(1e-4));
    const auto doubled = compute_class_weights(std::array<std::int64_t, 4>{1294, 1770, 716, 374});
    for (std::size_t c = 0; c < 4; ++c) CHECK(doubled.w[c] == doctest::Approx(w.w[c]).epsilon(1e-15));
    for (double v : compute_class_weights(std::array<std::int64_t, 4>{5, 5, 5, 5}).w) CHECK(v == 1.0);
    const std::array<std::int64_t, 4> absent{3, 0, 2, 1};
    CHECK(thrown_code([&] { compute_class_weights(absent); }) == ErrorCode::kDegenerateSplit);
    CHECK(compute_class_weights(absent, 0.5).w[1] == 0.5);
  }

  TEST_CASE("early stopping arithmetic") {
    std::vector<int> bests;
    const int stopped = run_epochs(
        10, 100, [](int e) { return e <= 3 ? 0.1 * e : 0.3; }, [&](int e) { bests.push_back(e); });
    CHECK(stopped == 13);
    CHECK(bests == std::vector<int>{1, 2, 3});
    CHECK(run_epochs(10, 1, [](int) { return 0.0; }, nullptr) == 1);
    CHECK(run_epochs(10, 7, [](int e) { return static_cast<double>(e); }, nullptr) == 7);
  }

  TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.patience = 50;
    CHECK(thrown_code([&] { cfg.validate(); }) == ErrorCode::kConfig);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK(thrown_code([&] { cfg.validate(); }) == ErrorCode::kConfig);
  }

  TEST_CASE("training never reads held-out embeddings in train mode") {
    ToyData d;
    build_toy(d, 12, 8);
    auto cfg = toy_config(8);
    const auto folds = make_folds(d.manifest, cfg.folds, cfg.seed);
    for (int k = 0; k < cfg.folds; ++k) {
      RecordingSource rec(d.source);
      const auto result = train_fold(k, folds, d.manifest, rec, cfg);
      const auto held = folds.slides_in(d.manifest, k);
      const std::set<std::string> held_set(held.begin(), held.end());
      for (const auto& id : rec.train_) CHECK(held_set.count(id) == 0);
      CHECK(rec.eval_ == held_set);
      CHECK(result.predictions.size() == held.size());
      for (const auto& p : result.predictions) {
        CHECK(p.fold == k);
        double s = 0;
        for (double v : p.probabilities) s += v;
        CHECK(std::abs(s - 1.0) <= 1e-6);
        CHECK(p.predicted_label == argmax_class(p.probabilities));
      }
      // The best epoch's validation F1 is never beaten later in the log.
      const int best = result.checkpoint.metadata.epoch;
      for (const auto& l : result.log) {
        if (l.epoch > best) CHECK(l.val_weighted_f1 <= result.checkpoint.metadata.best_weighted_f1);
      }
    }
  }

  TEST_CASE("max_epochs=1 runs exactly one epoch") {
    ToyData d;
    build_toy(d, 8, 8);
    auto cfg = toy_config(8);
    cfg.max_epochs = 1;
    cfg.patience = 1;
    const auto folds = make_folds(d.manifest, cfg.folds, cfg.seed);
    const auto r = train_fold(0, folds, d.manifest, d.source, cfg);
    CHECK(r.log.size() == 1);
    CHECK(r.checkpoint.metadata.epoch == 1);
    CHECK(r.checkpoint.metadata.fold == 0);
    CHECK(r.checkpoint.adam.has_value());
  }

  TEST_CASE("cross-validation partitions predictions and is reproducible") {
    ToyData d;
    build_toy(d, 12, 8);
    auto cfg = toy_config(8);
    const auto a = run_cross_validation(d.manifest, d.source, cfg);
    REQUIRE(a.predictions.size() == d.manifest.entries.size());
    for (std::size_t i = 0; i < a.predictions.size(); ++i) {
      CHECK(a.predictions[i].slide_id == d.manifest.entries[i].slide_id);
      CHECK(a.predictions[i].fold == a.folds.fold_of(a.predictions[i].slide_id));
    }
    CHECK(a.checkpoints.size() == static_cast<std::size_t>(cfg.folds));
    cfg.threads = 3;
    const auto b = run_cross_validation(d.manifest, d.source, cfg);
    CHECK(a.predictions == b.predictions);
    CHECK(a.checkpoints[2].params == b.checkpoints[2].params);
  }

  TEST_CASE("run log round-trip") {
    TempDir dir("runlog");
    const std::vector<EpochLog> log{{0, 1, 1.25, 0.5}, {0, 2, 0.75, 0.625}, {1, 1, 1.5, 0.25}};
    save_run_log(log, dir / "log.jsonl");
    const auto back = load_run_log(dir / "log.jsonl");
    REQUIRE(back.size() == 3);
    CHECK(back[1].epoch == 2);
    CHECK(back[1].train_loss == 0.75);
    CHECK(back[2].fold == 1);
  }

  TEST_CASE("missing embeddings are a stage dependency error") {
    TempDir dir("src");
    const auto m = manifest_from({{"A", 0}});
    CHECK(thrown_code([&] { load_embedding_source(m, dir.path(), 64); }) ==
          ErrorCode::kStageDependency);
  }
}
