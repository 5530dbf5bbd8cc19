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

/// @file trainer.hpp
/// @brief Patient-grouped cross-validation and region-sampled training.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "histograde/autodiff.hpp"
#include "histograde/embed.hpp"
#include "histograde/metrics.hpp"
#include "histograde/preprocess.hpp"
#include "histograde/slide.hpp"
#include "histograde/vit.hpp"

namespace histograde {

struct FoldAssignment {
  int k = 5;
  std::map<std::string, int> slide_fold;
  std::map<std::string, int> patient_fold;

  int fold_of(const std::string& slide_id) const;
  /// Slide ids of `fold` in manifest order.
  std::vector<std::string> slides_in(const SlideManifest& manifest, int fold) const;
};

/// Patients go, largest first, to the fold that least increases the squared
/// deviation of per-class counts from their per-fold targets. Ordering among
/// equal-size patients is a hash of (seed, patient_id), so assignment does
/// not depend on manifest order.
FoldAssignment make_folds(const SlideManifest& manifest, int k = 5, std::uint64_t seed = 0);

enum class SampleMode { kTrain, kVal };

/// Square windows of region_side cells whose origin lies in the grid's
/// bounding box and which hold at least one retained patch.
std::vector<Region> sample_regions(const PatchGrid& grid, int n, int region_side, std::uint64_t seed,
                                   SampleMode mode);

/// w_c = N / (C n_c). A class with n_c = 0 raises kDegenerateSplit unless
/// `floor_weight` > 0, which is then used for it.
ClassWeights compute_class_weights(std::span<const SlideEntry> slides, double floor_weight = 0.0);
ClassWeights compute_class_weights(const std::array<std::int64_t, kNumClasses>& counts,
                                   double floor_weight = 0.0);

struct TrainConfig {
  int regions_per_iter_train = 4;
  int regions_per_slide_val = 175;
  int batch_size = 16;
  int patience = 10;
  int max_epochs = 40;
  int folds = 5;
  std::uint64_t seed = 1;
  double class_weight_floor = 0.0;
  ModelConfig model;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  int threads = 1;

  int region_side() const { return model.region_side; }
  void validate() const;
};

/// Read access to per-slide patch grids and embeddings. The tag tells the
/// source whether the read feeds training or evaluation.
enum class Access { kTrain, kEval };

class EmbeddingSource {
 public:
  virtual ~EmbeddingSource() = default;
  virtual const PatchGrid& grid(const std::string& slide_id, Access access) = 0;
  virtual const EmbeddingMatrix& embeddings(const std::string& slide_id, Access access) = 0;
};

class InMemoryEmbeddingSource : public EmbeddingSource {
 public:
  void add(PatchGrid grid, EmbeddingMatrix embeddings);
  const PatchGrid& grid(const std::string& slide_id, Access access) override;
  const EmbeddingMatrix& embeddings(const std::string& slide_id, Access access) override;

 private:
  std::map<std::string, std::pair<PatchGrid, EmbeddingMatrix>> entries_;
};

/// Loads everything from `grids/<id>.jsonl` and `embeddings/<id>.hge` under a
/// root directory up front; throws kStageDependency naming the first missing file.
std::unique_ptr<InMemoryEmbeddingSource> load_embedding_source(const SlideManifest& manifest,
                                                               const std::filesystem::path& root,
                                                               int expected_dim);

struct EpochLog {
  int fold = 0;
  int epoch = 0;
  double train_loss = 0.0;
  double val_weighted_f1 = 0.0;
};

/// Tracks the best metric and decides when to stop. Only strict improvement
/// resets the patience counter. Epochs are 1-based.
class EarlyStopping {
 public:
  EarlyStopping(int patience, int max_epochs);
  /// Returns true when `metric` is a new best.
  bool observe(int epoch, double metric);
  bool should_stop(int epoch) const;
  int best_epoch() const { return best_epoch_; }
  double best_metric() const { return best_metric_; }

 private:
  int patience_;
  int max_epochs_;
  int best_epoch_ = 0;
  double best_metric_ = 0.0;
};

/// Runs `epoch_fn(epoch)` -> validation metric until EarlyStopping says stop;
/// `on_best(epoch)` fires on each new best. Returns the number of epochs run.
int run_epochs(int patience, int max_epochs, const std::function<double(int)>& epoch_fn,
               const std::function<void(int)>& on_best);

struct FoldResult {
  ModelCheckpoint checkpoint;
  std::vector<PredictionRecord> predictions;
  std::vector<EpochLog> log;
};

/// Evaluation-mode prediction for one slide from up to regions_per_slide_val regions.
PredictionRecord predict_slide(const Parameters& params, const ModelConfig& model,
                               const SlideEntry& entry, EmbeddingSource& source, int n_regions,
                               int fold);

/// Fold seed is cfg.seed + fold.
FoldResult train_fold(int fold, const FoldAssignment& folds, const SlideManifest& manifest,
                      EmbeddingSource& source, const TrainConfig& cfg);

struct CrossValidationResult {
  FoldAssignment folds;
  std::vector<PredictionRecord> predictions;  // manifest order
  std::vector<ModelCheckpoint> checkpoints;   // by fold
  std::vector<EpochLog> log;                  // by fold, then epoch
};

CrossValidationResult run_cross_validation(const SlideManifest& manifest, EmbeddingSource& source,
                                           const TrainConfig& cfg);

/// JSONL: {fold, epoch, train_loss, val_weighted_f1}.
void save_run_log(std::span<const EpochLog> log, const std::filesystem::path& path);
std::vector<EpochLog> load_run_log(const std::filesystem::path& path);

}  // namespace histograde
