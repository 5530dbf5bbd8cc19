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

#include "histograde/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "histograde/error.hpp"
#include "histograde/io.hpp"
#include "histograde/parallel.hpp"
#include "histograde/rng.hpp"

namespace histograde {

int FoldAssignment::fold_of(const std::string& slide_id) const {
  const auto it = slide_fold.find(slide_id);
  if (it == slide_fold.end()) fail(ErrorCode::kValidation, "slide '" + slide_id + "' has no fold");
  return it->second;
}

std::vector<std::string> FoldAssignment::slides_in(const SlideManifest& manifest, int fold) const {
  std::vector<std::string> out;
  for (const auto& e : manifest.entries) {
    if (fold_of(e.slide_id) == fold) out.push_back(e.slide_id);
  }
  return out;
}

FoldAssignment make_folds(const SlideManifest& manifest, int k, std::uint64_t seed) {
  require(!manifest.entries.empty(), ErrorCode::kContract, "cannot fold an empty manifest");
  require(k >= 2, ErrorCode::kConfig, "k must be at least 2");
  struct Patient {
    std::string id;
    std::array<std::int64_t, kNumClasses> counts{};
    std::int64_t slides = 0;
    std::uint64_t tiebreak = 0;
  };
  std::map<std::string, Patient> by_id;
  std::array<double, kNumClasses> target{};
  for (const auto& e : manifest.entries) {
    Patient& p = by_id[e.patient_id];
    p.id = e.patient_id;
    ++p.counts[static_cast<std::size_t>(e.class_label)];
    ++p.slides;
    target[static_cast<std::size_t>(e.class_label)] += 1.0 / k;
  }
  if (static_cast<std::size_t>(k) > by_id.size()) {
    fail(ErrorCode::kConfig, "k=" + std::to_string(k) + " exceeds the number of patients (" +
                                 std::to_string(by_id.size()) + ")");
  }
  std::vector<Patient> patients;
  for (auto& [id, p] : by_id) {
    p.tiebreak = mix_seed(seed, id);
    patients.push_back(p);
  }
  std::sort(patients.begin(), patients.end(), [](const Patient& a, const Patient& b) {
    return std::tie(b.slides, a.tiebreak, a.id) < std::tie(a.slides, b.tiebreak, b.id);
  });

  std::vector<std::array<std::int64_t, kNumClasses>> fold_counts(static_cast<std::size_t>(k));
  std::vector<std::int64_t> fold_slides(static_cast<std::size_t>(k), 0);
  FoldAssignment out;
  out.k = k;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    const Patient& p = patients[i];
    const auto empty = std::count(fold_slides.begin(), fold_slides.end(), std::int64_t{0});
    const bool must_fill = static_cast<std::size_t>(empty) == patients.size() - i;
    int best = -1;
    double best_delta = 0.0;
    for (int f = 0; f < k; ++f) {
      const auto uf = static_cast<std::size_t>(f);
      if (must_fill && fold_slides[uf] != 0) continue;
      double delta = 0.0;
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        const double before = static_cast<double>(fold_counts[uf][c]) - target[c];
        const double after = before + static_cast<double>(p.counts[c]);
        delta += after * after - before * before;
      }
      if (best < 0 || delta < best_delta ||
          (delta == best_delta && fold_slides[uf] < fold_slides[static_cast<std::size_t>(best)])) {
        best = f;
        best_delta = delta;
      }
    }
    const auto ub = static_cast<std::size_t>(best);
    for (std::size_t c = 0; c < kNumClasses; ++c) fold_counts[ub][c] += p.counts[c];
    fold_slides[ub] += p.slides;
    out.patient_fold[p.id] = best;
  }
  for (const auto& e : manifest.entries) out.slide_fold[e.slide_id] = out.patient_fold.at(e.patient_id);
  return out;
}

std::vector<Region> sample_regions(const PatchGrid& grid, int n, int region_side, std::uint64_t seed,
                                   SampleMode mode) {
  require(!grid.empty(), ErrorCode::kContract, "cannot sample regions from an empty patch grid");
  require(n > 0 && region_side > 0, ErrorCode::kParameter,
          "region count and region side must be positive");
  int gw = 0, gh = 0;
  for (const auto& r : grid.records) {
    gw = std::max(gw, r.grid_x + 1);
    gh = std::max(gh, r.grid_y + 1);
  }
  std::vector<int> cell(static_cast<std::size_t>(gw) * static_cast<std::size_t>(gh), -1);
  for (std::size_t i = 0; i < grid.records.size(); ++i) {
    const auto& r = grid.records[i];
    cell[static_cast<std::size_t>(r.grid_y) * static_cast<std::size_t>(gw) +
         static_cast<std::size_t>(r.grid_x)] = static_cast<int>(i);
  }
  std::vector<Region> windows;
  for (int oy = 0; oy <= std::max(0, gh - region_side); ++oy) {
    for (int ox = 0; ox <= std::max(0, gw - region_side); ++ox) {
      Region region;
      region.slide_id = grid.slide_id;
      region.origin = {ox, oy};
      for (int y = oy; y < std::min(gh, oy + region_side); ++y) {
        for (int x = ox; x < std::min(gw, ox + region_side); ++x) {
          const int idx = cell[static_cast<std::size_t>(y) * static_cast<std::size_t>(gw) +
                               static_cast<std::size_t>(x)];
          if (idx < 0) continue;
          region.members.push_back(idx);
          region.relative.push_back({x - ox, y - oy});
        }
      }
      if (!region.members.empty()) windows.push_back(std::move(region));
    }
  }
  const auto count = static_cast<std::size_t>(n);
  if (mode == SampleMode::kVal) {
    if (windows.size() > count) windows.resize(count);
    return windows;
  }
  Rng rng(seed);
  std::vector<Region> out;
  out.reserve(count);
  if (windows.size() >= count) {
    rng.shuffle(windows.begin(), windows.end());
    out.assign(windows.begin(), windows.begin() + static_cast<std::ptrdiff_t>(count));
  } else {
    for (std::size_t i = 0; i < count; ++i) out.push_back(windows[rng.below(windows.size())]);
  }
  return out;
}

ClassWeights compute_class_weights(const std::array<std::int64_t, kNumClasses>& counts,
                                   double floor_weight) {
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::int64_t{0}));
  require(total > 0.0, ErrorCode::kDegenerateSplit, "training split is empty");
  ClassWeights w;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    if (counts[uc] == 0) {
      if (floor_weight <= 0.0) {
        fail(ErrorCode::kDegenerateSplit,
             "class '" + std::string(class_name(c)) + "' is absent from the training split");
      }
      w.w[uc] = floor_weight;
    } else {
      w.w[uc] = total / (kNumClasses * static_cast<double>(counts[uc]));
    }
  }
  return w;
}

ClassWeights compute_class_weights(std::span<const SlideEntry> slides, double floor_weight) {
  std::array<std::int64_t, kNumClasses> counts{};
  for (const auto& s : slides) ++counts[static_cast<std::size_t>(s.class_label)];
  return compute_class_weights(counts, floor_weight);
}

void TrainConfig::validate() const {
  require(regions_per_iter_train > 0 && regions_per_slide_val > 0 && batch_size > 0 &&
              patience > 0 && max_epochs > 0,
          ErrorCode::kConfig, "training counts must be positive");
  require(patience <= max_epochs, ErrorCode::kConfig, "patience must not exceed max_epochs");
  require(folds >= 2, ErrorCode::kConfig, "folds must be at least 2");
  require(lr > 0.0 && beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0 &&
              weight_decay >= 0.0,
          ErrorCode::kConfig, "invalid Adam hyperparameters");
  require(class_weight_floor >= 0.0, ErrorCode::kConfig, "class_weight_floor must be nonnegative");
  require(threads > 0, ErrorCode::kConfig, "threads must be positive");
  model.validate();
}

// ---------------------------------------------------------------------------
// Embedding sources

void InMemoryEmbeddingSource::add(PatchGrid grid, EmbeddingMatrix embeddings) {
  require(grid.slide_id == embeddings.slide_id && grid.size() == embeddings.n_rows,
          ErrorCode::kFormat, "embeddings do not match the patch grid of " + grid.slide_id);
  const std::string id = grid.slide_id;
  entries_[id] = {std::move(grid), std::move(embeddings)};
}

const PatchGrid& InMemoryEmbeddingSource::grid(const std::string& slide_id, Access) {
  const auto it = entries_.find(slide_id);
  if (it == entries_.end()) fail(ErrorCode::kStageDependency, "no patch grid for slide " + slide_id);
  return it->second.first;
}

const EmbeddingMatrix& InMemoryEmbeddingSource::embeddings(const std::string& slide_id, Access) {
  const auto it = entries_.find(slide_id);
  if (it == entries_.end()) fail(ErrorCode::kStageDependency, "no embeddings for slide " + slide_id);
  return it->second.second;
}

std::unique_ptr<InMemoryEmbeddingSource> load_embedding_source(const SlideManifest& manifest,
                                                               const std::filesystem::path& root,
                                                               int expected_dim) {
  auto source = std::make_unique<InMemoryEmbeddingSource>();
  for (const auto& e : manifest.entries) {
    const auto grid_path = root / "grids" / (e.slide_id + ".jsonl");
    const auto emb_path = root / "embeddings" / (e.slide_id + ".hge");
    for (const auto& p : {grid_path, emb_path}) {
      if (!std::filesystem::exists(p)) {
        fail(ErrorCode::kStageDependency, "missing artifact " + p.string());
      }
    }
    PatchGrid grid = load_patch_grid(grid_path);
    EmbeddingMatrix m = import_embeddings(emb_path, &grid, expected_dim);
    source->add(std::move(grid), std::move(m));
  }
  return source;
}

// ---------------------------------------------------------------------------
// Early stopping

EarlyStopping::EarlyStopping(int patience, int max_epochs)
    : patience_(patience), max_epochs_(max_epochs) {
  require(patience > 0 && max_epochs > 0, ErrorCode::kConfig,
          "patience and max_epochs must be positive");
}

bool EarlyStopping::observe(int epoch, double metric) {
  if (best_epoch_ == 0 || metric > best_metric_) {
    best_epoch_ = epoch;
    best_metric_ = metric;
    return true;
  }
  return false;
}

bool EarlyStopping::should_stop(int epoch) const {
  return epoch >= max_epochs_ || epoch - best_epoch_ >= patience_;
}

int run_epochs(int patience, int max_epochs, const std::function<double(int)>& epoch_fn,
               const std::function<void(int)>& on_best) {
  EarlyStopping stopper(patience, max_epochs);
  for (int epoch = 1;; ++epoch) {
    if (stopper.observe(epoch, epoch_fn(epoch)) && on_best) on_best(epoch);
    if (stopper.should_stop(epoch)) return epoch;
  }
}

// ---------------------------------------------------------------------------
// Training

PredictionRecord predict_slide(const Parameters& params, const ModelConfig& model,
                               const SlideEntry& entry, EmbeddingSource& source, int n_regions,
                               int fold) {
  const PatchGrid& grid = source.grid(entry.slide_id, Access::kEval);
  const EmbeddingMatrix& emb = source.embeddings(entry.slide_id, Access::kEval);
  const auto regions = sample_regions(grid, n_regions, model.region_side, 0, SampleMode::kVal);
  const auto probs = softmax_probabilities(predict_logits(params, model, emb, regions));
  PredictionRecord rec;
  rec.slide_id = entry.slide_id;
  rec.patient_id = entry.patient_id;
  rec.true_label = entry.class_label;
  std::copy(probs.begin(), probs.end(), rec.probabilities.begin());
  rec.predicted_label = argmax_class(rec.probabilities);
  rec.fold = fold;
  return rec;
}

namespace {

bool all_finite(const Gradients& grads) {
  for (const auto& t : grads) {
    for (double v : t.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace

FoldResult train_fold(int fold, const FoldAssignment& folds, const SlideManifest& manifest,
                      EmbeddingSource& source, const TrainConfig& cfg) {
  cfg.validate();
  require(fold >= 0 && fold < folds.k, ErrorCode::kParameter, "fold index out of range");
  std::vector<const SlideEntry*> train, held_out;
  std::vector<SlideEntry> train_entries;
  for (const auto& e : manifest.entries) {
    if (folds.fold_of(e.slide_id) == fold) {
      held_out.push_back(&e);
    } else {
      train.push_back(&e);
      train_entries.push_back(e);
    }
  }
  if (train.empty() || held_out.empty()) {
    fail(ErrorCode::kDegenerateSplit, "fold " + std::to_string(fold) + " has an empty split");
  }
  const ClassWeights weights = compute_class_weights(train_entries, cfg.class_weight_floor);
  const std::uint64_t fold_seed = cfg.seed + static_cast<std::uint64_t>(fold);
  const ModelConfig& model = cfg.model;

  Parameters params = init_parameters(model, fold_seed);
  AdamState adam;
  adam.lr = cfg.lr;
  adam.beta1 = cfg.beta1;
  adam.beta2 = cfg.beta2;
  adam.epsilon = cfg.epsilon;
  adam.weight_decay = cfg.weight_decay;
  adam.init(params);

  FoldResult result;
  Parameters best_params = params;
  AdamState best_adam = adam;
  std::vector<PredictionRecord> current;
  std::uint64_t slide_counter = 0;

  auto epoch_fn = [&](int epoch) -> double {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(mix_seed(fold_seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0, weight_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t b = end - start;
      double batch_weight = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        batch_weight += weights.w[static_cast<std::size_t>(train[order[i]]->class_label)];
      }
      std::vector<Gradients> grads(b);
      std::vector<double> losses(b);
      const std::uint64_t base = slide_counter;
      parallel_for(b, cfg.threads, [&](std::size_t j) {
        const SlideEntry& e = *train[order[start + j]];
        const std::uint64_t key = mix_seed(fold_seed, base + j);
        const auto regions = sample_regions(source.grid(e.slide_id, Access::kTrain),
                                            cfg.regions_per_iter_train, model.region_side,
                                            mix_seed(key, "regions"), SampleMode::kTrain);
        const EmbeddingMatrix& emb = source.embeddings(e.slide_id, Access::kTrain);
        Graph g(true, mix_seed(key, "dropout"), static_cast<std::uint64_t>(epoch));
        std::vector<Var> cls;
        for (const auto& r : regions) cls.push_back(encode_region(g, params, model, emb, r).cls);
        const Var logits = fuse_and_classify(g, params, model, cls);
        const int label = e.class_label;
        const double w = weights.w[static_cast<std::size_t>(label)];
        const Var loss = g.scale(g.weighted_cross_entropy(logits, std::span<const int>(&label, 1), weights.w),
                                 w / batch_weight);
        g.backward(loss);
        grads[j] = g.parameter_gradients(params);
        losses[j] = g.value(loss).data[0];
      });
      slide_counter += b;
      Gradients total = zero_gradients(params);
      for (std::size_t j = 0; j < b; ++j) {
        accumulate(total, grads[j]);
        loss_sum += losses[j] * batch_weight;
      }
      weight_sum += batch_weight;
      if (!all_finite(total)) {
        fail(ErrorCode::kTrainingDiverged, "non-finite gradient in fold " + std::to_string(fold) +
                                                " at epoch " + std::to_string(epoch));
      }
      adam_step(params, total, adam);
    }
    const double train_loss = loss_sum / weight_sum;
    if (!std::isfinite(train_loss)) {
      fail(ErrorCode::kTrainingDiverged, "non-finite loss in fold " + std::to_string(fold) +
                                             " at epoch " + std::to_string(epoch));
    }
    current.assign(held_out.size(), PredictionRecord{});
    parallel_for(held_out.size(), cfg.threads, [&](std::size_t i) {
      current[i] = predict_slide(params, model, *held_out[i], source, cfg.regions_per_slide_val, fold);
    });
    const double f1 = weighted_f1(current);
    result.log.push_back({fold, epoch, train_loss, f1});
    return f1;
  };
  auto on_best = [&](int epoch) {
    best_params = params;
    best_adam = adam;
    result.predictions = current;
    result.checkpoint.metadata = {fold, epoch, result.log.back().val_weighted_f1};
  };

  try {
    run_epochs(cfg.patience, cfg.max_epochs, epoch_fn, on_best);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kContract && std::string_view(e.what()).find("non-finite") != std::string_view::npos) {
      fail(ErrorCode::kTrainingDiverged, "fold " + std::to_string(fold) + " at epoch " +
                                             std::to_string(result.log.size() + 1) + ": " + e.what());
    }
    throw;
  }
  result.checkpoint.config = model;
  result.checkpoint.params = std::move(best_params);
  result.checkpoint.adam = std::move(best_adam);
  return result;
}

CrossValidationResult run_cross_validation(const SlideManifest& manifest, EmbeddingSource& source,
                                           const TrainConfig& cfg) {
  cfg.validate();
  CrossValidationResult out;
  out.folds = make_folds(manifest, cfg.folds, cfg.seed);
  std::vector<FoldResult> results(static_cast<std::size_t>(cfg.folds));
  // Folds run in parallel when threads allow; each fold then trains single-threaded.
  const int fold_threads = std::min(cfg.threads, cfg.folds);
  TrainConfig inner = cfg;
  inner.threads = fold_threads > 1 ? std::max(1, cfg.threads / fold_threads) : cfg.threads;
  parallel_for(results.size(), fold_threads, [&](std::size_t f) {
    results[f] = train_fold(static_cast<int>(f), out.folds, manifest, source, inner);
  });
  std::map<std::string, PredictionRecord> by_slide;
  for (auto& r : results) {
    for (auto& p : r.predictions) by_slide[p.slide_id] = p;
    out.checkpoints.push_back(std::move(r.checkpoint));
    out.log.insert(out.log.end(), r.log.begin(), r.log.end());
  }
  for (const auto& e : manifest.entries) out.predictions.push_back(by_slide.at(e.slide_id));
  return out;
}

void save_run_log(std::span<const EpochLog> log, const std::filesystem::path& path) {
  std::string text;
  for (const auto& e : log) {
    Json obj;
    obj["fold"] = e.fold;
    obj["epoch"] = e.epoch;
    obj["train_loss"] = e.train_loss;
    obj["val_weighted_f1"] = e.val_weighted_f1;
    text += obj.dump() + "\n";
  }
  write_text_file(path, text);
}

std::vector<EpochLog> load_run_log(const std::filesystem::path& path) {
  std::vector<EpochLog> out;
  for_each_jsonl(path, [&](const Json& obj, int line) {
    json_only_fields(obj, {"fold", "epoch", "train_loss", "val_weighted_f1"}, line);
    EpochLog e;
    e.fold = json_field(obj, "fold", line).get<int>();
    e.epoch = json_field(obj, "epoch", line).get<int>();
    e.train_loss = json_field(obj, "train_loss", line).get<double>();
    e.val_weighted_f1 = json_field(obj, "val_weighted_f1", line).get<double>();
    out.push_back(e);
  });
  return out;
}

}  // namespace histograde
