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

#include "histograde/pipeline.hpp"

#include <map>
#include <memory>
#include <mutex>

#include "histograde/embed.hpp"
#include "histograde/error.hpp"
#include "histograde/parallel.hpp"
#include "histograde/rng.hpp"

namespace histograde {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

namespace {

class Section {
 public:
  Section(const Json& obj, std::string name, std::initializer_list<std::string_view> allowed)
      : obj_(obj), name_(std::move(name)) {
    if (!obj.is_object()) fail(ErrorCode::kConfig, "'" + name_ + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
      bool ok = false;
      for (auto a : allowed) ok = ok || key == a;
      if (!ok) fail(ErrorCode::kConfig, "unknown key '" + path(key) + "'");
    }
  }

  bool has(std::string_view key) const { return obj_.contains(key); }
  const Json& raw(std::string_view key) const { return obj_.at(key); }
  std::string path(std::string_view key) const { return name_.empty() ? std::string(key) : name_ + "." + std::string(key); }

  template <typename T>
  void get(std::string_view key, T& out) const {
    if (!obj_.contains(key)) return;
    const Json& v = obj_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(ErrorCode::kConfig, "'" + path(key) + "' must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(ErrorCode::kConfig, "'" + path(key) + "' must be an integer");
      if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned()) {
        fail(ErrorCode::kConfig, "'" + path(key) + "' must be nonnegative");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(ErrorCode::kConfig, "'" + path(key) + "' must be a number");
    } else {
      if (!v.is_string()) fail(ErrorCode::kConfig, "'" + path(key) + "' must be a string");
    }
    out = v.get<T>();
  }

  template <std::size_t N>
  void get_array(std::string_view key, std::array<double, N>& out) const {
    if (!obj_.contains(key)) return;
    const Json& v = obj_.at(key);
    if (!v.is_array() || v.size() != N) {
      fail(ErrorCode::kConfig, "'" + path(key) + "' must be an array of " + std::to_string(N) + " numbers");
    }
    for (std::size_t i = 0; i < N; ++i) {
      if (!v[i].is_number()) fail(ErrorCode::kConfig, "'" + path(key) + "' must hold numbers");
      out[i] = v[i].get<double>();
    }
  }

 private:
  const Json& obj_;
  std::string name_;
};

const Json& section_or_empty(const Json& doc, std::string_view key) {
  static const Json empty = Json::object();
  return doc.contains(key) ? doc.at(key) : empty;
}

const char* upsampling_name(Upsampling u) { return u == Upsampling::kNearest ? "nearest" : "bilinear"; }
const char* aggregation_name(AttentionAggregation a) {
  return a == AttentionAggregation::kLastLayer ? "last_layer" : "mean_all_layers";
}

}  // namespace

void RunConfig::validate() const {
  require(threads > 0, ErrorCode::kConfig, "threads must be positive");
  try {
    synth.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, std::string("synth: ") + e.what());
  }
  require(extraction.patch_size_px > 0, ErrorCode::kConfig, "preprocess.patch_size_px must be positive");
  require(extraction.target_magnification > 0.0, ErrorCode::kConfig,
          "preprocess.target_magnification must be positive");
  require(extraction.min_tissue >= 0.0 && extraction.min_tissue <= 1.0, ErrorCode::kConfig,
          "preprocess.min_tissue must be in [0, 1]");
  train.validate();
  require(metrics.bootstrap_resamples > 0, ErrorCode::kConfig, "metrics.bootstrap_resamples must be positive");
  require(metrics.alpha > 0.0 && metrics.alpha < 1.0, ErrorCode::kConfig, "metrics.alpha must be in (0, 1)");
  require(!stats.pairs.empty(), ErrorCode::kConfig, "stats.pairs must not be empty");
  require(stats.bins > 0 && stats.detect.min_area > 0 && stats.detect.tolerance >= 0, ErrorCode::kConfig,
          "stats detection parameters out of range");
  viz.overlay.validate();
  require(viz.slides >= 0 && viz.regions_per_slide > 0, ErrorCode::kConfig, "viz counts out of range");
}

RunConfig parse_run_config(const Json& doc) {
  RunConfig cfg;
  const Section top(doc, "", {"seed", "threads", "synth", "preprocess", "embed", "model", "train", "metrics",
                              "stats", "viz"});
  top.get("seed", cfg.seed);
  top.get("threads", cfg.threads);

  const Section synth(section_or_empty(doc, "synth"), "synth",
                      {"n_slides", "class_mix", "slide_px", "tile_size", "base_magnification",
                       "microns_per_pixel", "max_fragments", "background_noise", "palette", "density_profile"});
  SynthConfig& s = cfg.synth;
  synth.get("n_slides", s.n_slides);
  synth.get_array("class_mix", s.class_mix);
  synth.get("slide_px", s.slide_px);
  synth.get("tile_size", s.tile_size);
  synth.get("base_magnification", s.base_magnification);
  synth.get("microns_per_pixel", s.microns_per_pixel);
  synth.get("max_fragments", s.max_fragments);
  synth.get("background_noise", s.background_noise);
  if (synth.has("palette")) s.cell_palette = parse_palette(synth.raw("palette"));
  if (synth.has("density_profile")) {
    const Section dp(synth.raw("density_profile"), "synth.density_profile",
                     {"inactive", "mild", "moderate", "severe"});
    for (int c = 0; c < kNumClasses; ++c) {
      dp.get_array(class_name(c), s.density_profile[static_cast<std::size_t>(c)]);
    }
  }

  const Section pre(section_or_empty(doc, "preprocess"), "preprocess",
                    {"patch_size_px", "target_magnification", "min_tissue", "saturation_threshold",
                     "luminance_threshold"});
  pre.get("patch_size_px", cfg.extraction.patch_size_px);
  pre.get("target_magnification", cfg.extraction.target_magnification);
  pre.get("min_tissue", cfg.extraction.min_tissue);
  pre.get("saturation_threshold", cfg.thresholds.saturation);
  pre.get("luminance_threshold", cfg.thresholds.luminance);

  const Section emb(section_or_empty(doc, "embed"), "embed", {"embedder"});
  std::string embedder = kReferenceEmbedderId;
  emb.get("embedder", embedder);
  if (embedder != kReferenceEmbedderId) {
    fail(ErrorCode::kConfig, "embed.embedder: only '" + std::string(kReferenceEmbedderId) +
                                 "' is built in; import other features as embedding files");
  }

  const Section model(section_or_empty(doc, "model"), "model",
                      {"preset", "input_dim", "d_model", "n_heads", "n_layers", "mlp_ratio", "dropout",
                       "region_side"});
  ModelConfig& m = cfg.train.model;
  std::string preset = "desk";
  model.get("preset", preset);
  if (preset == "desk") {
    m = ModelConfig::desk();
  } else if (preset == "full_scale") {
    m = ModelConfig::full_scale(kReferenceDim);
  } else {
    fail(ErrorCode::kConfig, "model.preset must be 'desk' or 'full_scale'");
  }
  model.get("input_dim", m.input_dim);
  model.get("d_model", m.d_model);
  model.get("n_heads", m.n_heads);
  model.get("n_layers", m.n_layers);
  model.get("mlp_ratio", m.mlp_ratio);
  model.get("dropout", m.dropout);
  model.get("region_side", m.region_side);

  const Section train(section_or_empty(doc, "train"), "train",
                      {"regions_per_iter_train", "regions_per_slide_val", "batch_size", "patience", "max_epochs",
                       "folds", "class_weight_floor", "lr", "beta1", "beta2", "epsilon", "weight_decay"});
  TrainConfig& t = cfg.train;
  train.get("regions_per_iter_train", t.regions_per_iter_train);
  train.get("regions_per_slide_val", t.regions_per_slide_val);
  train.get("batch_size", t.batch_size);
  train.get("patience", t.patience);
  train.get("max_epochs", t.max_epochs);
  train.get("folds", t.folds);
  train.get("class_weight_floor", t.class_weight_floor);
  train.get("lr", t.lr);
  train.get("beta1", t.beta1);
  train.get("beta2", t.beta2);
  train.get("epsilon", t.epsilon);
  train.get("weight_decay", t.weight_decay);

  const Section met(section_or_empty(doc, "metrics"), "metrics",
                    {"bootstrap_resamples", "alpha", "confidence_intervals"});
  met.get("bootstrap_resamples", cfg.metrics.bootstrap_resamples);
  met.get("alpha", cfg.metrics.alpha);
  met.get("confidence_intervals", cfg.metrics.confidence_intervals);

  const Section st(section_or_empty(doc, "stats"), "stats",
                   {"cell_type", "pairs", "tolerance", "min_area", "bins", "cell_counts"});
  std::string cell_type = "neutrophil";
  st.get("cell_type", cell_type);
  const auto type = parse_cell_type(cell_type);
  if (!type) fail(ErrorCode::kConfig, "stats.cell_type: unknown cell type '" + cell_type + "'");
  cfg.stats.cell_type = *type;
  if (st.has("pairs")) {
    std::string pairs;
    st.get("pairs", pairs);
    cfg.stats.pairs = parse_class_pairs(pairs);
  }
  st.get("tolerance", cfg.stats.detect.tolerance);
  st.get("min_area", cfg.stats.detect.min_area);
  st.get("bins", cfg.stats.bins);
  if (st.has("cell_counts")) {
    std::string p;
    st.get("cell_counts", p);
    cfg.stats.cell_counts = p;
  }

  const Section viz(section_or_empty(doc, "viz"), "viz",
                    {"alpha", "upsampling", "aggregation", "slides", "regions_per_slide"});
  viz.get("alpha", cfg.viz.overlay.alpha);
  std::string ups = "bilinear", agg = "last_layer";
  viz.get("upsampling", ups);
  viz.get("aggregation", agg);
  if (ups == "bilinear") {
    cfg.viz.overlay.upsampling = Upsampling::kBilinear;
  } else if (ups == "nearest") {
    cfg.viz.overlay.upsampling = Upsampling::kNearest;
  } else {
    fail(ErrorCode::kConfig, "viz.upsampling must be 'nearest' or 'bilinear'");
  }
  if (agg == "last_layer") {
    cfg.viz.aggregation = AttentionAggregation::kLastLayer;
  } else if (agg == "mean_all_layers") {
    cfg.viz.aggregation = AttentionAggregation::kMeanAllLayers;
  } else {
    fail(ErrorCode::kConfig, "viz.aggregation must be 'last_layer' or 'mean_all_layers'");
  }
  viz.get("slides", cfg.viz.slides);
  viz.get("regions_per_slide", cfg.viz.regions_per_slide);

  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::kConfig, "config file not found: " + path.string());
  Json doc;
  try {
    doc = Json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

Json run_config_to_json(const RunConfig& cfg) {
  Json doc;
  doc["seed"] = cfg.seed;
  doc["threads"] = cfg.threads;
  const SynthConfig& s = cfg.synth;
  Json palette, profile;
  for (int t = 0; t < kNumCellTypes; ++t) {
    const Rgb c = s.cell_palette[static_cast<std::size_t>(t)];
    palette[std::string(cell_type_name(static_cast<CellType>(t)))] = {c.r, c.g, c.b};
  }
  for (int c = 0; c < kNumClasses; ++c) profile[std::string(class_name(c))] = s.density_profile[static_cast<std::size_t>(c)];
  doc["synth"] = {{"n_slides", s.n_slides},
                  {"class_mix", s.class_mix},
                  {"slide_px", s.slide_px},
                  {"tile_size", s.tile_size},
                  {"base_magnification", s.base_magnification},
                  {"microns_per_pixel", s.microns_per_pixel},
                  {"max_fragments", s.max_fragments},
                  {"background_noise", s.background_noise},
                  {"palette", palette},
                  {"density_profile", profile}};
  doc["preprocess"] = {{"patch_size_px", cfg.extraction.patch_size_px},
                       {"target_magnification", cfg.extraction.target_magnification},
                       {"min_tissue", cfg.extraction.min_tissue},
                       {"saturation_threshold", cfg.thresholds.saturation},
                       {"luminance_threshold", cfg.thresholds.luminance}};
  doc["embed"] = {{"embedder", kReferenceEmbedderId}};
  const ModelConfig& m = cfg.train.model;
  doc["model"] = {{"input_dim", m.input_dim}, {"d_model", m.d_model},     {"n_heads", m.n_heads},
                  {"n_layers", m.n_layers},   {"mlp_ratio", m.mlp_ratio}, {"dropout", m.dropout},
                  {"region_side", m.region_side}};
  const TrainConfig& t = cfg.train;
  doc["train"] = {{"regions_per_iter_train", t.regions_per_iter_train},
                  {"regions_per_slide_val", t.regions_per_slide_val},
                  {"batch_size", t.batch_size},
                  {"patience", t.patience},
                  {"max_epochs", t.max_epochs},
                  {"folds", t.folds},
                  {"class_weight_floor", t.class_weight_floor},
                  {"lr", t.lr},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"epsilon", t.epsilon},
                  {"weight_decay", t.weight_decay}};
  doc["metrics"] = {{"bootstrap_resamples", cfg.metrics.bootstrap_resamples},
                    {"alpha", cfg.metrics.alpha},
                    {"confidence_intervals", cfg.metrics.confidence_intervals}};
  std::string pairs;
  for (const auto& p : cfg.stats.pairs) {
    if (!pairs.empty()) pairs += ",";
    pairs += std::string(class_name(p.higher)) + ":" + std::string(class_name(p.lower));
  }
  doc["stats"] = {{"cell_type", std::string(cell_type_name(cfg.stats.cell_type))},
                  {"pairs", pairs},
                  {"tolerance", cfg.stats.detect.tolerance},
                  {"min_area", cfg.stats.detect.min_area},
                  {"bins", cfg.stats.bins}};
  if (cfg.stats.cell_counts) doc["stats"]["cell_counts"] = cfg.stats.cell_counts->string();
  doc["viz"] = {{"alpha", cfg.viz.overlay.alpha},
                {"upsampling", upsampling_name(cfg.viz.overlay.upsampling)},
                {"aggregation", aggregation_name(cfg.viz.aggregation)},
                {"slides", cfg.viz.slides},
                {"regions_per_slide", cfg.viz.regions_per_slide}};
  return doc;
}

std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) { return mix_seed(seed, stage); }

// ---------------------------------------------------------------------------
// Stages

namespace {

const fs::path& need(const fs::path& p, std::string_view producer) {
  if (!fs::exists(p)) {
    fail(ErrorCode::kStageDependency,
         "missing artifact " + p.string() + " (produced by '" + std::string(producer) + "')");
  }
  return p;
}

SlideManifest manifest_of(const fs::path& out) {
  return load_manifest(need(out / "manifest.jsonl", "synth"));
}

fs::path grid_path(const fs::path& out, const std::string& id) { return out / "grids" / (id + ".jsonl"); }
fs::path embedding_path(const fs::path& out, const std::string& id) {
  return out / "embeddings" / (id + ".hge");
}
fs::path checkpoint_path(const fs::path& out, int fold) {
  return out / "train" / ("fold_" + std::to_string(fold) + ".hgc");
}

}  // namespace

void run_synth(const RunConfig& cfg, const fs::path& out) {
  SynthConfig s = cfg.synth;
  s.seed = stage_seed(cfg.seed, "synth");
  fs::create_directories(out);
  generate_dataset(s, out, cfg.threads);
}

void run_preprocess(const RunConfig& cfg, const fs::path& out) {
  const SlideManifest manifest = manifest_of(out);
  const fs::path manifest_path = out / "manifest.jsonl";
  fs::create_directories(out / "grids");
  parallel_for(manifest.entries.size(), cfg.threads, [&](std::size_t i) {
    const SlideEntry& e = manifest.entries[i];
    const auto slide = TiledSlide::open(need(resolve_slide_dir(manifest_path, e), "synth"));
    const TissueMask mask =
        compute_tissue_mask(*slide, nearest_level(slide->info(), 1.25), cfg.thresholds);
    const PatchGrid grid = extract_patch_grid(*slide, mask, e.slide_id, cfg.extraction);
    if (grid.empty()) fail(ErrorCode::kValidation, "slide " + e.slide_id + " has no tissue patches");
    save_patch_grid(grid, grid_path(out, e.slide_id));
  });
}

void run_embed(const RunConfig& cfg, const fs::path& out) {
  const SlideManifest manifest = manifest_of(out);
  const fs::path manifest_path = out / "manifest.jsonl";
  fs::create_directories(out / "embeddings");
  parallel_for(manifest.entries.size(), cfg.threads, [&](std::size_t i) {
    const SlideEntry& e = manifest.entries[i];
    const PatchGrid grid = load_patch_grid(need(grid_path(out, e.slide_id), "preprocess"));
    const auto slide = TiledSlide::open(need(resolve_slide_dir(manifest_path, e), "synth"));
    write_embeddings(embed_slide(*slide, grid), embedding_path(out, e.slide_id));
  });
}

void run_train(const RunConfig& cfg, const fs::path& out) {
  const SlideManifest manifest = manifest_of(out);
  for (const auto& e : manifest.entries) {
    need(grid_path(out, e.slide_id), "preprocess");
    need(embedding_path(out, e.slide_id), "embed");
  }
  auto source = load_embedding_source(manifest, out, cfg.train.model.input_dim);
  TrainConfig t = cfg.train;
  t.seed = stage_seed(cfg.seed, "train");
  t.threads = cfg.threads;
  const CrossValidationResult cv = run_cross_validation(manifest, *source, t);
  fs::create_directories(out / "train");
  save_predictions(cv.predictions, out / "train" / "predictions.jsonl");
  save_run_log(cv.log, out / "train" / "run_log.jsonl");
  for (std::size_t f = 0; f < cv.checkpoints.size(); ++f) {
    save_checkpoint(cv.checkpoints[f], checkpoint_path(out, static_cast<int>(f)));
  }
}

void run_evaluate(const RunConfig& cfg, const fs::path& out) {
  const auto records = load_predictions(need(out / "train" / "predictions.jsonl", "train"));
  const MetricReport report = build_report(records, cfg.metrics, stage_seed(cfg.seed, "evaluate"), cfg.threads);
  fs::create_directories(out / "eval");
  write_text_file(out / "eval" / "metrics.json", report_to_json(report).dump(2) + "\n");
  write_text_file(out / "eval" / "confusion.csv", confusion_csv(confusion_matrix(records)));
}

void run_stats(const RunConfig& cfg, const fs::path& out) {
  CellCountTable table;
  if (cfg.stats.cell_counts) {
    table = load_cell_counts(need(*cfg.stats.cell_counts, "an external cell counter"));
  } else {
    const SlideManifest manifest = manifest_of(out);
    const fs::path manifest_path = out / "manifest.jsonl";
    table.rows.resize(manifest.entries.size());
    parallel_for(manifest.entries.size(), cfg.threads, [&](std::size_t i) {
      const SlideEntry& e = manifest.entries[i];
      const auto slide = TiledSlide::open(need(resolve_slide_dir(manifest_path, e), "synth"));
      table.rows[i] = {e.slide_id, e.class_label, detect_cells(*slide, cfg.synth.cell_palette, cfg.stats.detect)};
    });
  }
  fs::create_directories(out / "stats");
  save_cell_counts(table, out / "stats" / "cell_counts.jsonl");
  write_text_file(out / "stats" / "stats.json",
                  stats_report(table, cfg.stats.cell_type, cfg.stats.pairs).dump(2) + "\n");
  const DistributionExport d = class_distribution_export(table, cfg.stats.cell_type, cfg.stats.bins);
  const std::string stem = std::string(cell_type_name(cfg.stats.cell_type)) + "_violin";
  write_text_file(out / "stats" / (stem + ".json"), distribution_to_json(d).dump(2) + "\n");
  write_text_file(out / "stats" / (stem + ".svg"), distribution_to_svg(d));
}

void run_visualize(const RunConfig& cfg, const fs::path& out) {
  const SlideManifest manifest = manifest_of(out);
  const fs::path manifest_path = out / "manifest.jsonl";
  const auto records = load_predictions(need(out / "train" / "predictions.jsonl", "train"));
  std::map<std::string, int> fold_of;
  for (const auto& r : records) fold_of[r.slide_id] = r.fold;
  const std::size_t n = std::min(manifest.entries.size(), static_cast<std::size_t>(cfg.viz.slides));
  std::map<int, ModelCheckpoint> checkpoints;
  for (std::size_t i = 0; i < n; ++i) {
    const SlideEntry& e = manifest.entries[i];
    const auto it = fold_of.find(e.slide_id);
    if (it == fold_of.end()) fail(ErrorCode::kStageDependency, "no prediction for slide " + e.slide_id);
    if (!checkpoints.count(it->second)) {
      checkpoints.emplace(it->second, load_checkpoint(need(checkpoint_path(out, it->second), "train")));
    }
  }
  fs::create_directories(out / "viz");
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    const SlideEntry& e = manifest.entries[i];
    const ModelCheckpoint& ckpt = checkpoints.at(fold_of.at(e.slide_id));
    const PatchGrid grid = load_patch_grid(need(grid_path(out, e.slide_id), "preprocess"));
    const EmbeddingMatrix emb =
        import_embeddings(need(embedding_path(out, e.slide_id), "embed"), &grid, ckpt.config.input_dim);
    const fs::path slide_dir = need(resolve_slide_dir(manifest_path, e), "synth");
    const auto slide = TiledSlide::open(slide_dir);
    std::optional<std::vector<CellAnnotation>> cells;
    if (fs::exists(slide_dir / "cells.jsonl")) cells = load_annotations(slide_dir / "cells.jsonl");
    const int side = ckpt.config.region_side;
    for (const Region& region : sample_regions(grid, cfg.viz.regions_per_slide, side, 0, SampleMode::kVal)) {
      Graph g(false);
      const RegionEncoding enc = encode_region(g, ckpt.params, ckpt.config, emb, region);
      const AttentionMap map = extract_cls_attention(enc.attention, region, cfg.viz.aggregation);
      export_panel(*slide, grid, region, map, side, cfg.viz.overlay, cells ? &*cells : nullptr, out / "viz");
    }
  });
}

void run_pipeline(const RunConfig& cfg, const fs::path& out) {
  run_synth(cfg, out);
  run_preprocess(cfg, out);
  run_embed(cfg, out);
  run_train(cfg, out);
  run_evaluate(cfg, out);
  run_stats(cfg, out);
  run_visualize(cfg, out);
}

void run_stage(std::string_view stage, const RunConfig& cfg, const fs::path& out) {
  if (stage == "synth") return run_synth(cfg, out);
  if (stage == "preprocess") return run_preprocess(cfg, out);
  if (stage == "embed") return run_embed(cfg, out);
  if (stage == "train") return run_train(cfg, out);
  if (stage == "evaluate") return run_evaluate(cfg, out);
  if (stage == "stats") return run_stats(cfg, out);
  if (stage == "visualize") return run_visualize(cfg, out);
  if (stage == "pipeline") return run_pipeline(cfg, out);
  fail(ErrorCode::kConfig, "unknown stage '" + std::string(stage) + "'");
}

}  // namespace histograde
