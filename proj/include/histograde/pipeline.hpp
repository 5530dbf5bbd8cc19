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

/// @file pipeline.hpp
/// @brief Run configuration and the stage drivers behind the CLI.
///
/// Output layout under the run directory:
///   manifest.jsonl, slides/<id>/          synth
///   grids/<id>.jsonl                       preprocess
///   embeddings/<id>.hge                    embed
///   train/{predictions,run_log}.jsonl,
///   train/fold_<k>.hgc                     train
///   eval/metrics.json, eval/confusion.csv  evaluate
///   stats/cell_counts.jsonl, stats/stats.json,
///   stats/<type>_violin.{json,svg}         stats
///   viz/*.png                              visualize

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "histograde/attnviz.hpp"
#include "histograde/cytostats.hpp"
#include "histograde/io.hpp"
#include "histograde/metrics.hpp"
#include "histograde/preprocess.hpp"
#include "histograde/slide.hpp"
#include "histograde/trainer.hpp"
#include "histograde/vit.hpp"

namespace histograde {

struct StatsParams {
  CellType cell_type = CellType::kNeutrophil;
  std::vector<ClassPair> pairs = adjacent_class_pairs();
  DetectParams detect;
  int bins = 32;
  /// When set, counts are read from this JSONL instead of detected.
  std::optional<std::filesystem::path> cell_counts;
};

struct VizParams {
  OverlayConfig overlay;
  AttentionAggregation aggregation = AttentionAggregation::kLastLayer;
  int slides = 2;             // first slides of the manifest
  int regions_per_slide = 1;  // evaluation-order regions
};

struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  SynthConfig synth;
  ExtractionParams extraction;
  TissueThresholds thresholds;
  TrainConfig train;  // includes the model
  MetricsParams metrics;
  StatsParams stats;
  VizParams viz;

  void validate() const;
};

/// Strict JSON schema: unknown keys anywhere raise kConfig.
RunConfig parse_run_config(const Json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
Json run_config_to_json(const RunConfig& cfg);

/// Stage seed from the global seed and the stage name.
std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage);

inline const char* const kStageNames[] = {"synth", "preprocess", "embed", "train",
                                          "evaluate", "stats", "visualize"};

void run_synth(const RunConfig& cfg, const std::filesystem::path& out);
void run_preprocess(const RunConfig& cfg, const std::filesystem::path& out);
void run_embed(const RunConfig& cfg, const std::filesystem::path& out);
void run_train(const RunConfig& cfg, const std::filesystem::path& out);
void run_evaluate(const RunConfig& cfg, const std::filesystem::path& out);
void run_stats(const RunConfig& cfg, const std::filesystem::path& out);
void run_visualize(const RunConfig& cfg, const std::filesystem::path& out);
/// All stages in order.
void run_pipeline(const RunConfig& cfg, const std::filesystem::path& out);
/// Dispatch by stage name ("pipeline" runs everything); unknown names raise kConfig.
void run_stage(std::string_view stage, const RunConfig& cfg, const std::filesystem::path& out);

}  // namespace histograde
