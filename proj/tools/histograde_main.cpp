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

// histograde: command-line driver for the slide grading pipeline.
//
//   histograde <stage> [--config run.json] [--seed N] [--threads N] [--out DIR]
//
// Stages: synth, preprocess, embed, train, evaluate, stats, visualize,
// pipeline (all of them in order). `config` prints the resolved configuration.
// Failures print one JSON object to stderr and exit nonzero.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <utility>

#include "CLI11.hpp"
#include "histograde/error.hpp"
#include "histograde/pipeline.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out = "run";
  std::string pairs;
  std::string aggregation;
};

void add_common(CLI::App* cmd, Options& opt) {
  cmd->add_option("--config", opt.config, "JSON run configuration");
  cmd->add_option("--seed", opt.seed, "Global seed (overrides the config)");
  cmd->add_option("--threads", opt.threads, "Worker thread cap")->check(CLI::PositiveNumber);
  cmd->add_option("--out", opt.out, "Run directory")->capture_default_str();
}

histograde::RunConfig resolve(const Options& opt) {
  histograde::RunConfig cfg =
      opt.config.empty() ? histograde::parse_run_config(histograde::Json::object())
                         : histograde::load_run_config(opt.config);
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.threads) cfg.threads = *opt.threads;
  if (!opt.pairs.empty()) cfg.stats.pairs = histograde::parse_class_pairs(opt.pairs);
  if (opt.aggregation == "last_layer") {
    cfg.viz.aggregation = histograde::AttentionAggregation::kLastLayer;
  } else if (opt.aggregation == "mean_all_layers") {
    cfg.viz.aggregation = histograde::AttentionAggregation::kMeanAllLayers;
  }
  cfg.validate();
  return cfg;
}

int report_error(std::string_view stage, std::string_view code, std::string_view message) {
  histograde::Json err;
  err["error"] = code;
  err["stage"] = stage;
  err["message"] = message;
  std::cerr << err.dump() << "\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slide-level activity grading on patch embeddings"};
  app.require_subcommand(1);
  Options opt;
  std::string stage;

  const std::pair<const char*, const char*> commands[] = {
      {"synth", "Generate synthetic slides and the manifest"},
      {"preprocess", "Tissue masking and patch grids"},
      {"embed", "Patch embeddings per slide"},
      {"train", "Cross-validated training"},
      {"evaluate", "Out-of-fold metrics with bootstrap intervals"},
      {"visualize", "Attention heatmaps and panels"},
      {"pipeline", "Run every stage in order"},
      {"config", "Print the resolved configuration"},
  };
  for (const auto& [name, about] : commands) {
    auto* cmd = app.add_subcommand(name, about);
    add_common(cmd, opt);
    cmd->callback([&stage, name] { stage = name; });
    if (std::string_view(name) == "visualize" || std::string_view(name) == "pipeline") {
      cmd->add_option("--aggregation", opt.aggregation, "Attention aggregation")
          ->check(CLI::IsMember({"last_layer", "mean_all_layers"}));
    }
  }
  auto* stats = app.add_subcommand("stats", "Cell-density rank tests between grades");
  add_common(stats, opt);
  stats->add_option("--pairs", opt.pairs, "Comparisons as higher:lower,...");
  stats->callback([&stage] { stage = "stats"; });

  CLI11_PARSE(app, argc, argv);

  try {
    const histograde::RunConfig cfg = resolve(opt);
    if (stage == "config") {
      std::cout << histograde::run_config_to_json(cfg).dump(2) << "\n";
      return 0;
    }
    const auto start = std::chrono::steady_clock::now();
    histograde::run_stage(stage, cfg, opt.out);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "%s: done in %.1f s\n", stage.c_str(), secs);
    return 0;
  } catch (const histograde::Error& e) {
    return report_error(stage, histograde::error_code_name(e.code()), e.what());
  } catch (const std::exception& e) {
    return report_error(stage, "internal", e.what());
  }
}
