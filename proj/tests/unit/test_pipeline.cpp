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

#include <map>
#include <string>

#include "doctest.h"
#include "histograde/io.hpp"
#include "histograde/pipeline.hpp"
#include "test_util.hpp"

using namespace histograde;
using histograde::testing::TempDir;
using histograde::testing::thrown_code;

namespace {

Json tiny_doc() {
  return Json::parse(R"({
    "seed": 3,
    "synth": {"n_slides": 16, "slide_px": 1024},
    "model": {"d_model": 16, "n_heads": 2, "n_layers": 1, "region_side": 2},
    "train": {"max_epochs": 2, "patience": 1, "folds": 2, "regions_per_slide_val": 4,
              "batch_size": 4, "lr": 0.001, "class_weight_floor": 0.5},
    "metrics": {"bootstrap_resamples": 50},
    "viz": {"slides": 1}
  })");
}

std::map<std::string, std::vector<std::uint8_t>> snapshot(const std::filesystem::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = read_file_bytes(e.path());
  }
  return out;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config parsing is strict") {
    CHECK_NOTHROW(parse_run_config(Json::object()));
    CHECK(thrown_code([] { parse_run_config(Json::parse(R"({"seeed": 1})")); }) == ErrorCode::kConfig);
    CHECK(thrown_code([] { parse_run_config(Json::parse(R"({"train": {"lr": 0.1, "momentum": 0.9}})")); }) ==
          ErrorCode::kConfig);
    CHECK(thrown_code([] { parse_run_config(Json::parse(R"({"model": {"preset": "huge"}})")); }) ==
          ErrorCode::kConfig);
    CHECK(thrown_code([] { parse_run_config(Json::parse(R"({"train": {"patience": 50}})")); }) ==
          ErrorCode::kConfig);
    CHECK(thrown_code([] { parse_run_config(Json::parse(R"({"viz": {"upsampling": "cubic"}})")); }) ==
          ErrorCode::kConfig);

    const RunConfig big = parse_run_config(Json::parse(R"({"model": {"preset": "full_scale"}})"));
    CHECK(big.train.model.n_heads == 8);
    CHECK(big.train.model.n_layers == 12);

    const RunConfig cfg = parse_run_config(tiny_doc());
    const RunConfig again = parse_run_config(run_config_to_json(cfg));
    CHECK(run_config_to_json(again).dump() == run_config_to_json(cfg).dump());
    CHECK(again.train.model == cfg.train.model);
  }

  TEST_CASE("stage seeds are stable and distinct") {
    CHECK(stage_seed(1, "train") == stage_seed(1, "train"));
    CHECK(stage_seed(1, "train") != stage_seed(1, "synth"));
    CHECK(stage_seed(1, "train") != stage_seed(2, "train"));
  }

  TEST_CASE("stages name their missing inputs") {
    TempDir dir("deps");
    const RunConfig cfg = parse_run_config(tiny_doc());
    try {
      run_evaluate(cfg, dir.path());
      FAIL("evaluate ran without predictions");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kStageDependency);
      CHECK(std::string(e.what()).find("predictions.jsonl") != std::string::npos);
    }
    CHECK(thrown_code([&] { run_preprocess(cfg, dir.path()); }) == ErrorCode::kStageDependency);
    CHECK(thrown_code([&] { run_train(cfg, dir.path()); }) == ErrorCode::kStageDependency);
    CHECK(thrown_code([&] { run_stage("bogus", cfg, dir.path()); }) == ErrorCode::kConfig);
  }

  TEST_CASE("pipeline rerun is byte-identical") {
    TempDir a("pipe_a"), b("pipe_b");
    const RunConfig cfg = parse_run_config(tiny_doc());
    run_pipeline(cfg, a.path());
    run_pipeline(cfg, b.path());
    const auto sa = snapshot(a.path());
    const auto sb = snapshot(b.path());
    CHECK(sa.size() == sb.size());
    for (const auto& [name, bytes] : sa) {
      INFO(name);
      REQUIRE(sb.count(name) == 1);
      CHECK(bytes == sb.at(name));
    }
    for (const char* f : {"manifest.jsonl", "train/predictions.jsonl", "eval/metrics.json",
                          "eval/confusion.csv", "stats/stats.json", "stats/cell_counts.jsonl"}) {
      CHECK(sa.count(f) == 1);
    }
    const Json stats = Json::parse(read_text_file(a / "stats/stats.json"));
    CHECK(stats.at("results").size() == 3);
  }
}
