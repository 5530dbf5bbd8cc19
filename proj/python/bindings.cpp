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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <string>
#include <vector>

#include "histograde/cytostats.hpp"
#include "histograde/embed.hpp"
#include "histograde/error.hpp"
#include "histograde/metrics.hpp"
#include "histograde/pipeline.hpp"
#include "histograde/trainer.hpp"
#include "histograde/vit.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace histograde;

namespace {

RasterImage to_raster(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw Error(ErrorCode::kShape, "image must be an H x W x 3 uint8 array");
  RasterImage img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::memcpy(img.bytes().data(), a.data(), img.bytes().size());
  return img;
}

std::vector<PredictionRecord> records_from(const std::vector<int>& labels,
                                           const py::array_t<double, py::array::c_style | py::array::forcecast>& probs) {
  if (probs.ndim() != 2 || probs.shape(1) != kNumClasses ||
      static_cast<std::size_t>(probs.shape(0)) != labels.size()) {
    throw Error(ErrorCode::kShape, "probabilities must be N x 4 with one row per label");
  }
  std::vector<PredictionRecord> out(labels.size());
  auto p = probs.unchecked<2>();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& r = out[i];
    r.slide_id = std::to_string(i);
    r.true_label = labels[i];
    if (r.true_label < 0 || r.true_label >= kNumClasses) throw Error(ErrorCode::kContract, "labels must be in 0..3");
    for (int c = 0; c < kNumClasses; ++c) r.probabilities[static_cast<std::size_t>(c)] = p(static_cast<py::ssize_t>(i), c);
    r.predicted_label = argmax_class(r.probabilities);
  }
  return out;
}

RunConfig config_from(const std::string& json_text) {
  return parse_run_config(json_text.empty() ? Json::object() : Json::parse(json_text));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "histograde native core";

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result([&]() { return py::exception<Error>(m, "HistogradeError"); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const std::string message = std::string(error_code_name(e.code())) + ": " + e.what();
      py::set_error(error_type.get_stored(), message.c_str());
    }
  });

  m.def("resolve_config", [](const std::string& text) { return run_config_to_json(config_from(text)).dump(); },
        py::arg("config_json") = "");
  m.def("run_stage",
        [](const std::string& stage, const std::string& text, const fs::path& out) {
          const RunConfig cfg = config_from(text);
          py::gil_scoped_release release;
          run_stage(stage, cfg, out);
        },
        py::arg("stage"), py::arg("config_json"), py::arg("out"));
  m.def("run_pipeline",
        [](const std::string& text, const fs::path& out) {
          const RunConfig cfg = config_from(text);
          py::gil_scoped_release release;
          run_pipeline(cfg, out);
        },
        py::arg("config_json"), py::arg("out"));

  m.def("embed_patch",
        [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& patch) {
          const RasterImage img = to_raster(patch);
          const auto f = embed_patch_reference(img, img.width());
          return py::array_t<double>(static_cast<py::ssize_t>(f.size()), f.data());
        },
        py::arg("patch"));
  m.def("read_embeddings",
        [](const fs::path& path) {
          const EmbeddingMatrix e = import_embeddings(path);
          py::array_t<float> out({static_cast<py::ssize_t>(e.n_rows), static_cast<py::ssize_t>(e.dim)});
          std::memcpy(out.mutable_data(), e.values.data(), e.values.size() * sizeof(float));
          return py::make_tuple(e.slide_id, e.embedder_id, out);
        },
        py::arg("path"));

  m.def("positional_encoding",
        [](const std::vector<std::pair<int, int>>& coords, int d_model) {
          std::vector<GridCoord> c;
          for (const auto& [x, y] : coords) c.push_back({x, y});
          const Tensor t = positional_encode(c, d_model);
          py::array_t<double> out({t.rows(), t.cols()});
          std::memcpy(out.mutable_data(), t.data.data(), t.data.size() * sizeof(double));
          return out;
        },
        py::arg("coords"), py::arg("d_model"));

  m.def("make_folds",
        [](const fs::path& manifest, int k, std::uint64_t seed) {
          return make_folds(load_manifest(manifest), k, seed).slide_fold;
        },
        py::arg("manifest"), py::arg("k") = 5, py::arg("seed") = 0);

  m.def("mann_whitney",
        [](const std::vector<double>& x, const std::vector<double>& y) {
          return mann_whitney_to_json(mann_whitney_one_sided(x, y)).dump();
        },
        py::arg("x"), py::arg("y"));
  m.def("probability_of_superiority", &probability_of_superiority, py::arg("u"), py::arg("n1"), py::arg("n2"));
  m.def("rank_biserial", &rank_biserial, py::arg("u"), py::arg("n1"), py::arg("n2"));

  m.def("roc_auc",
        [](const std::vector<double>& scores, const std::vector<int>& labels) { return roc_auc(scores, labels); },
        py::arg("scores"), py::arg("labels"));
  m.def("metric_report",
        [](const std::vector<int>& labels, const py::array_t<double, py::array::c_style | py::array::forcecast>& probs,
           int resamples, double alpha, std::uint64_t seed, int threads) {
          const auto records = records_from(labels, probs);
          MetricsParams params;
          params.bootstrap_resamples = resamples;
          params.alpha = alpha;
          params.confidence_intervals = resamples > 0;
          py::gil_scoped_release release;
          return report_to_json(build_report(records, params, seed, threads)).dump();
        },
        py::arg("labels"), py::arg("probabilities"), py::arg("resamples") = 1000, py::arg("alpha") = 0.05,
        py::arg("seed") = 0, py::arg("threads") = 1);
}
