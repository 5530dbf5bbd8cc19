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

/// @file vit.hpp
/// @brief Region encoder and slide classifier.
///
/// A region is a square window of the patch grid. Its patch embeddings are
/// projected to d_model, summed with a fixed 2D sinusoidal encoding of their
/// window-relative coordinates, and prefixed with a learned CLS token. The
/// sequence runs through pre-norm transformer blocks; the final CLS state,
/// layer-normalised, is the region vector. Region vectors of one slide are
/// averaged and a linear head produces the class logits.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "histograde/autodiff.hpp"
#include "histograde/embed.hpp"

namespace histograde {

struct ModelConfig {
  int input_dim = kReferenceDim;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  double mlp_ratio = 2.0;
  double dropout = 0.1;
  int n_classes = 4;
  int region_side = 4;

  /// 4 heads, 2 layers, d_model 64.
  static ModelConfig desk(int input_dim = kReferenceDim);
  /// 8 heads, 12 layers, dropout 0.1, on 512-d features.
  static ModelConfig full_scale(int input_dim = 512);

  int head_dim() const { return d_model / n_heads; }
  int mlp_hidden() const;
  /// Throws kConfig on any violated invariant.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Xavier-uniform weights, zero biases, unit LayerNorm gains, CLS ~ N(0, 0.02^2).
Parameters init_parameters(const ModelConfig& cfg, std::uint64_t seed);

/// Every parameter the config implies, with its shape.
std::vector<std::pair<std::string, std::vector<int>>> parameter_layout(const ModelConfig& cfg);

/// Throws kShape when a parameter is missing or mis-shaped.
void check_parameters(const ModelConfig& cfg, const Parameters& params);

struct GridCoord {
  int x = 0;
  int y = 0;
  friend bool operator==(const GridCoord&, const GridCoord&) = default;
};

struct Region {
  std::string slide_id;
  GridCoord origin;
  std::vector<int> members;         // row indices into the slide's PatchGrid / EmbeddingMatrix
  std::vector<GridCoord> relative;  // member coordinates relative to origin

  friend bool operator==(const Region&, const Region&) = default;
};

/// Fixed 2D sinusoidal encoding, one row per coordinate. Channels [0, d/2)
/// encode x and [d/2, d) encode y; within each half the first d/4 channels
/// are sin(v * f_i) and the next d/4 are cos(v * f_i), f_i = 10000^(-4i/d).
Tensor positional_encode(std::span<const GridCoord> coords, int d_model);

/// CLS-row attention (after softmax) for every layer and head, over
/// [CLS, member_0, member_1, ...].
struct RegionAttention {
  int n_layers = 0;
  int n_heads = 0;
  int n_tokens = 0;
  std::vector<double> weights;  // [layer][head][token]

  double at(int layer, int head, int token) const {
    return weights[(static_cast<std::size_t>(layer) * n_heads + head) * n_tokens + token];
  }
};

struct RegionEncoding {
  Var cls;  // [1, d_model]
  RegionAttention attention;
};

/// Builds the region encoder on `graph`; dropout follows graph.training().
RegionEncoding encode_region(Graph& graph, const Parameters& params, const ModelConfig& cfg,
                             const EmbeddingMatrix& embeddings, const Region& region);

/// Mean of the region vectors, then the linear head: [1, n_classes] logits.
Var fuse_and_classify(Graph& graph, const Parameters& params, const ModelConfig& cfg,
                      std::span<const Var> cls_vectors);

/// Inference convenience: evaluation-mode logits for a slide.
std::vector<double> predict_logits(const Parameters& params, const ModelConfig& cfg,
                                   const EmbeddingMatrix& embeddings,
                                   std::span<const Region> regions);

std::vector<double> softmax_probabilities(std::span<const double> logits);

enum class AttentionAggregation { kLastLayer, kMeanAllLayers };

struct AttentionMap {
  Region region;
  std::vector<double> weights;  // one per region member, nonnegative, sums to 1
};

/// Mean over heads (of the last layer, or of all layers), CLS->CLS dropped,
/// renormalised over the members.
AttentionMap extract_cls_attention(const RegionAttention& attention, const Region& region,
                                   AttentionAggregation aggregation = AttentionAggregation::kLastLayer);

struct TrainingMetadata {
  int fold = -1;
  int epoch = 0;
  double best_weighted_f1 = 0.0;

  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct ModelCheckpoint {
  ModelConfig config;
  Parameters params;
  std::optional<AdamState> adam;
  TrainingMetadata metadata;
};

/// "HGC1", config block, metadata, u32 entry count, then per entry a
/// length-prefixed name, u32 rank, u32 dims and float32 values; Adam moments
/// are stored as entries "adam.m/<name>" and "adam.v/<name>". CRC32 trailer.
void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace histograde
