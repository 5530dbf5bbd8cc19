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

#include "histograde/vit.hpp"

#include <algorithm>
#include <cmath>

#include "histograde/error.hpp"
#include "histograde/io.hpp"
#include "histograde/rng.hpp"

namespace histograde {

ModelConfig ModelConfig::desk(int input_dim) {
  ModelConfig cfg;
  cfg.input_dim = input_dim;
  return cfg;
}

ModelConfig ModelConfig::full_scale(int input_dim) {
  ModelConfig cfg;
  cfg.input_dim = input_dim;
  cfg.d_model = 512;
  cfg.n_heads = 8;
  cfg.n_layers = 12;
  cfg.mlp_ratio = 4.0;
  cfg.dropout = 0.1;
  return cfg;
}

int ModelConfig::mlp_hidden() const {
  return std::max(1, static_cast<int>(std::lround(d_model * mlp_ratio)));
}

void ModelConfig::validate() const {
  require(input_dim > 0, ErrorCode::kConfig, "input_dim must be positive");
  require(d_model > 0 && n_heads > 0 && n_layers > 0, ErrorCode::kConfig,
          "d_model, n_heads and n_layers must be positive");
  require(d_model % n_heads == 0, ErrorCode::kConfig, "d_model must be divisible by n_heads");
  require(d_model % 4 == 0, ErrorCode::kConfig,
          "d_model must be divisible by 4 for the 2D positional encoding");
  require(mlp_ratio > 0.0, ErrorCode::kConfig, "mlp_ratio must be positive");
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::kConfig, "dropout must be in [0, 1)");
  require(n_classes == 4, ErrorCode::kConfig, "n_classes must be 4");
  require(region_side > 0, ErrorCode::kConfig, "region_side must be positive");
}

std::vector<std::pair<std::string, std::vector<int>>> parameter_layout(const ModelConfig& cfg) {
  const int d = cfg.d_model, h = cfg.mlp_hidden();
  std::vector<std::pair<std::string, std::vector<int>>> out = {
      {"input.weight", {cfg.input_dim, d}}, {"input.bias", {d}}, {"cls", {1, d}}};
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    out.push_back({p + "ln1.gamma", {d}});
    out.push_back({p + "ln1.beta", {d}});
    for (const char* m : {"q", "k", "v", "o"}) {
      out.push_back({p + "attn." + m + ".weight", {d, d}});
      out.push_back({p + "attn." + m + ".bias", {d}});
    }
    out.push_back({p + "ln2.gamma", {d}});
    out.push_back({p + "ln2.beta", {d}});
    out.push_back({p + "mlp.fc1.weight", {d, h}});
    out.push_back({p + "mlp.fc1.bias", {h}});
    out.push_back({p + "mlp.fc2.weight", {h, d}});
    out.push_back({p + "mlp.fc2.bias", {d}});
  }
  out.push_back({"final_ln.gamma", {d}});
  out.push_back({"final_ln.beta", {d}});
  out.push_back({"head.weight", {d, cfg.n_classes}});
  out.push_back({"head.bias", {cfg.n_classes}});
  return out;
}

Parameters init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, "init"));
  Parameters params;
  for (const auto& [name, shape] : parameter_layout(cfg)) {
    Tensor t = Tensor::zeros(shape);
    const bool is_gain = name.ends_with(".gamma");
    if (is_gain) {
      std::fill(t.data.begin(), t.data.end(), 1.0);
    } else if (name == "cls") {
      for (double& v : t.data) v = 0.02 * rng.normal();
    } else if (name.ends_with(".weight")) {
      const double limit = std::sqrt(6.0 / (shape[0] + shape[1]));
      for (double& v : t.data) v = rng.uniform(-limit, limit);
    }
    params.add(name, std::move(t));
  }
  return params;
}

void check_parameters(const ModelConfig& cfg, const Parameters& params) {
  for (const auto& [name, shape] : parameter_layout(cfg)) {
    if (!params.contains(name)) fail(ErrorCode::kShape, "missing parameter '" + name + "'");
    if (params.get(name).shape != shape) {
      fail(ErrorCode::kShape, "parameter '" + name + "' has shape " +
                                  params.get(name).shape_string() + ", expected " +
                                  Tensor::zeros(shape).shape_string());
    }
  }
}

Tensor positional_encode(std::span<const GridCoord> coords, int d_model) {
  require(d_model > 0 && d_model % 4 == 0, ErrorCode::kConfig,
          "positional encoding needs d_model divisible by 4");
  require(!coords.empty(), ErrorCode::kShape, "positional encoding needs at least one coordinate");
  const int quarter = d_model / 4;
  Tensor pe = Tensor::zeros({static_cast<int>(coords.size()), d_model});
  for (std::size_t r = 0; r < coords.size(); ++r) {
    const std::array<double, 2> v{static_cast<double>(coords[r].x),
                                  static_cast<double>(coords[r].y)};
    for (int axis = 0; axis < 2; ++axis) {
      const int base = axis * 2 * quarter;
      for (int i = 0; i < quarter; ++i) {
        const double freq = std::pow(10000.0, -4.0 * i / d_model);
        pe.at(static_cast<int>(r), base + i) = std::sin(v[static_cast<std::size_t>(axis)] * freq);
        pe.at(static_cast<int>(r), base + quarter + i) =
            std::cos(v[static_cast<std::size_t>(axis)] * freq);
      }
    }
  }
  return pe;
}

RegionEncoding encode_region(Graph& g, const Parameters& params, const ModelConfig& cfg,
                             const EmbeddingMatrix& embeddings, const Region& region) {
  require(!region.members.empty(), ErrorCode::kContract, "region has no member patches");
  require(region.members.size() == region.relative.size(), ErrorCode::kShape,
          "region members and coordinates differ in length");
  if (embeddings.dim != cfg.input_dim) {
    fail(ErrorCode::kShape, "embedding dim " + std::to_string(embeddings.dim) +
                                " does not match model input_dim " +
                                std::to_string(cfg.input_dim));
  }
  const int k = static_cast<int>(region.members.size());
  Tensor x = Tensor::zeros({k, cfg.input_dim});
  for (int i = 0; i < k; ++i) {
    const int m = region.members[static_cast<std::size_t>(i)];
    require(m >= 0 && static_cast<std::size_t>(m) < embeddings.n_rows, ErrorCode::kShape,
            "region member " + std::to_string(m) + " outside embedding rows");
    const auto row = embeddings.row(static_cast<std::size_t>(m));
    std::copy(row.begin(), row.end(), x.data.begin() + static_cast<std::ptrdiff_t>(i) * cfg.input_dim);
  }
  auto P = [&](const std::string& name) { return g.param(params, name); };

  Var h = g.linear(g.input(std::move(x)), P("input.weight"), P("input.bias"));
  h = g.embedding_add(h, g.input(positional_encode(region.relative, cfg.d_model)));
  Var t = g.concat_rows(P("cls"), h);
  t = g.dropout(t, cfg.dropout);

  const int n_tokens = k + 1;
  const int dh = cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  RegionEncoding out;
  out.attention.n_layers = cfg.n_layers;
  out.attention.n_heads = cfg.n_heads;
  out.attention.n_tokens = n_tokens;
  out.attention.weights.reserve(static_cast<std::size_t>(cfg.n_layers * cfg.n_heads * n_tokens));

  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Var a = g.layer_norm(t, P(p + "ln1.gamma"), P(p + "ln1.beta"));
    Var q = g.linear(a, P(p + "attn.q.weight"), P(p + "attn.q.bias"));
    Var kk = g.linear(a, P(p + "attn.k.weight"), P(p + "attn.k.bias"));
    Var v = g.linear(a, P(p + "attn.v.weight"), P(p + "attn.v.bias"));
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(cfg.n_heads));
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      Var qh = g.slice_cols(q, hd * dh, dh);
      Var kh = g.slice_cols(kk, hd * dh, dh);
      Var vh = g.slice_cols(v, hd * dh, dh);
      Var probs = g.softmax(g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt), 1);
      const Tensor& pv = g.value(probs);
      out.attention.weights.insert(out.attention.weights.end(), pv.data.begin(),
                                   pv.data.begin() + n_tokens);
      heads.push_back(g.matmul(probs, vh));
    }
    Var o = g.linear(g.concat_cols(heads), P(p + "attn.o.weight"), P(p + "attn.o.bias"));
    t = g.add(t, g.dropout(o, cfg.dropout));
    Var b = g.layer_norm(t, P(p + "ln2.gamma"), P(p + "ln2.beta"));
    Var m = g.gelu(g.linear(b, P(p + "mlp.fc1.weight"), P(p + "mlp.fc1.bias")));
    m = g.linear(m, P(p + "mlp.fc2.weight"), P(p + "mlp.fc2.bias"));
    t = g.add(t, g.dropout(m, cfg.dropout));
  }
  out.cls = g.layer_norm(g.row(t, 0), P("final_ln.gamma"), P("final_ln.beta"));
  return out;
}

Var fuse_and_classify(Graph& g, const Parameters& params, const ModelConfig& cfg,
                      std::span<const Var> cls_vectors) {
  require(!cls_vectors.empty(), ErrorCode::kContract, "fusion needs at least one region vector");
  (void)cfg;
  Var stacked = cls_vectors[0];
  for (std::size_t i = 1; i < cls_vectors.size(); ++i) {
    stacked = g.concat_rows(stacked, cls_vectors[i]);
  }
  Var slide = g.mean(stacked, 0);
  return g.linear(slide, g.param(params, "head.weight"), g.param(params, "head.bias"));
}

std::vector<double> predict_logits(const Parameters& params, const ModelConfig& cfg,
                                   const EmbeddingMatrix& embeddings,
                                   std::span<const Region> regions) {
  Graph g(false);
  std::vector<Var> cls;
  cls.reserve(regions.size());
  for (const auto& r : regions) cls.push_back(encode_region(g, params, cfg, embeddings, r).cls);
  return g.value(fuse_and_classify(g, params, cfg, cls)).data;
}

std::vector<double> softmax_probabilities(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double s = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

AttentionMap extract_cls_attention(const RegionAttention& attention, const Region& region,
                                   AttentionAggregation aggregation) {
  const int k = attention.n_tokens - 1;
  require(k == static_cast<int>(region.members.size()), ErrorCode::kContract,
          "attention does not belong to this region");
  AttentionMap map;
  map.region = region;
  map.weights.assign(static_cast<std::size_t>(k), 0.0);
  const int first = aggregation == AttentionAggregation::kLastLayer ? attention.n_layers - 1 : 0;
  for (int l = first; l < attention.n_layers; ++l) {
    for (int h = 0; h < attention.n_heads; ++h) {
      for (int i = 0; i < k; ++i) map.weights[static_cast<std::size_t>(i)] += attention.at(l, h, i + 1);
    }
  }
  double total = 0.0;
  for (double w : map.weights) total += w;
  for (double& w : map.weights) w = total > 0.0 ? w / total : 1.0 / k;
  return map;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

void put_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.data) w.f32(static_cast<float>(v));
}

}  // namespace

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  check_parameters(ckpt.config, ckpt.params);
  const ModelConfig& c = ckpt.config;
  ByteWriter w;
  w.raw("HGC1");
  w.u32(static_cast<std::uint32_t>(c.input_dim));
  w.u32(static_cast<std::uint32_t>(c.d_model));
  w.u32(static_cast<std::uint32_t>(c.n_heads));
  w.u32(static_cast<std::uint32_t>(c.n_layers));
  w.f64(c.mlp_ratio);
  w.f64(c.dropout);
  w.u32(static_cast<std::uint32_t>(c.n_classes));
  w.u32(static_cast<std::uint32_t>(c.region_side));
  w.u32(static_cast<std::uint32_t>(ckpt.metadata.fold));
  w.u32(static_cast<std::uint32_t>(ckpt.metadata.epoch));
  w.f64(ckpt.metadata.best_weighted_f1);
  w.u32(ckpt.adam ? 1 : 0);
  if (ckpt.adam) {
    w.f64(ckpt.adam->lr);
    w.f64(ckpt.adam->beta1);
    w.f64(ckpt.adam->beta2);
    w.f64(ckpt.adam->epsilon);
    w.f64(ckpt.adam->weight_decay);
    w.u64(static_cast<std::uint64_t>(ckpt.adam->step));
  }
  const bool moments = ckpt.adam && ckpt.adam->m.size() == ckpt.params.size();
  const std::size_t n = ckpt.params.size() * (moments ? 3 : 1);
  w.u32(static_cast<std::uint32_t>(n));
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    put_tensor(w, ckpt.params.name(i), ckpt.params.at(i));
  }
  if (moments) {
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      put_tensor(w, "adam.m/" + ckpt.params.name(i), ckpt.adam->m[i]);
    }
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      put_tensor(w, "adam.v/" + ckpt.params.name(i), ckpt.adam->v[i]);
    }
  }
  w.seal();
  write_file_bytes(path, w.bytes());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 4 || std::string(bytes.begin(), bytes.begin() + 4) != "HGC1") {
    fail(ErrorCode::kFormat, "not a checkpoint (bad magic): " + path.string());
  }
  ByteReader r(verify_sealed(bytes), ErrorCode::kFormat);
  r.raw(4);
  ModelCheckpoint ckpt;
  ModelConfig& c = ckpt.config;
  c.input_dim = static_cast<int>(r.u32());
  c.d_model = static_cast<int>(r.u32());
  c.n_heads = static_cast<int>(r.u32());
  c.n_layers = static_cast<int>(r.u32());
  c.mlp_ratio = r.f64();
  c.dropout = r.f64();
  c.n_classes = static_cast<int>(r.u32());
  c.region_side = static_cast<int>(r.u32());
  c.validate();
  ckpt.metadata.fold = static_cast<int>(r.u32());
  ckpt.metadata.epoch = static_cast<int>(r.u32());
  ckpt.metadata.best_weighted_f1 = r.f64();
  if (r.u32() != 0) {
    AdamState s;
    s.lr = r.f64();
    s.beta1 = r.f64();
    s.beta2 = r.f64();
    s.epsilon = r.f64();
    s.weight_decay = r.f64();
    s.step = static_cast<std::int64_t>(r.u64());
    ckpt.adam = s;
  }
  const std::uint32_t n = r.u32();
  std::vector<std::pair<std::string, Tensor>> m_entries, v_entries;
  for (std::uint32_t e = 0; e < n; ++e) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank < 1 || rank > 2) fail(ErrorCode::kFormat, "bad tensor rank in checkpoint");
    std::vector<int> shape;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape.push_back(static_cast<int>(r.u32()));
      count *= static_cast<std::size_t>(shape.back());
    }
    std::vector<double> data(count);
    for (auto& v : data) v = r.f32();
    Tensor t(std::move(shape), std::move(data));
    if (name.starts_with("adam.m/")) {
      m_entries.emplace_back(name.substr(7), std::move(t));
    } else if (name.starts_with("adam.v/")) {
      v_entries.emplace_back(name.substr(7), std::move(t));
    } else {
      ckpt.params.add(name, std::move(t));
    }
  }
  check_parameters(c, ckpt.params);
  if (ckpt.adam && !m_entries.empty()) {
    const std::int64_t step = ckpt.adam->step;
    ckpt.adam->init(ckpt.params);
    ckpt.adam->step = step;
    auto restore = [&](std::vector<std::pair<std::string, Tensor>>& entries, std::vector<Tensor>& slots) {
      for (auto& [name, t] : entries) {
        if (!ckpt.params.contains(name) || ckpt.params.get(name).shape != t.shape) {
          fail(ErrorCode::kFormat, "optimizer moment '" + name + "' does not match any parameter");
        }
        slots[ckpt.params.index_of(name)] = std::move(t);
      }
    };
    restore(m_entries, ckpt.adam->m);
    restore(v_entries, ckpt.adam->v);
  }
  return ckpt;
}

}  // namespace histograde
