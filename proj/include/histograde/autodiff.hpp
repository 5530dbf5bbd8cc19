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

/// @file autodiff.hpp
/// @brief Dense reverse-mode differentiation over row-major double tensors.
///
/// A Graph is a tape: every op appends a node holding its value and a closure
/// that pushes the node's gradient into its parents. Nodes are created in
/// topological order, so backward() is a single reverse sweep. Parameters
/// live outside the graph in a named store; `Graph::param` binds a leaf to one
/// of them and `parameter_gradients` collects the accumulated result.
///
/// Ops work on rank-1 or rank-2 tensors; rank 1 of length n behaves as [1, n].
/// Every op output is checked for non-finite values.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace histograde {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> shape, std::vector<double> data);
  static Tensor zeros(std::vector<int> shape);
  static Tensor filled(std::vector<int> shape, double value);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const { return shape.size() == 2 ? shape[0] : 1; }
  int cols() const { return shape.size() == 2 ? shape[1] : shape.at(0); }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Ordered, named parameter tensors.
class Parameters {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  const Tensor& get(const std::string& name) const { return values_[index_of(name)]; }
  Tensor& get(const std::string& name) { return values_[index_of(name)]; }
  const Tensor& at(std::size_t i) const { return values_[i]; }
  Tensor& at(std::size_t i) { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  std::size_t size() const { return values_.size(); }
  std::size_t scalar_count() const;

  friend bool operator==(const Parameters&, const Parameters&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t> index_;
};

/// One gradient tensor per parameter, aligned with Parameters indices.
using Gradients = std::vector<Tensor>;

Gradients zero_gradients(const Parameters& params);
void accumulate(Gradients& into, const Gradients& from);

struct Var {
  int id = -1;
};

class Graph {
 public:
  /// `train` enables dropout; masks are keyed by (dropout_seed, node id, step).
  explicit Graph(bool train = false, std::uint64_t dropout_seed = 0, std::uint64_t step = 0)
      : train_(train), dropout_seed_(dropout_seed), step_(step) {}

  Var input(Tensor value);
  /// Leaf bound to params[name]; repeated calls return the same node.
  Var param(const Parameters& params, const std::string& name);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var transpose(Var a);
  /// Adds a [n] (or [1, n]) row vector to every row of a [m, n] tensor.
  Var add_row(Var a, Var row);
  Var linear(Var x, Var weight, Var bias);
  /// Normalises each row over the last axis, then applies gamma/beta.
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  /// axis 1 normalises each row, axis 0 each column.
  Var softmax(Var x, int axis = 1);
  /// Exact GELU, x * Phi(x).
  Var gelu(Var x);
  Var dropout(Var x, double p);
  /// axis 0 -> [1, n] column means, axis 1 -> [m, 1] row means.
  Var mean(Var x, int axis);
  Var sum(Var x);
  /// Element-wise sum of a token matrix and an equally shaped encoding table.
  Var embedding_add(Var tokens, Var table);
  Var concat_rows(Var a, Var b);
  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var x, int start, int count);
  Var row(Var x, int r);

  /// Sum over samples of w[y_i] * -log softmax(logits_i)[y_i], divided by
  /// the sum of applied weights. logits is [batch, classes].
  Var weighted_cross_entropy(Var logits, std::span<const int> labels,
                             std::span<const double> class_weights);

  const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  /// Gradient of the last backward() target with respect to v (zeros if unreached).
  Tensor grad(Var v) const;

  /// Requires a single-element loss.
  void backward(Var loss);

  Gradients parameter_gradients(const Parameters& params) const;

  std::size_t node_count() const { return nodes_.size(); }
  bool training() const { return train_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    long param_index = -1;
    std::function<void(Graph&, int)> backward;
  };

  Var push(Tensor value, bool needs_grad, std::function<void(Graph&, int)> backward,
           const char* op);
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }
  bool needs(Var v) const { return node(v).needs_grad; }
  Tensor& grad_slot(int id);

  std::vector<Node> nodes_;
  std::map<std::size_t, int> param_nodes_;
  bool train_;
  std::uint64_t dropout_seed_;
  std::uint64_t step_;
};

/// Per-sample weighted loss: -w[label] * log softmax(logits)[label].
double weighted_cross_entropy(std::span<const double> logits, int label,
                              std::span<const double> class_weights);

struct ClassWeights {
  std::array<double, 4> w{1.0, 1.0, 1.0, 1.0};

  /// Throws kParameter unless every weight is positive and finite.
  void validate() const;
};

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  /// Zeroed moments shaped like `params`.
  void init(const Parameters& params);
};

/// Bias-corrected Adam; weight decay, when set, is added to the gradient.
void adam_step(Parameters& params, const Gradients& grads, AdamState& state);

}  // namespace histograde
