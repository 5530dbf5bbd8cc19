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

#include "histograde/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "histograde/error.hpp"
#include "histograde/rng.hpp"

namespace histograde {

// ---------------------------------------------------------------------------
// Tensor / Parameters

Tensor::Tensor(std::vector<int> shape_in, std::vector<double> data_in)
    : shape(std::move(shape_in)), data(std::move(data_in)) {
  require(!shape.empty() && shape.size() <= 2, ErrorCode::kShape, "tensors are rank 1 or 2");
  std::size_t n = 1;
  for (int d : shape) {
    require(d > 0, ErrorCode::kShape, "tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  require(n == data.size(), ErrorCode::kShape,
          "shape " + shape_string() + " does not match " + std::to_string(data.size()) +
              " values");
}

Tensor Tensor::zeros(std::vector<int> shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(std::vector<int> shape, double value) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(std::max(d, 0));
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void Parameters::add(const std::string& name, Tensor value) {
  require(!contains(name), ErrorCode::kContract, "duplicate parameter '" + name + "'");
  index_[name] = values_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
}

std::size_t Parameters::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorCode::kContract, "unknown parameter '" + name + "'");
  return it->second;
}

std::size_t Parameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : values_) n += t.size();
  return n;
}

Gradients zero_gradients(const Parameters& params) {
  Gradients g;
  g.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) g.push_back(Tensor::zeros(params.at(i).shape));
  return g;
}

void accumulate(Gradients& into, const Gradients& from) {
  require(into.size() == from.size(), ErrorCode::kShape, "gradient sets differ in length");
  for (std::size_t i = 0; i < into.size(); ++i) {
    require(into[i].size() == from[i].size(), ErrorCode::kShape, "gradient shapes differ");
    for (std::size_t k = 0; k < into[i].size(); ++k) into[i].data[k] += from[i].data[k];
  }
}

// ---------------------------------------------------------------------------
// Graph plumbing

namespace {

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      fail(ErrorCode::kContract, std::string("non-finite value produced by ") + op);
    }
  }
}

std::vector<int> matrix_shape(int rows, int cols) { return {rows, cols}; }

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  fail(ErrorCode::kShape,
       std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
}

// C += A * B^T-style kernels on raw row-major buffers.
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[static_cast<std::size_t>(i) * k + p];
      if (av == 0.0) continue;
      const double* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
void gemm_nt(const double* g, const double* b, double* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* gi = g + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double* bp = b + static_cast<std::size_t>(p) * n;
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += gi[j] * bp[j];
      c[static_cast<std::size_t>(i) * k + p] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
void gemm_tn(const double* a, const double* g, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* gi = g + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[static_cast<std::size_t>(i) * k + p];
      if (av == 0.0) continue;
      double* cp = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

}  // namespace

Var Graph::push(Tensor value, bool needs_grad, std::function<void(Graph&, int)> backward,
                const char* op) {
  check_finite(value, op);
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size() - 1)};
}

Tensor& Graph::grad_slot(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

Var Graph::input(Tensor value) { return push(std::move(value), false, nullptr, "input"); }

Var Graph::param(const Parameters& params, const std::string& name) {
  const std::size_t index = params.index_of(name);
  if (const auto it = param_nodes_.find(index); it != param_nodes_.end()) return {it->second};
  Var v = push(params.at(index), true, [](Graph&, int) {}, "param");
  node(v).param_index = static_cast<long>(index);
  param_nodes_[index] = v.id;
  return v;
}

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  return n.grad.data.empty() ? Tensor::zeros(n.value.shape) : n.grad;
}

void Graph::backward(Var loss) {
  require(node(loss).value.size() == 1, ErrorCode::kContract,
          "backward needs a scalar loss, got shape " + node(loss).value.shape_string());
  for (auto& n : nodes_) n.grad = Tensor();
  grad_slot(loss.id).data[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.data.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

Gradients Graph::parameter_gradients(const Parameters& params) const {
  Gradients out = zero_gradients(params);
  for (const auto& [index, id] : param_nodes_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.data.empty()) continue;
    require(out.at(index).size() == n.grad.size(), ErrorCode::kShape,
            "parameter '" + params.name(index) + "' changed shape");
    out[index] = n.grad;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ops

Var Graph::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  const int m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out = Tensor::zeros(matrix_shape(m, n));
  gemm_nn(A.data.data(), B.data.data(), out.data.data(), m, k, n);
  return push(std::move(out), needs(a) || needs(b),
              [a, b, m, k, n](Graph& g, int self) {
                const Tensor& G = g.nodes_[static_cast<std::size_t>(self)].grad;
                if (g.needs(a)) {
                  gemm_nt(G.data.data(), g.value(b).data.data(), g.grad_slot(a.id).data.data(), m,
                          n, k);
                }
                if (g.needs(b)) {
                  gemm_tn(g.value(a).data.data(), G.data.data(), g.grad_slot(b.id).data.data(), m,
                          k, n);
                }
              },
              "matmul");
}

Var Graph::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("add", A, B);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
  return push(std::move(out), needs(a) || needs(b),
              [a, b](Graph& g, int self) {
                const Tensor& G = g.nodes_[static_cast<std::size_t>(self)].grad;
                for (Var p : {a, b}) {
                  if (!g.needs(p)) continue;
                  Tensor& slot = g.grad_slot(p.id);
                  for (std::size_t i = 0; i < G.size(); ++i) slot.data[i] += G.data[i];
                }
              },
              "add");
}

Var Graph::embedding_add(Var tokens, Var table) { return add(tokens, table); }

Var Graph::mul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("mul", A, B);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= B.data[i];
  return push(std::move(out), needs(a) || needs(b),
              [a, b](Graph& g, int self) {
                const Tensor& G = g.nodes_[static_cast<std::size_t>(self)].grad;
                if (g.needs(a)) {
                  Tensor& slot = g.grad_slot(a.id);
                  const Tensor& Bv = g.value(b);
                  for (std::size_t i = 0; i < G.size(); ++i) slot.data[i] += G.data[i] * Bv.data[i];
                }
                if (g.needs(b)) {
                  Tensor& slot = g.grad_slot(b.id);
                  const Tensor& Av = g.value(a);
                  for (std::size_t i = 0; i < G.size(); ++i) slot.data[i] += G.data[i] * Av.data[i];
                }
              },
              "mul");
}

Var Graph::scale(Var a, double s) {
  Tensor out = value(a);
  for (double& v : out.data) v *= s;
  return push(std::move(out), needs(a),
              [a, s](Graph& g, int self) {
                const Tensor& G = g.nodes_[static_cast<std::size_t>(self)].grad;
                Tensor& slot = g.grad_slot(a.id);
                for (std::size_t i = 0; i < G.size(); ++i) slot.data[i] += s * G.data[i];
              },
              "scale");
}

Var Graph::transpose(Var a) {
  const Tensor& A = value(a);
  const int m = A.rows(), n = A.cols();
  Tensor out = Tensor::zeros(matrix_shape(n, m));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
  }
  return push(std::move(out), needs(a),
              [a, m, n](Graph& g, int self) {
                const Tensor& G = g.nodes_[static_cast<std::size_t>(self)].grad;
                Tensor& slot = g.grad_slot(a.id);
                for (int i = 0; i < m; ++i) {
                  for (int j = 0; j < n; ++j) slot.at(i, j) += G.at(j, i);
                }
              },
              "transpose");
}

Var Graph::add_row(Var a, Var r) {
  const Tensor& A = value(a);
  const Tensor& R = value(r);
  if (R.rows() != 1 || R.cols() != A.cols()) shape_error("add_row", A, R);
  const int m = A.rows(), n = A.cols();
  Tensor out = A;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out.at(i, j) += R.data[static_cast<std::size_t>(j)];
  }
  return push(std::move(out), needs(a) || needs(r),
              [a, r, m, n](Graph& g, int self) {
                const Tensor& G = g.nodes_[static_cast<std::size_t>(self)].grad;
                if (g.needs(a)) {
                  Tensor& slot = g.grad_slot(a.id);
                  for (std::size_t i = 0; i < G.size(); ++i) slot.data[i] += G.data[i];
                }
                if (g.needs(r)) {
                  Tensor& slot = g.grad_slot(r.id);
                  for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < n; ++j) slot.data[static_cast<std::size_t>(j)] += G.at(i, j);
                  }
                }
              },
              "add_row");
}

Var Graph::linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = value(x);
  const Tensor& Ga = value(gamma);
  const Tensor& Be = value(beta);
  const int m = X.rows(), n = X.cols();
  if (Ga.size() != static_cast<std::size_t>(n)) shape_error("layer_norm", X, Ga);
  if (Be.size() != static_cast<std::size_t>(n)) shape_error("layer_norm", X, Be);
  Tensor out = Tensor::zeros(X.shape);
  std::vector<double> xhat(X.size());
  std::vector<double> inv_std(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += X.at(i, j);
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (X.at(i, j) - mean) * (X.at(i, j) - mean);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < n; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * n + j;
      xhat[k] = (X.at(i, j) - mean) * is;
      out.data[k] = xhat[k] * Ga.data[static_cast<std::size_t>(j)] + Be.data[static_cast<std::size_t>(j)];
    }
  }
  return push(
      std::move(out), needs(x) || needs(gamma) || needs(beta),
      [x, gamma, beta, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g,
                                                                                  int self) {
        const Tensor& G = g.nodes_[static_cast<std::size_t>(self)].grad;
        const Tensor& Ga = g.value(gamma);
        if (g.needs(gamma) || g.needs(beta)) {
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
              const std::size_t k = static_cast<std::size_t>(i) * n + j;
              if (g.needs(gamma)) g.grad_slot(gamma.id).data[static_cast<std::size_t>(j)] += G.data[k] * xhat[k];
              if (g.needs(beta)) g.grad_slot(beta.id).data[static_cast<std::size_t>(j)] += G.data[k];
            }
          }
        }
        if (g.needs(x)) {
          Tensor& slot = g.grad_slot(x.id);
          for (int i = 0; i < m; ++i) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (int j = 0; j < n; ++j) {
              const std::size_t k = static_cast<std::size_t>(i) * n + j;
              const double d = G.data[k] * Ga.data[static_cast<std::size_t>(j)];
              sum_d += d;
              sum_dx += d * xhat[k];
            }
            const double is = inv_std[static_cast<std::size_t>(i)];
            for (int j = 0; j < n; ++j) {
              const std::size_t k = static_cast<std::size_t>(i) * n + j;
              const double d = G.data[k] * Ga.data[static_cast<std::size_t>(j)];
              slot.data[k] += is * (d - sum_d / n - xhat[k] * sum_dx / n);
            }
          }
        }
      },
      "layer_norm");
}

Var Graph::softmax(Var x, int axis) {
  require(axis == 0 || axis == 1, ErrorCode::kParameter, "softmax axis must be 0 or 1");
  const Tensor& X = value(x);
  const int m = X.rows(), n = X.cols();
  Tensor out = Tensor::zeros(X.shape);
  // Lines along the reduced axis: rows for axis 1, columns for axis 0.
  const int lines = axis == 1 ? m : n;
  const int len = axis == 1 ? n : m;
  auto idx = [axis, n](int line, int k) {
    return axis == 1 ? static_cast<std::size_t>(line) * n + k
                     : static_cast<std::size_t>(k) * n + line;
  };
  for (int l = 0; l < lines; ++l) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < len; ++k) mx = std::max(mx, X.data[idx(l, k)]);
    double s = 0.0;
    for (int k = 0; k < len; ++k) {
      const double e = std::exp(X.data[idx(l, k)] - mx);
      out.data[idx(l, k)] = e;
      s += e;
    }
    for (int k = 0; k < len; ++k) out.data[idx(l, k)] /= s;
  }
  return push(std::move(out), needs(x),
              [x, lines, len, idx](Graph& g, int self) {
                const Node& me = g.nodes_[static_cast<std::size_t>(self)];
                const Tensor& G = me.grad;
                const Tensor& Y = me.value;
                Tensor& slot = g.grad_slot(x.id);
                for (int l = 0; l < lines; ++l) {
                  double dot = 0.0;
                  for (int k = 0; k < len; ++k) dot += G.data[idx(l, k)] * Y.data[idx(l, k)];
                  for (int k = 0; k < len; ++k) {
                    slot.data[idx(l, k)] += Y.data[idx(l, k)] * (G.data[idx(l, k)] - dot);
                  }
                }
              },
              "softmax");
}

Var Graph::gelu(Var x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Tensor out = value(x);
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return push(std::move(out), needs(x),
              [x](Graph& g, int self) {
                const Tensor& G = g.nodes_[static_cast<std::size_t>(self)].grad;
                const Tensor& X = g.value(x);
                Tensor& slot = g.grad_slot(x.id);
                for (std::size_t i = 0; i < G.size(); ++i) {
                  const double v = X.data[i];
                  const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                  slot.data[i] += G.data[i] * (cdf + v * pdf);
                }
              },
              "gelu");
}

Var Graph::dropout(Var x, double p) {
  if (!(p >= 0.0 && p < 1.0)) {
    fail(ErrorCode::kParameter, "dropout probability must be in [0, 1), got " + std::to_string(p));
  }
  if (!train_ || p == 0.0) return x;
  const std::uint64_t key =
      mix_seed(mix_seed(dropout_seed_, static_cast<std::uint64_t>(nodes_.size())), step_);
  const Tensor& X = value(x);
  std::vector<double> mask(X.size());
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = to_unit(mix_seed(key, static_cast<std::uint64_t>(i))) >= p ? keep_scale : 0.0;
  }
  Tensor out = X;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask[i];
  return push(std::move(out), needs(x),
              [x, mask = std::move(mask)](Graph& g, int self) {
                const Tensor& G = g.nodes_[static_cast<std::size_t>(self)].grad;
                Tensor& slot = g.grad_slot(x.id);
                for (std::size_t i = 0; i < G.size(); ++i) slot.data[i] += G.data[i] * mask[i];
              },
              "dropout");
}

Var Graph::mean(Var x, int axis) {
  require(axis == 0 || axis == 1, ErrorCode::kParameter, "mean axis must be 0 or 1");
  const Tensor& X = value(x);
  const int m = X.rows(), n = X.cols();
  Tensor out = axis == 0 ? Tensor::zeros(matrix_shape(1, n)) : Tensor::zeros(matrix_shape(m, 1));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out.data[static_cast<std::size_t>(axis == 0 ? j : i)] += X.at(i, j);
  }
  const double denom = axis == 0 ? m : n;
  for (double& v : out.data) v /= denom;
  return push(std::move(out), needs(x),
              [x, axis, m, n, denom](Graph& g, int self) {
                const Tensor& G = g.nodes_[static_cast<std::size_t>(self)].grad;
                Tensor& slot = g.grad_slot(x.id);
                for (int i = 0; i < m; ++i) {
                  for (int j = 0; j < n; ++j) {
                    slot.at(i, j) += G.data[static_cast<std::size_t>(axis == 0 ? j : i)] / denom;
                  }
                }
              },
              "mean");
}

Var Graph::sum(Var x) {
  const Tensor& X = value(x);
  const double s = std::accumulate(X.data.begin(), X.data.end(), 0.0);
  return push(Tensor::scalar(s), needs(x),
              [x](Graph& g, int self) {
                const double G = g.nodes_[static_cast<std::size_t>(self)].grad.data[0];
                for (double& v : g.grad_slot(x.id).data) v += G;
              },
              "sum");
}

Var Graph::concat_rows(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols() != B.cols()) shape_error("concat_rows", A, B);
  const int n = A.cols();
  Tensor out = Tensor::zeros(matrix_shape(A.rows() + B.rows(), n));
  std::copy(A.data.begin(), A.data.end(), out.data.begin());
  std::copy(B.data.begin(), B.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(A.size()));
  const std::size_t split = A.size();
  return push(std::move(out), needs(a) || needs(b),
              [a, b, split](Graph& g, int self) {
                const Tensor& G = g.nodes_[static_cast<std::size_t>(self)].grad;
                if (g.needs(a)) {
                  Tensor& slot = g.grad_slot(a.id);
                  for (std::size_t i = 0; i < split; ++i) slot.data[i] += G.data[i];
                }
                if (g.needs(b)) {
                  Tensor& slot = g.grad_slot(b.id);
                  for (std::size_t i = 0; i < slot.size(); ++i) slot.data[i] += G.data[split + i];
                }
              },
              "concat_rows");
}

Var Graph::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), ErrorCode::kShape, "concat_cols needs at least one part");
  const int m = value(parts[0]).rows();
  int total = 0;
  bool any = false;
  for (Var p : parts) {
    if (value(p).rows() != m) shape_error("concat_cols", value(parts[0]), value(p));
    total += value(p).cols();
    any = any || needs(p);
  }
  Tensor out = Tensor::zeros(matrix_shape(m, total));
  std::vector<Var> pv(parts.begin(), parts.end());
  int offset = 0;
  for (Var p : pv) {
    const Tensor& P = value(p);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < P.cols(); ++j) out.at(i, offset + j) = P.at(i, j);
    }
    offset += P.cols();
  }
  return push(std::move(out), any,
              [pv, m](Graph& g, int self) {
                const Tensor& G = g.nodes_[static_cast<std::size_t>(self)].grad;
                int off = 0;
                for (Var p : pv) {
                  const int c = g.value(p).cols();
                  if (g.needs(p)) {
                    Tensor& slot = g.grad_slot(p.id);
                    for (int i = 0; i < m; ++i) {
                      for (int j = 0; j < c; ++j) slot.at(i, j) += G.at(i, off + j);
                    }
                  }
                  off += c;
                }
              },
              "concat_cols");
}

Var Graph::slice_cols(Var x, int start, int count) {
  const Tensor& X = value(x);
  require(start >= 0 && count > 0 && start + count <= X.cols(), ErrorCode::kShape,
          "slice_cols [" + std::to_string(start) + ", +" + std::to_string(count) +
              ") outside " + X.shape_string());
  const int m = X.rows();
  Tensor out = Tensor::zeros(matrix_shape(m, count));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < count; ++j) out.at(i, j) = X.at(i, start + j);
  }
  return push(std::move(out), needs(x),
              [x, start, count, m](Graph& g, int self) {
                const Tensor& G = g.nodes_[static_cast<std::size_t>(self)].grad;
                Tensor& slot = g.grad_slot(x.id);
                for (int i = 0; i < m; ++i) {
                  for (int j = 0; j < count; ++j) slot.at(i, start + j) += G.at(i, j);
                }
              },
              "slice_cols");
}

Var Graph::row(Var x, int r) {
  const Tensor& X = value(x);
  require(r >= 0 && r < X.rows(), ErrorCode::kShape,
          "row " + std::to_string(r) + " outside " + X.shape_string());
  const int n = X.cols();
  Tensor out(matrix_shape(1, n),
             std::vector<double>(X.data.begin() + static_cast<std::ptrdiff_t>(r) * n,
                                 X.data.begin() + static_cast<std::ptrdiff_t>(r + 1) * n));
  return push(std::move(out), needs(x),
              [x, r, n](Graph& g, int self) {
                const Tensor& G = g.nodes_[static_cast<std::size_t>(self)].grad;
                Tensor& slot = g.grad_slot(x.id);
                for (int j = 0; j < n; ++j) slot.at(r, j) += G.data[static_cast<std::size_t>(j)];
              },
              "row");
}

Var Graph::weighted_cross_entropy(Var logits, std::span<const int> labels,
                                  std::span<const double> class_weights) {
  const Tensor& L = value(logits);
  const int batch = L.rows(), classes = L.cols();
  require(static_cast<int>(labels.size()) == batch, ErrorCode::kShape,
          "weighted_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
              std::to_string(batch) + " rows");
  require(static_cast<int>(class_weights.size()) == classes, ErrorCode::kShape,
          "weighted_cross_entropy: weight count does not match classes");
  std::vector<double> probs(L.size());
  double total = 0.0, weight_sum = 0.0;
  for (int i = 0; i < batch; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < classes, ErrorCode::kContract, "invalid label " + std::to_string(y));
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < classes; ++c) mx = std::max(mx, L.at(i, c));
    double s = 0.0;
    for (int c = 0; c < classes; ++c) s += std::exp(L.at(i, c) - mx);
    for (int c = 0; c < classes; ++c) {
      probs[static_cast<std::size_t>(i) * classes + c] = std::exp(L.at(i, c) - mx) / s;
    }
    const double w = class_weights[static_cast<std::size_t>(y)];
    total += w * (std::log(s) + mx - L.at(i, y));
    weight_sum += w;
  }
  require(weight_sum > 0.0, ErrorCode::kParameter, "class weights must be positive");
  std::vector<int> ys(labels.begin(), labels.end());
  std::vector<double> ws(class_weights.begin(), class_weights.end());
  return push(Tensor::scalar(total / weight_sum), needs(logits),
              [logits, batch, classes, probs = std::move(probs), ys = std::move(ys),
               ws = std::move(ws), weight_sum](Graph& g, int self) {
                const double G = g.nodes_[static_cast<std::size_t>(self)].grad.data[0];
                Tensor& slot = g.grad_slot(logits.id);
                for (int i = 0; i < batch; ++i) {
                  const int y = ys[static_cast<std::size_t>(i)];
                  const double f = G * ws[static_cast<std::size_t>(y)] / weight_sum;
                  for (int c = 0; c < classes; ++c) {
                    const double p = probs[static_cast<std::size_t>(i) * classes + c];
                    slot.at(i, c) += f * (p - (c == y ? 1.0 : 0.0));
                  }
                }
              },
              "weighted_cross_entropy");
}

double weighted_cross_entropy(std::span<const double> logits, int label,
                              std::span<const double> class_weights) {
  require(label >= 0 && label < static_cast<int>(logits.size()), ErrorCode::kContract,
          "invalid label " + std::to_string(label));
  require(class_weights.size() == logits.size(), ErrorCode::kShape,
          "weight count does not match logits");
  for (double v : logits) {
    require(std::isfinite(v), ErrorCode::kContract, "logits must be finite");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  return class_weights[static_cast<std::size_t>(label)] *
         (std::log(s) + mx - logits[static_cast<std::size_t>(label)]);
}

void ClassWeights::validate() const {
  for (double v : w) {
    require(v > 0.0 && std::isfinite(v), ErrorCode::kParameter,
            "class weights must be positive and finite");
  }
}

// ---------------------------------------------------------------------------
// Adam

void AdamState::init(const Parameters& params) {
  step = 0;
  m = zero_gradients(params);
  v = zero_gradients(params);
}

void adam_step(Parameters& params, const Gradients& grads, AdamState& state) {
  require(grads.size() == params.size(), ErrorCode::kShape,
          "adam_step: gradient count does not match parameters");
  if (state.m.size() != params.size()) state.init(params);
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.at(i);
    const Tensor& g = grads[i];
    if (g.shape != p.shape || state.m[i].shape != p.shape) {
      fail(ErrorCode::kShape, "adam_step: shape mismatch for '" + params.name(i) + "'");
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g.data[k] + state.weight_decay * p.data[k];
      double& m = state.m[i].data[k];
      double& v = state.v[i].data[k];
      m = state.beta1 * m + (1.0 - state.beta1) * gk;
      v = state.beta2 * v + (1.0 - state.beta2) * gk * gk;
      p.data[k] -= state.lr * (m / bc1) / (std::sqrt(v / bc2) + state.epsilon);
    }
  }
}

}  // namespace histograde
