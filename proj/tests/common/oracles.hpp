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

#include <cstdint>
#include <vector>

namespace histograde::testing {

/// Exact null distribution of U by enumerating every way to pick which n1
/// of the n1 + n2 distinct ranks belong to x. Returns P(U >= u) for
/// u = 0 .. n1*n2.
inline std::vector<double> enumerate_u_upper_tail(int n1, int n2) {
  const int n = n1 + n2;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n1 * n2 + 1), 0);
  std::int64_t total = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) != n1) continue;
    // U counts pairs with the x element ranked above the y element.
    std::int64_t u = 0, ys_below = 0;
    for (int r = 0; r < n; ++r) {
      if (mask & (1u << r)) {
        u += ys_below;
      } else {
        ++ys_below;
      }
    }
    ++counts[static_cast<std::size_t>(u)];
    ++total;
  }
  std::vector<double> upper(counts.size());
  std::int64_t acc = 0;
  for (std::size_t u = counts.size(); u-- > 0;) {
    acc += counts[u];
    upper[u] = static_cast<double>(acc) / static_cast<double>(total);
  }
  return upper;
}

/// U by direct pair counting, ties counted half.
template <typename Seq>
double pairwise_u(const Seq& x, const Seq& y) {
  double u = 0.0;
  for (double a : x) {
    for (double b : y) u += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  }
  return u;
}

}  // namespace histograde::testing
