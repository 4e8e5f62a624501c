// Copyright 2026-present the dgann project
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

#include <random>

#include "dgann/common.hpp"

namespace dgann {

struct MixtureParams {
  std::size_t clusters = 100;
  float center_scale = 1.0f;  // cluster centers ~ N(0, center_scale)
  float sigma = 0.3f;         // point spread around its center
};

/// Seeded Gaussian-mixture dataset so benchmarks run without downloads.
inline VectorArray gen_gaussian_mixture(std::size_t n, std::size_t dim,
                                        std::uint64_t seed,
                                        MixtureParams p = {}) {
  if (n == 0 || dim == 0) throw InvalidParams("gen_gaussian_mixture: n, dim >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> unit(0.f, 1.f);

  VectorArray centers(dim, p.clusters);
  for (std::size_t c = 0; c < p.clusters; ++c)
    for (std::size_t j = 0; j < dim; ++j)
      centers[c][j] = unit(rng) * p.center_scale;

  VectorArray out(dim, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = rng() % p.clusters;
    for (std::size_t j = 0; j < dim; ++j)
      out[i][j] = centers[c][j] + unit(rng) * p.sigma;
  }
  return out;
}

}  // namespace dgann
