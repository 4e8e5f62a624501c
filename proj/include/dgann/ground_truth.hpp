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

#include <algorithm>
#include <thread>

#include "dgann/common.hpp"

namespace dgann {

/// Exact squared-Euclidean top-k per query, ties broken by lower id.
/// `ids[i]` names base row i; without ids the rows are 0..n-1. This is the
/// oracle behind every recall figure reported by the harness.
inline std::vector<std::vector<node_id_t>> brute_force_knn(
    const VectorArray& base, std::span<const node_id_t> ids,
    const VectorArray& queries, std::size_t k, unsigned threads = 0) {
  if (k > base.size()) throw InvalidParams("brute_force_knn: k-too-large");
  if (!ids.empty() && ids.size() != base.size())
    throw InvalidParams("brute_force_knn: ids/base size mismatch");
  if (queries.dim() != base.dim())
    throw DimensionMismatch("brute_force_knn: dimension mismatch");

  std::vector<std::vector<node_id_t>> out(queries.size());
  auto run = [&](std::size_t begin, std::size_t end) {
    std::vector<std::pair<float, node_id_t>> heap;  // max-heap of kept k
    for (std::size_t qi = begin; qi < end; ++qi) {
      heap.clear();
      const float* q = queries[qi].data();
      for (std::size_t i = 0; i < base.size(); ++i) {
        const node_id_t id =
            ids.empty() ? static_cast<node_id_t>(i) : ids[i];
        const float d = squared_l2(q, base[i].data(), base.dim());
        const std::pair<float, node_id_t> cand{d, id};
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end());
        } else if (cand < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      std::sort(heap.begin(), heap.end());
      out[qi].reserve(k);
      for (const auto& [d, id] : heap) out[qi].push_back(id);
    }
  };

  unsigned nthreads = threads ? threads : std::thread::hardware_concurrency();
  nthreads = std::max(1u, std::min<unsigned>(nthreads, queries.size()));
  if (nthreads <= 1) {
    run(0, queries.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (queries.size() + nthreads - 1) / nthreads;
    for (unsigned t = 0; t < nthreads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(queries.size(), b + chunk);
      if (b >= e) break;
      pool.emplace_back(run, b, e);
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

inline std::vector<std::vector<node_id_t>> brute_force_knn(
    const VectorArray& base, const VectorArray& queries, std::size_t k,
    unsigned threads = 0) {
  return brute_force_knn(base, {}, queries, k, threads);
}

/// recall@k = |returned ∩ exact top-k| / |exact top-k|.
inline double recall_at_k(std::span<const node_id_t> returned,
                          const std::vector<node_id_t>& truth) {
  if (truth.empty()) return 1.0;
  std::size_t hit = 0;
  for (node_id_t r : returned)
    hit += std::count(truth.begin(), truth.end(), r) != 0;
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace dgann
