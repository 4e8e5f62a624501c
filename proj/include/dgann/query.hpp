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

#include <chrono>
#include <cmath>

#include "dgann/graph.hpp"

namespace dgann {

struct QueryParams {
  std::uint32_t k = 10;
  std::uint32_t l = 100;          // candidate queue length, >= k
  std::uint32_t tau_T = 0;        // calibrated threshold T; 0 = rerank all l
  std::uint32_t num_pqs = 0;      // c; 0 = all quantizers the index holds
  double target_recall = 0.98;    // R%
  std::uint32_t tau_override = 0; // harness knob: fixed tau, bypasses formula

  void validate() const {
    if (k < 1 || l < k) throw InvalidParams("QueryParams: need 1 <= k <= l");
  }
};

struct QueryTrace {
  std::uint64_t stage1_pages_read = 0;
  std::uint64_t stage1_hits = 0;
  std::uint64_t stage1_pinned_hits = 0;
  std::uint32_t queue_size = 0;
  std::uint32_t tau = 0;
  std::uint32_t refined_size = 0;
  std::uint64_t stage3_vec_pages = 0;
  double stage1_ms = 0, stage2_ms = 0, stage3_ms = 0;
};

/// Dynamic tau rule: min(round(T * (1 + log10(l / T))), l).
inline std::uint32_t effective_tau(std::uint32_t T, std::uint32_t l) {
  if (T < 1 || T > l) throw InvalidParams("effective_tau: need 1 <= T <= l");
  const double raw =
      static_cast<double>(T) *
      (1.0 + std::log10(static_cast<double>(l) / static_cast<double>(T)));
  const double rounded = std::floor(raw + 0.5);
  return static_cast<std::uint32_t>(std::min<double>(rounded, l));
}

/// Union of the first tau ids of every ordering, deduplicated; the result
/// is sorted by id. Size lands in [tau, min(c*tau, queue size)].
inline std::vector<node_id_t> filter_union(
    const std::vector<std::vector<node_id_t>>& orderings, std::size_t tau) {
  std::unordered_set<node_id_t> seen;
  for (const auto& ord : orderings) {
    const std::size_t take = std::min(tau, ord.size());
    for (std::size_t i = 0; i < take; ++i) seen.insert(ord[i]);
  }
  std::vector<node_id_t> out(seen.begin(), seen.end());
  std::sort(out.begin(), out.end());
  return out;
}

/// Builds the c orderings of the queue members (PQ-A's original order plus
/// each extra quantizer's re-sort of the same member set).
inline std::vector<std::vector<node_id_t>> queue_orderings(
    const Index& index, const CandidateQueue& queue, std::span<const float> q,
    std::uint32_t c) {
  std::vector<std::vector<node_id_t>> orderings;
  orderings.reserve(c);
  orderings.push_back(queue.ids());
  for (std::uint32_t pq = 1; pq < c; ++pq) {
    const DistanceTable t = distance_table(q, index.codebook(pq));
    std::vector<std::pair<float, node_id_t>> scored;
    scored.reserve(queue.size());
    for (const node_id_t n : orderings[0])
      scored.push_back({index.pq_distance(pq, n, t), n});
    std::sort(scored.begin(), scored.end());
    std::vector<node_id_t> ord;
    ord.reserve(scored.size());
    for (const auto& [d, n] : scored) ord.push_back(n);
    orderings.push_back(std::move(ord));
  }
  return orderings;
}

/// Stage 2: resort the queue under each extra quantizer and take the union
/// of the per-ordering top-tau candidates.
inline std::vector<node_id_t> filter_candidates(const Index& index,
                                                const CandidateQueue& queue,
                                                std::span<const float> q,
                                                std::uint32_t tau,
                                                std::uint32_t c) {
  if (tau > queue.size())
    throw InvalidParams("filter_candidates: tau out of range");
  return filter_union(queue_orderings(index, queue, q, c), tau);
}

/// Three-stage query: (1) greedy search under PQ-A, (2) multi-PQ filter,
/// (3) one batched vector read and exact rerank. With c = 1 this is the
/// two-stage query. Returns the k closest live nodes, ascending.
inline std::vector<std::pair<node_id_t, float>> search(
    Index& index, std::span<const float> q, const QueryParams& params,
    QueryTrace* trace = nullptr) {
  params.validate();
  auto lk = index.read_lock();
  if (index.entry_node() == kInvalidNode)
    throw EmptyIndex("search: empty-index");
  const std::uint32_t c =
      params.num_pqs == 0
          ? index.num_pqs()
          : std::min(params.num_pqs, index.num_pqs());

  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();

  const DistanceTable table_a = distance_table(q, index.codebook(0));
  QueryContext ctx = index.buffer().open_context();
  auto [queue, visited] = greedy_search(
      index.entry_node(), params.l,
      [&](node_id_t n) { return index.pq_distance(0, n, table_a); },
      index.neighbor_provider(ctx));
  const BufferStats s1 = ctx.stats();
  index.buffer().end_query(ctx);
  const auto t1 = clock::now();

  std::uint32_t tau = params.tau_override;
  if (tau == 0) {
    const std::uint32_t T = params.tau_T ? params.tau_T : params.l;
    tau = effective_tau(std::min(T, params.l), params.l);
  }
  tau = std::clamp(tau, params.k, params.l);
  const std::uint32_t tau_q =
      std::min<std::uint32_t>(tau, static_cast<std::uint32_t>(queue.size()));

  std::vector<node_id_t> refined = filter_candidates(index, queue, q, tau_q, c);
  refined.erase(std::remove_if(refined.begin(), refined.end(),
                               [&](node_id_t n) {
                                 return index.store().node_deleted(n);
                               }),
                refined.end());
  const auto t2 = clock::now();

  std::uint64_t vec_pages = 0;
  const VectorArray vecs = index.store().read_vectors(refined, &vec_pages);
  std::vector<std::pair<float, node_id_t>> scored;
  scored.reserve(refined.size());
  for (std::size_t i = 0; i < refined.size(); ++i)
    scored.push_back({squared_l2(q.data(), vecs[i].data(), q.size()), refined[i]});
  std::sort(scored.begin(), scored.end());
  if (scored.size() > params.k) scored.resize(params.k);
  const auto t3 = clock::now();

  if (trace) {
    trace->stage1_pages_read = s1.misses;
    trace->stage1_hits = s1.hits;
    trace->stage1_pinned_hits = s1.pinned_hits;
    trace->queue_size = static_cast<std::uint32_t>(queue.size());
    trace->tau = tau_q;
    trace->refined_size = static_cast<std::uint32_t>(refined.size());
    trace->stage3_vec_pages = vec_pages;
    trace->stage1_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    trace->stage2_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    trace->stage3_ms = std::chrono::duration<double, std::milli>(t3 - t2).count();
  }

  std::vector<std::pair<node_id_t, float>> out;
  out.reserve(scored.size());
  for (const auto& [d, n] : scored) out.push_back({n, d});
  return out;
}

inline constexpr std::uint32_t kDepthUncovered = 0xFFFFFFFFu;

/// Smallest prefix length at which the union of ordering prefixes covers
/// every true neighbor; kDepthUncovered when some true neighbor is missing
/// from the queue entirely.
inline std::uint32_t cover_depth(
    const std::vector<std::vector<node_id_t>>& orderings,
    const std::vector<node_id_t>& truth) {
  if (truth.empty()) return 0;
  std::unordered_set<node_id_t> wanted(truth.begin(), truth.end());
  std::unordered_set<node_id_t> found;
  std::size_t max_len = 0;
  for (const auto& ord : orderings) max_len = std::max(max_len, ord.size());
  for (std::size_t t = 0; t < max_len; ++t) {
    for (const auto& ord : orderings) {
      if (t >= ord.size()) continue;
      const node_id_t n = ord[t];
      if (wanted.count(n)) found.insert(n);
    }
    if (found.size() == wanted.size()) return static_cast<std::uint32_t>(t + 1);
  }
  return kDepthUncovered;
}

/// T = smallest depth such that >= R% of the samples are covered at it,
/// clamped to [k, l].
inline std::uint32_t percentile_threshold(std::vector<std::uint32_t> depths,
                                          double target_recall,
                                          std::uint32_t k, std::uint32_t l) {
  if (depths.empty()) throw EmptyInput("percentile_threshold: empty-sample");
  std::sort(depths.begin(), depths.end());
  const std::size_t need = static_cast<std::size_t>(
      std::ceil(target_recall * static_cast<double>(depths.size())));
  std::uint32_t T = l;
  if (need >= 1 && need <= depths.size() && depths[need - 1] != kDepthUncovered)
    T = depths[need - 1];
  return std::clamp(T, k, l);
}

/// Warm-up calibration: runs stage 1+2 orderings for each sample query,
/// records the minimal covering prefix against the ground truth, and
/// returns the R%-percentile depth.
inline std::uint32_t warmup_tau(Index& index, const VectorArray& samples,
                                const std::vector<std::vector<node_id_t>>& truth,
                                const QueryParams& params) {
  if (samples.size() == 0) throw EmptyInput("warmup_tau: empty-sample");
  params.validate();
  auto lk = index.read_lock();
  if (index.entry_node() == kInvalidNode)
    throw EmptyIndex("warmup_tau: empty-index");
  const std::uint32_t c =
      params.num_pqs == 0 ? index.num_pqs()
                          : std::min(params.num_pqs, index.num_pqs());

  std::vector<std::uint32_t> depths;
  depths.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto q = samples[i];
    const DistanceTable table_a = distance_table(q, index.codebook(0));
    QueryContext ctx = index.buffer().open_context();
    auto [queue, visited] = greedy_search(
        index.entry_node(), params.l,
        [&](node_id_t n) { return index.pq_distance(0, n, table_a); },
        index.neighbor_provider(ctx));
    index.buffer().end_query(ctx);
    depths.push_back(cover_depth(queue_orderings(index, queue, q, c), truth[i]));
  }
  return percentile_threshold(std::move(depths), params.target_recall,
                              params.k, params.l);
}

}  // namespace dgann
