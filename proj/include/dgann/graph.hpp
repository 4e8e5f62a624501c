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
#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <shared_mutex>
#include <unordered_map>
#include <unordered_set>

#include "dgann/buffer.hpp"
#include "dgann/pagestore.hpp"
#include "dgann/pq.hpp"
#include "dgann/reorder.hpp"

namespace dgann {

// ---------------------------------------------------------------------------
// Candidate queue (best-first greedy search state)
// ---------------------------------------------------------------------------

struct Candidate {
  node_id_t id = kInvalidNode;
  float dist = 0.f;
  bool visited = false;
  bool exact = false;
};

/// Fixed-capacity queue sorted ascending by (distance, node_id). Inserts
/// deduplicate by node id; overflow drops the tail.
class CandidateQueue {
 public:
  explicit CandidateQueue(std::size_t capacity) : cap_(capacity) {
    if (capacity == 0) throw InvalidParams("CandidateQueue: capacity >= 1");
  }

  std::size_t capacity() const { return cap_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool contains(node_id_t n) const { return members_.count(n) != 0; }
  const std::vector<Candidate>& entries() const { return entries_; }

  std::vector<node_id_t> ids() const {
    std::vector<node_id_t> out;
    out.reserve(entries_.size());
    for (const Candidate& c : entries_) out.push_back(c.id);
    return out;
  }

  bool insert(node_id_t n, float dist) {
    if (members_.count(n)) return false;
    const auto pos = std::lower_bound(
        entries_.begin(), entries_.end(), std::pair{dist, n},
        [](const Candidate& c, const std::pair<float, node_id_t>& v) {
          return c.dist != v.first ? c.dist < v.first : c.id < v.second;
        });
    if (entries_.size() == cap_ && pos == entries_.end()) return false;
    entries_.insert(pos, Candidate{n, dist, false, false});
    members_.insert(n);
    if (entries_.size() > cap_) {
      members_.erase(entries_.back().id);
      entries_.pop_back();
    }
    return true;
  }

  void mark_visited(node_id_t n) {
    for (Candidate& c : entries_)
      if (c.id == n) {
        c.visited = true;
        return;
      }
  }

  /// Replaces an entry's distance with an exact one, keeping order.
  void update_exact(node_id_t n, float dist) {
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [n](const Candidate& c) { return c.id == n; });
    if (it == entries_.end()) return;
    Candidate c = *it;
    c.dist = dist;
    c.exact = true;
    entries_.erase(it);
    const auto pos = std::lower_bound(
        entries_.begin(), entries_.end(), std::pair{c.dist, c.id},
        [](const Candidate& e, const std::pair<float, node_id_t>& v) {
          return e.dist != v.first ? e.dist < v.first : e.id < v.second;
        });
    entries_.insert(pos, c);
  }

  const Candidate* next_unvisited() const {
    for (const Candidate& c : entries_)
      if (!c.visited) return &c;
    return nullptr;
  }

 private:
  std::size_t cap_;
  std::vector<Candidate> entries_;
  std::unordered_set<node_id_t> members_;
};

struct SearchAudit {
  std::size_t iterations = 0;
  std::size_t max_queue_size = 0;
  bool queue_within_capacity = true;
  bool visited_subset_of_history = true;
};

/// Best-first greedy search. Starts at the entry node, repeatedly expands
/// the nearest unvisited candidate, adds its out-neighbors, and truncates
/// the queue to the top-l; terminates when no unvisited candidate remains.
///
/// `dist` maps a node id to a distance; `neighbors(n, out)` fills `out`
/// with n's out-neighbors. Returns the queue and the sorted visited set.
template <class DistFn, class NeighborFn>
std::pair<CandidateQueue, std::vector<node_id_t>> greedy_search(
    node_id_t entry, std::size_t l, DistFn&& dist, NeighborFn&& neighbors,
    SearchAudit* audit = nullptr) {
  CandidateQueue queue(l);
  std::unordered_set<node_id_t> visited;
  std::unordered_set<node_id_t> history;
  std::vector<node_id_t> nbrs;

  queue.insert(entry, dist(entry));
  if (audit) history.insert(entry);

  while (const Candidate* next = queue.next_unvisited()) {
    const node_id_t p = next->id;
    queue.mark_visited(p);
    visited.insert(p);
    nbrs.clear();
    neighbors(p, nbrs);
    for (const node_id_t u : nbrs) {
      if (queue.contains(u)) continue;
      if (queue.insert(u, dist(u))) {
        if (visited.count(u)) queue.mark_visited(u);  // truncated earlier
        if (audit) history.insert(u);
      }
    }
    if (audit) {
      audit->iterations++;
      audit->max_queue_size = std::max(audit->max_queue_size, queue.size());
      audit->queue_within_capacity &= queue.size() <= l;
    }
  }

  if (audit)
    for (node_id_t v : visited)
      audit->visited_subset_of_history &= history.count(v) != 0;

  std::vector<node_id_t> visited_sorted(visited.begin(), visited.end());
  std::sort(visited_sorted.begin(), visited_sorted.end());
  return {std::move(queue), std::move(visited_sorted)};
}

// ---------------------------------------------------------------------------
// Pruning
// ---------------------------------------------------------------------------

struct BuildParams {
  std::uint32_t R = 32;        // max outdegree
  std::uint32_t L_build = 75;  // insertion queue length
  std::uint32_t max_c = 160;   // max candidate pool for pruning
  float alpha = 1.2f;          // prune slack, applied to squared distances

  void validate() const {
    if (R < 1 || L_build < R || max_c < L_build || alpha < 1.f)
      throw InvalidParams("BuildParams: need R>=1, L_build>=R, MAX_C>=L_build, alpha>=1");
  }
};

/// Alpha-rule pruning over a (node, distance-to-p) pool: a selected close
/// candidate v discards any remaining u with alpha*dist(v,u) <= dist(p,u).
/// Selection sweeps the pool in distance order at increasing occlusion
/// thresholds (1, then up to alpha), so a diverse core is kept first and
/// remaining slots fill with near-occluded candidates, as the baseline
/// builders do. `vec_of` resolves a node to its vector for the
/// candidate-to-candidate distances.
template <class VecFn>
std::vector<node_id_t> robust_prune(std::vector<std::pair<node_id_t, float>> pool,
                                    const BuildParams& params, VecFn&& vec_of) {
  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  pool.erase(std::unique(pool.begin(), pool.end(),
                         [](const auto& a, const auto& b) {
                           return a.first == b.first;
                         }),
             pool.end());
  if (pool.size() > params.max_c) pool.resize(params.max_c);

  // occlusion factor: max over selected v of dist(p,u) / dist(v,u)
  std::vector<float> occlude(pool.size(), 0.f);
  std::vector<char> taken(pool.size(), 0);
  std::vector<node_id_t> result;
  result.reserve(params.R);
  float threshold = 1.0f;
  while (threshold <= params.alpha && result.size() < params.R) {
    for (std::size_t i = 0; i < pool.size() && result.size() < params.R; ++i) {
      if (taken[i] || occlude[i] > threshold) continue;
      taken[i] = 1;
      result.push_back(pool[i].first);
      const std::span<const float> vv = vec_of(pool[i].first);
      for (std::size_t j = 0; j < pool.size(); ++j) {
        if (taken[j] || occlude[j] > params.alpha) continue;
        const float dvu = squared_l2(vv, vec_of(pool[j].first));
        occlude[j] = dvu > 0.f
                         ? std::max(occlude[j], pool[j].second / dvu)
                         : std::numeric_limits<float>::max();
      }
    }
    if (threshold >= params.alpha) break;
    threshold = std::min(params.alpha, threshold * 1.2f);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Index
// ---------------------------------------------------------------------------

struct IndexOptions {
  BuildParams build;
  std::uint32_t num_pqs = 2;          // c
  std::uint32_t pq_subspaces = 0;     // m; 0 = largest divisor of D <= 64
  std::uint64_t seed = 42;
  bool vector_layout_opt = false;
  std::uint32_t auto_consolidate_permille = 1;  // 0 = explicit only
  std::size_t buffer_pages = 64;
  std::size_t pinned_pages = 0;  // applied via pin_entry_region
  std::size_t train_sample_cap = 20000;
  bool coupled_accounting = true;
};

struct IndexStats {
  std::uint64_t nodes = 0;    // live
  std::uint64_t deleted = 0;  // tombstoned, awaiting consolidation
  double mean_degree = 0.0;
};

inline std::uint32_t default_pq_subspaces(std::uint32_t D) {
  for (std::uint32_t m = std::min<std::uint32_t>(64, D); m >= 1; --m)
    if (D % m == 0) return m;
  return 1;
}

/// The dynamic decoupled index: bounded-degree proximity graph over the
/// page store, with per-node PQ codes kept in memory for all quantizers.
class Index {
 public:
  static std::unique_ptr<Index> create(const std::filesystem::path& base,
                                       std::uint32_t D, IndexOptions opts) {
    opts.build.validate();
    if (opts.num_pqs < 1) throw InvalidParams("Index: num_pqs >= 1");
    auto idx = std::unique_ptr<Index>(new Index());
    idx->base_ = base;
    idx->opts_ = opts;
    if (opts.pq_subspaces == 0) idx->opts_.pq_subspaces = default_pq_subspaces(D);
    if (D % idx->opts_.pq_subspaces != 0)
      throw DimensionMismatch("Index: D not divisible by pq_subspaces");
    StoreOptions so;
    so.vector_layout_opt = opts.vector_layout_opt;
    so.coupled_accounting = opts.coupled_accounting;
    idx->store_ = Store::create(base, D, opts.build.R, so);
    idx->buffer_ = std::make_unique<BufferManager>(*idx->store_, opts.buffer_pages);
    idx->placer_ = Placer(PlacementPolicy{});
    idx->codes_.resize(opts.num_pqs);
    idx->centroid_sum_.assign(D, 0.0);
    return idx;
  }

  /// Builds from scratch: trains the quantizers on a seeded sample, then
  /// inserts all vectors in a seeded random permutation. The entry node is
  /// recomputed once at the end as the node nearest the dataset centroid.
  /// `ids_out`, when given, receives the node id assigned to each row.
  static std::unique_ptr<Index> build(const std::filesystem::path& base,
                                      const VectorArray& data, IndexOptions opts,
                                      std::vector<node_id_t>* ids_out = nullptr) {
    if (data.empty()) throw EmptyInput("build: empty-input");
    auto idx = create(base, static_cast<std::uint32_t>(data.dim()), opts);
    idx->train_quantizers(data);

    std::vector<std::uint32_t> perm(data.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::uint32_t>(i);
    std::mt19937_64 rng(idx->opts_.seed);
    std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<node_id_t> row_to_id(data.size(), kInvalidNode);
    for (const std::uint32_t row : perm)
      row_to_id[row] = idx->insert(data[row]);

    // Exact centroid-nearest entry; the data is in memory here.
    std::vector<float> centroid(data.dim(), 0.f);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto v = data[i];
      for (std::size_t j = 0; j < centroid.size(); ++j) centroid[j] += v[j];
    }
    for (float& c : centroid) c /= static_cast<float>(data.size());
    std::size_t best_row = 0;
    float best = std::numeric_limits<float>::max();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float d = squared_l2(centroid.data(), data[i].data(), data.dim());
      if (d < best) {
        best = d;
        best_row = i;
      }
    }
    idx->entry_ = row_to_id[best_row];
    if (ids_out) *ids_out = std::move(row_to_id);
    return idx;
  }

  static std::unique_ptr<Index> open(const std::filesystem::path& base);
  void save();

  // -- accessors -------------------------------------------------------------

  Store& store() { return *store_; }
  const Store& store() const { return *store_; }
  BufferManager& buffer() { return *buffer_; }
  Placer& placer() { return placer_; }
  const IndexOptions& options() const { return opts_; }
  const BuildParams& params() const { return opts_.build; }
  node_id_t entry_node() const { return entry_; }
  std::uint32_t num_pqs() const { return static_cast<std::uint32_t>(codebooks_.size()); }
  const PQCodebook& codebook(std::size_t i) const { return codebooks_[i]; }
  std::uint32_t code_width() const { return opts_.pq_subspaces; }
  std::uint32_t tau_T() const { return tau_T_; }
  void set_tau_T(std::uint32_t t) { tau_T_ = t; }

  std::span<const std::uint8_t> code_of(std::size_t pq, node_id_t n) const {
    const std::size_t m = opts_.pq_subspaces;
    return {codes_[pq].data() + static_cast<std::size_t>(n) * m, m};
  }
  float pq_distance(std::size_t pq, node_id_t n, const DistanceTable& t) const {
    return adc(code_of(pq, n), t);
  }

  std::shared_lock<std::shared_mutex> read_lock() const {
    return std::shared_lock(update_mu_);
  }

  /// Installs externally trained quantizers on a still-empty index.
  void set_codebooks(std::vector<PQCodebook> cbs) {
    std::unique_lock lk(update_mu_);
    if (store_->next_node_id() != 0)
      throw InvalidParams("set_codebooks: index already has nodes");
    if (cbs.empty()) throw InvalidParams("set_codebooks: need >= 1 codebook");
    for (const PQCodebook& cb : cbs)
      if (cb.dim() != store_->dim() || cb.num_subspaces != opts_.pq_subspaces)
        throw DimensionMismatch("set_codebooks: geometry mismatch");
    opts_.num_pqs = static_cast<std::uint32_t>(cbs.size());
    codebooks_ = std::move(cbs);
    codes_.assign(codebooks_.size(), {});
  }

  IndexStats index_stats() const {
    IndexStats s;
    s.deleted = store_->deleted_nodes().size();
    s.nodes = store_->live_count();
    std::uint64_t deg = 0, cnt = 0;
    for (node_id_t n = 0; n < degree_.size(); ++n) {
      if (!store_->node_live(n)) continue;
      deg += degree_[n];
      cnt++;
    }
    s.mean_degree = cnt ? static_cast<double>(deg) / cnt : 0.0;
    return s;
  }

  /// Out-neighbor provider over the store through a query-level buffer
  /// context. The spans written to `out` are copies, safe to keep.
  auto neighbor_provider(QueryContext& ctx) {
    return [this, &ctx](node_id_t n, std::vector<node_id_t>& out) {
      const PageSlot loc = store_->topo_location(n);
      const auto page = buffer_->get_page(ctx, loc.page);
      const TopologyRecord& rec = page->slots[loc.slot];
      out.assign(rec.neighbors.begin(), rec.neighbors.end());
    };
  }

  // -- updates -----------------------------------------------------------------

  node_id_t insert(std::span<const float> v) {
    std::unique_lock lk(update_mu_);
    return insert_locked(v);
  }

  void remove(node_id_t n) {
    std::unique_lock lk(update_mu_);
    store_->tombstone_vector(n);  // checks unknown-node / double-delete
    subtract_decoded_centroid(n);
    deletes_since_consolidate_++;
    if (opts_.auto_consolidate_permille > 0) {
      const std::uint64_t live = store_->live_count();
      const std::uint64_t threshold = std::max<std::uint64_t>(
          1, live * opts_.auto_consolidate_permille / 1000);
      if (deletes_since_consolidate_ >= threshold) consolidate_locked();
    }
  }

  void consolidate_deletes() {
    std::unique_lock lk(update_mu_);
    consolidate_locked();
  }

 private:
  Index() : placer_(PlacementPolicy{}) {}

  void train_quantizers(const VectorArray& data) {
    const VectorArray* train = &data;
    VectorArray sample;
    if (data.size() > opts_.train_sample_cap) {
      sample = VectorArray(data.dim());
      std::mt19937_64 rng(opts_.seed ^ 0xA5A5A5A5A5A5A5A5ull);
      std::vector<std::uint32_t> rows(data.size());
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<std::uint32_t>(i);
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(opts_.train_sample_cap);
      std::sort(rows.begin(), rows.end());
      for (std::uint32_t r : rows) sample.push_back(data[r]);
      train = &sample;
    }
    codebooks_.clear();
    for (std::uint32_t i = 0; i < opts_.num_pqs; ++i)
      codebooks_.push_back(train_pq(*train, opts_.pq_subspaces, i,
                                    derive_pq_seed(opts_.seed, i)));
  }

  static std::uint64_t derive_pq_seed(std::uint64_t seed, std::uint32_t pq_id) {
    return seed + (pq_id + 1) * 0x9E3779B97F4A7C15ull;
  }

  void subtract_decoded_centroid(node_id_t n) {
    // Centroid maintenance uses the PQ reconstruction of the deleted
    // vector; consolidation then never touches deleted vector pages.
    const DenseVector v = decode(code_of(0, n), codebooks_[0]);
    for (std::size_t j = 0; j < v.size(); ++j) centroid_sum_[j] -= v[j];
  }

  node_id_t insert_locked(std::span<const float> v) {
    if (v.size() != store_->dim())
      throw DimensionMismatch("insert: dimension mismatch");
    if (codebooks_.empty())
      throw InvalidParams("insert: quantizers not trained");

    if (store_->topo_record_count() == 0) return insert_first(v);

    const BuildParams& bp = opts_.build;
    const DistanceTable table_a = distance_table(v, codebooks_[0]);

    QueryContext ctx = buffer_->open_context();
    auto [queue, visited] = greedy_search(
        entry_, bp.L_build,
        [&](node_id_t n) { return pq_distance(0, n, table_a); },
        neighbor_provider(ctx));
    buffer_->end_query(ctx);

    // Candidate pool: queue plus everything the search expanded, reranked
    // with exact distances (one batched read) and truncated to MAX_C.
    std::vector<node_id_t> pool_ids;
    {
      std::unordered_set<node_id_t> seen;
      for (const Candidate& c : queue.entries())
        if (!store_->node_deleted(c.id) && seen.insert(c.id).second)
          pool_ids.push_back(c.id);
      for (node_id_t n : visited)
        if (!store_->node_deleted(n) && seen.insert(n).second)
          pool_ids.push_back(n);
    }
    if (pool_ids.empty()) return insert_orphan(v);

    const VectorArray pool_vecs = store_->read_vectors(pool_ids);
    std::unordered_map<node_id_t, std::uint32_t> row_of;
    std::vector<std::pair<node_id_t, float>> pool(pool_ids.size());
    for (std::size_t i = 0; i < pool_ids.size(); ++i) {
      row_of[pool_ids[i]] = static_cast<std::uint32_t>(i);
      pool[i] = {pool_ids[i], squared_l2(v.data(), pool_vecs[i].data(), v.size())};
      queue.update_exact(pool_ids[i], pool[i].second);
    }
    std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    if (pool.size() > bp.max_c) pool.resize(bp.max_c);

    std::vector<node_id_t> nearest;
    for (std::size_t i = 0; i < pool.size() && i < 3; ++i)
      nearest.push_back(pool[i].first);

    const node_id_t id = opts_.vector_layout_opt
                             ? placer_.place_vector(*store_, v, nearest)
                             : store_->append_vector(v);

    auto vec_of = [&](node_id_t n) -> std::span<const float> {
      if (n == id) return v;
      return pool_vecs[row_of.at(n)];
    };
    std::vector<node_id_t> nbrs = robust_prune(pool, bp, vec_of);

    TopologyRecord rec{id, nbrs};
    placer_.place_record(*store_, rec, nearest);
    grow_node_state(id);
    degree_[id] = static_cast<std::uint32_t>(nbrs.size());

    add_reverse_edges(id, v, nbrs, pool_vecs, row_of);

    for (std::size_t q = 0; q < codebooks_.size(); ++q)
      append_code(q, id, v);
    for (std::size_t j = 0; j < v.size(); ++j) centroid_sum_[j] += v[j];
    return id;
  }

  node_id_t insert_first(std::span<const float> v) {
    const node_id_t id = store_->append_vector(v);
    placer_.place_record(*store_, TopologyRecord{id, {}}, {});
    grow_node_state(id);
    for (std::size_t q = 0; q < codebooks_.size(); ++q) append_code(q, id, v);
    for (std::size_t j = 0; j < v.size(); ++j) centroid_sum_[j] += v[j];
    entry_ = id;
    return id;
  }

  // No live nodes reachable (everything tombstoned): start a fresh
  // component; consolidation will clean the rest up.
  node_id_t insert_orphan(std::span<const float> v) {
    const node_id_t id = store_->append_vector(v);
    placer_.place_fresh(*store_, TopologyRecord{id, {}});
    grow_node_state(id);
    for (std::size_t q = 0; q < codebooks_.size(); ++q) append_code(q, id, v);
    for (std::size_t j = 0; j < v.size(); ++j) centroid_sum_[j] += v[j];
    entry_ = id;
    return id;
  }

  void grow_node_state(node_id_t id) {
    if (degree_.size() <= id) degree_.resize(id + 1, 0);
  }

  void append_code(std::size_t q, node_id_t id, std::span<const float> v) {
    const std::size_t m = opts_.pq_subspaces;
    if (codes_[q].size() < (static_cast<std::size_t>(id) + 1) * m)
      codes_[q].resize((static_cast<std::size_t>(id) + 1) * m, 0);
    const PQCode c = encode(v, codebooks_[q]);
    std::copy(c.begin(), c.end(),
              codes_[q].begin() + static_cast<std::size_t>(id) * m);
  }

  /// Each chosen neighbor gains an edge back to the new node; lists that
  /// overflow R are re-pruned with exact distances. Updates are grouped so
  /// every affected page is read and written once.
  void add_reverse_edges(node_id_t id, std::span<const float> v,
                         const std::vector<node_id_t>& nbrs,
                         const VectorArray& pool_vecs,
                         const std::unordered_map<node_id_t, std::uint32_t>& pool_rows) {
    const BuildParams& bp = opts_.build;
    std::map<page_id_t, std::vector<node_id_t>> by_page;
    for (node_id_t u : nbrs) by_page[store_->topo_location(u).page].push_back(u);

    struct Pending {
      TopologyPage page;
      std::vector<std::uint32_t> slots;  // slots to update
    };
    std::vector<Pending> pending;
    std::vector<node_id_t> need_vectors;
    std::unordered_set<node_id_t> need_set;
    auto require_vec = [&](node_id_t n) {
      if (n == id || pool_rows.count(n) || !need_set.insert(n).second) return;
      need_vectors.push_back(n);
    };

    for (auto& [pg, nodes] : by_page) {
      Pending p;
      p.page = store_->read_topology_page(pg, nodes.size());
      for (node_id_t u : nodes) {
        const int slot = p.page.find_slot(u);
        if (slot < 0) throw Error("reverse edge: record missing");
        p.slots.push_back(static_cast<std::uint32_t>(slot));
        TopologyRecord& rec = p.page.slots[slot];
        rec.neighbors.push_back(id);
        if (rec.neighbors.size() > bp.R) {
          require_vec(u);
          for (node_id_t w : rec.neighbors)
            if (w != id && !store_->node_deleted(w)) require_vec(w);
        }
      }
      pending.push_back(std::move(p));
    }

    VectorArray fetched(store_->dim());
    std::unordered_map<node_id_t, std::uint32_t> fetched_rows;
    if (!need_vectors.empty()) {
      fetched = store_->read_vectors(need_vectors);
      for (std::size_t i = 0; i < need_vectors.size(); ++i)
        fetched_rows[need_vectors[i]] = static_cast<std::uint32_t>(i);
    }
    auto vec_of = [&](node_id_t n) -> std::span<const float> {
      if (n == id) return v;
      auto it = pool_rows.find(n);
      if (it != pool_rows.end()) return pool_vecs[it->second];
      return fetched[fetched_rows.at(n)];
    };

    for (Pending& p : pending) {
      for (std::uint32_t slot : p.slots) {
        TopologyRecord& rec = p.page.slots[slot];
        if (rec.neighbors.size() <= bp.R) continue;
        const std::span<const float> uv = vec_of(rec.node_id);
        std::vector<std::pair<node_id_t, float>> pool;
        for (node_id_t w : rec.neighbors) {
          if (store_->node_deleted(w)) continue;
          pool.push_back({w, squared_l2(uv, vec_of(w))});
        }
        rec.neighbors = robust_prune(std::move(pool), bp, vec_of);
      }
      store_->write_topology_page(p.page, p.slots.size());
      buffer_->note_page_write(p.page);
      for (std::uint32_t slot : p.slots) {
        const TopologyRecord& rec = p.page.slots[slot];
        grow_node_state(rec.node_id);
        degree_[rec.node_id] = static_cast<std::uint32_t>(rec.neighbors.size());
      }
    }
  }

  /// FreshDiskANN-style repair: every live node with deleted out-neighbors
  /// replaces them with the deleted nodes' own neighbors and re-prunes with
  /// exact distances. One pass over the topology file, page-grouped writes,
  /// and a consolidate-scoped vector cache for the candidate pools.
  void consolidate_locked() {
    const std::vector<node_id_t> deleted = store_->deleted_nodes();
    deletes_since_consolidate_ = 0;
    if (deleted.empty()) return;
    const std::unordered_set<node_id_t> dset(deleted.begin(), deleted.end());

    // Adjacency of the deleted nodes, page-deduplicated.
    std::unordered_map<node_id_t, std::vector<node_id_t>> del_nbrs;
    {
      std::map<page_id_t, std::vector<node_id_t>> by_page;
      for (node_id_t d : deleted)
        by_page[store_->topo_location(d).page].push_back(d);
      for (const auto& [pg, nodes] : by_page) {
        const TopologyPage page = store_->read_topology_page(pg, nodes.size());
        for (node_id_t d : nodes) {
          const int slot = page.find_slot(d);
          if (slot >= 0) del_nbrs[d] = page.slots[slot].neighbors;
        }
      }
    }

    // Consolidate-scoped vector cache: each vector is read at most once.
    VectorArray cache_store(store_->dim());
    std::unordered_map<node_id_t, std::uint32_t> cache_rows;
    auto fetch = [&](std::vector<node_id_t> ids) {
      std::vector<node_id_t> missing;
      for (node_id_t n : ids)
        if (!cache_rows.count(n)) missing.push_back(n);
      if (missing.empty()) return;
      std::sort(missing.begin(), missing.end());
      missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
      const VectorArray got = store_->read_vectors(missing);
      for (std::size_t i = 0; i < missing.size(); ++i) {
        cache_rows[missing[i]] = static_cast<std::uint32_t>(cache_store.size());
        cache_store.push_back(got[i]);
      }
    };
    auto vec_of = [&](node_id_t n) -> std::span<const float> {
      return cache_store[cache_rows.at(n)];
    };

    const BuildParams& bp = opts_.build;
    for (page_id_t pg = 0; pg < store_->topo_page_count(); ++pg) {
      const std::uint32_t occ = store_->topo_page_occupancy(pg);
      if (occ == 0) continue;
      TopologyPage page = store_->read_topology_page(pg, occ);
      std::uint64_t modified = 0;
      for (std::uint32_t slot = 0; slot < page.capacity(); ++slot) {
        if (!page.occupied(slot)) continue;
        TopologyRecord& rec = page.slots[slot];
        if (dset.count(rec.node_id)) {
          page.clear_slot(slot);
          modified++;
          continue;
        }
        std::vector<node_id_t> dn;
        for (node_id_t w : rec.neighbors)
          if (dset.count(w)) dn.push_back(w);
        if (dn.empty()) continue;

        std::unordered_set<node_id_t> cand_set;
        for (node_id_t w : rec.neighbors)
          if (!dset.count(w)) cand_set.insert(w);
        for (node_id_t d : dn)
          for (node_id_t w : del_nbrs[d])
            if (!dset.count(w) && w != rec.node_id) cand_set.insert(w);

        std::vector<node_id_t> cand(cand_set.begin(), cand_set.end());
        std::sort(cand.begin(), cand.end());
        std::vector<node_id_t> want = cand;
        want.push_back(rec.node_id);
        fetch(std::move(want));

        const std::span<const float> uv = vec_of(rec.node_id);
        std::vector<std::pair<node_id_t, float>> pool;
        pool.reserve(cand.size());
        for (node_id_t c : cand) pool.push_back({c, squared_l2(uv, vec_of(c))});
        rec.neighbors = robust_prune(std::move(pool), bp, vec_of);
        grow_node_state(rec.node_id);
        degree_[rec.node_id] = static_cast<std::uint32_t>(rec.neighbors.size());
        modified++;
      }
      if (modified) {
        store_->write_topology_page(page, modified);
        buffer_->note_page_write(page);
      }
    }

    store_->release_deleted(deleted);
    for (node_id_t d : deleted)
      if (d < degree_.size()) degree_[d] = 0;

    recompute_entry();
    if (opts_.pinned_pages > 0 && entry_ != kInvalidNode)
      buffer_->pin_entry_region(entry_, opts_.pinned_pages);
  }

  void recompute_entry() {
    const std::uint64_t live = store_->live_count();
    if (live == 0) {
      entry_ = kInvalidNode;
      buffer_->clear_pins();
      return;
    }
    std::vector<float> centroid(store_->dim());
    for (std::size_t j = 0; j < centroid.size(); ++j)
      centroid[j] = static_cast<float>(centroid_sum_[j] / static_cast<double>(live));

    node_id_t start = entry_;
    if (start == kInvalidNode || !store_->node_live(start)) {
      start = kInvalidNode;
      for (node_id_t n = 0; n < store_->next_node_id(); ++n)
        if (store_->node_live(n)) {
          start = n;
          break;
        }
    }
    if (start == kInvalidNode) {
      entry_ = kInvalidNode;
      return;
    }

    const DistanceTable table_a = distance_table(centroid, codebooks_[0]);
    QueryContext ctx = buffer_->open_context();
    auto [queue, visited] = greedy_search(
        start, opts_.build.L_build,
        [&](node_id_t n) { return pq_distance(0, n, table_a); },
        neighbor_provider(ctx));
    buffer_->end_query(ctx);

    std::vector<node_id_t> pool;
    for (const Candidate& c : queue.entries())
      if (store_->node_live(c.id)) pool.push_back(c.id);
    if (pool.empty()) {
      entry_ = start;
      return;
    }
    const VectorArray vecs = store_->read_vectors(pool);
    node_id_t best = pool[0];
    float best_d = std::numeric_limits<float>::max();
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const float d = squared_l2(centroid.data(), vecs[i].data(), centroid.size());
      if (d < best_d || (d == best_d && pool[i] < best)) {
        best_d = d;
        best = pool[i];
      }
    }
    entry_ = best;
  }

  std::filesystem::path base_;
  IndexOptions opts_;
  std::unique_ptr<Store> store_;
  std::unique_ptr<BufferManager> buffer_;
  Placer placer_;
  std::vector<PQCodebook> codebooks_;
  std::vector<std::vector<std::uint8_t>> codes_;  // [pq][node*m + j]
  std::vector<std::uint32_t> degree_;
  std::vector<double> centroid_sum_;
  node_id_t entry_ = kInvalidNode;
  std::uint32_t tau_T_ = 0;
  std::uint64_t deletes_since_consolidate_ = 0;
  mutable std::shared_mutex update_mu_;
};

// --- index persistence ------------------------------------------------------
// `<base>.index` holds the graph-level state (little-endian):
//   magic "DGIX", version u32, entry u32, R u32, L_build u32, MAX_C u32,
//   alpha f32, num_pqs u32, m u32, seed u64, tau_T u32, permille u32,
//   buffer_pages u64, pinned_pages u64, D u64 centroid sums (f64),
//   per-node degrees (u64 count + u32 each).
// Codebooks live in `<base>.pq<i>` (DGPQ format) and codes in
// `<base>.codes<i>`: magic "DGCD", pq_id u32, m u32, count u64, bytes.

inline void Index::save() {
  std::unique_lock lk(update_mu_);
  store_->flush();
  {
    std::ofstream f(base_.string() + ".index", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("Index::save: io-failure");
    auto put = [&f](const auto& v) {
      f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    };
    f.write("DGIX", 4);
    put(std::uint32_t{1});
    put(entry_);
    put(opts_.build.R);
    put(opts_.build.L_build);
    put(opts_.build.max_c);
    put(opts_.build.alpha);
    put(opts_.num_pqs);
    put(opts_.pq_subspaces);
    put(opts_.seed);
    put(tau_T_);
    put(opts_.auto_consolidate_permille);
    put(static_cast<std::uint64_t>(opts_.buffer_pages));
    put(static_cast<std::uint64_t>(opts_.pinned_pages));
    for (double c : centroid_sum_) put(c);
    put(static_cast<std::uint64_t>(degree_.size()));
    for (std::uint32_t d : degree_) put(d);
    if (!f) throw IoError("Index::save: io-failure");
  }
  for (std::size_t i = 0; i < codebooks_.size(); ++i) {
    save_codebook(codebooks_[i], base_.string() + ".pq" + std::to_string(i));
    std::ofstream f(base_.string() + ".codes" + std::to_string(i),
                    std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("Index::save: io-failure");
    auto put = [&f](const auto& v) {
      f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    };
    f.write("DGCD", 4);
    put(static_cast<std::uint32_t>(i));
    put(opts_.pq_subspaces);
    put(static_cast<std::uint64_t>(codes_[i].size() / opts_.pq_subspaces));
    f.write(reinterpret_cast<const char*>(codes_[i].data()),
            static_cast<std::streamsize>(codes_[i].size()));
    if (!f) throw IoError("Index::save: io-failure");
  }
}

inline std::unique_ptr<Index> Index::open(const std::filesystem::path& base) {
  auto idx = std::unique_ptr<Index>(new Index());
  idx->base_ = base;
  idx->store_ = Store::open(base);

  std::ifstream f(base.string() + ".index", std::ios::binary);
  if (!f) throw IoError("Index::open: cannot open " + base.string() + ".index");
  auto get = [&f](auto& v) { f.read(reinterpret_cast<char*>(&v), sizeof(v)); };
  char magic[4];
  std::uint32_t version = 0;
  f.read(magic, 4);
  get(version);
  if (!f || std::memcmp(magic, "DGIX", 4) != 0 || version != 1)
    throw MalformedInput("Index::open: bad header");
  get(idx->entry_);
  get(idx->opts_.build.R);
  get(idx->opts_.build.L_build);
  get(idx->opts_.build.max_c);
  get(idx->opts_.build.alpha);
  get(idx->opts_.num_pqs);
  get(idx->opts_.pq_subspaces);
  get(idx->opts_.seed);
  get(idx->tau_T_);
  get(idx->opts_.auto_consolidate_permille);
  std::uint64_t buffer_pages = 0, pinned_pages = 0;
  get(buffer_pages);
  get(pinned_pages);
  idx->opts_.buffer_pages = buffer_pages;
  idx->opts_.pinned_pages = pinned_pages;
  idx->opts_.vector_layout_opt = idx->store_->options().vector_layout_opt;
  idx->opts_.coupled_accounting = idx->store_->options().coupled_accounting;
  idx->centroid_sum_.resize(idx->store_->dim());
  for (double& c : idx->centroid_sum_) get(c);
  std::uint64_t deg_count = 0;
  get(deg_count);
  idx->degree_.resize(deg_count);
  for (std::uint32_t& d : idx->degree_) get(d);
  if (!f) throw MalformedInput("Index::open: truncated");

  idx->buffer_ = std::make_unique<BufferManager>(*idx->store_, idx->opts_.buffer_pages);
  for (std::uint32_t i = 0; i < idx->opts_.num_pqs; ++i) {
    idx->codebooks_.push_back(
        load_codebook(base.string() + ".pq" + std::to_string(i)));
    std::ifstream cf(base.string() + ".codes" + std::to_string(i),
                     std::ios::binary);
    if (!cf) throw IoError("Index::open: missing codes file");
    char cm[4];
    std::uint32_t pq_id = 0, m = 0;
    std::uint64_t count = 0;
    cf.read(cm, 4);
    cf.read(reinterpret_cast<char*>(&pq_id), 4);
    cf.read(reinterpret_cast<char*>(&m), 4);
    cf.read(reinterpret_cast<char*>(&count), 8);
    if (!cf || std::memcmp(cm, "DGCD", 4) != 0 || m != idx->opts_.pq_subspaces)
      throw MalformedInput("Index::open: bad codes header");
    std::vector<std::uint8_t> codes(count * m);
    cf.read(reinterpret_cast<char*>(codes.data()),
            static_cast<std::streamsize>(codes.size()));
    if (!cf) throw MalformedInput("Index::open: truncated codes");
    idx->codes_.push_back(std::move(codes));
  }
  if (idx->opts_.pinned_pages > 0 && idx->entry_ != kInvalidNode)
    idx->buffer_->pin_entry_region(idx->entry_, idx->opts_.pinned_pages);
  return idx;
}

}  // namespace dgann
