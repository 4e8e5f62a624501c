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

#include <map>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dgann/pagestore.hpp"

namespace dgann {

struct PlacementPolicy {
  std::uint32_t top_n_pages = 3;  // candidate pages examined per placement
};

/// Incremental similarity-aware placement: a new node's record goes to the
/// first non-full page among the pages of its nearest existing nodes
/// (nearest-first); if all candidates are full, the nearest node's page is
/// split by graph adjacency and the new node joins its nearest neighbor.
///
/// Runs only under the index writer token. Split-internal page I/O charges
/// no coupled-equivalent bytes (a coupled layout has no split).
class Placer {
 public:
  explicit Placer(PlacementPolicy policy = {}) : policy_(policy) {
    if (policy_.top_n_pages < 1)
      throw InvalidParams("PlacementPolicy: top_n_pages must be >= 1");
  }

  const PlacementPolicy& policy() const { return policy_; }

  /// Places and writes `rec`; `nearest` is ordered ascending by exact
  /// distance to the new vector. Returns the chosen page.
  page_id_t place_record(Store& store, const TopologyRecord& rec,
                         std::span<const node_id_t> nearest) {
    if (store.has_topo_slot(rec.node_id))
      throw InvalidParams("place_node: node already placed");
    if (nearest.empty()) {
      if (store.topo_record_count() != 0)
        throw InvalidParams("place_node: empty-nearest");
      const page_id_t pg = store.allocate_topology_page();
      return insert_into(store, pg, rec);
    }

    for (page_id_t pg : candidate_pages(store, nearest)) {
      if (store.topo_page_occupancy(pg) < store.topo_capacity())
        return insert_into(store, pg, rec);
    }

    // All candidate pages full. Single-record pages cannot be split into
    // anything with room, so fall back to a fresh page.
    if (store.topo_capacity() < 2) {
      const page_id_t pg = store.allocate_topology_page();
      return insert_into(store, pg, rec);
    }
    split_page(store, store.topo_location(nearest[0]).page);
    const page_id_t target = store.topo_location(nearest[0]).page;
    return insert_into(store, target, rec);
  }

  /// Places a record on a freshly allocated page, bypassing candidates.
  page_id_t place_fresh(Store& store, const TopologyRecord& rec) {
    const page_id_t pg = store.allocate_topology_page();
    return insert_into(store, pg, rec);
  }

  /// Splits a full page: members are redistributed over {old, new}; an
  /// unassigned member seeds the currently smaller page and its graph
  /// neighbors inside the page follow it while that page holds fewer than
  /// half the members.
  std::pair<page_id_t, page_id_t> split_page(Store& store, page_id_t p) {
    TopologyPage old_pg = store.read_topology_page(p, 0);
    if (!old_pg.full()) throw PageNotFull("split_page: page-not-full");

    std::vector<TopologyRecord> members;
    members.reserve(old_pg.capacity());
    for (std::uint32_t s = 0; s < old_pg.capacity(); ++s)
      if (old_pg.occupied(s)) members.push_back(old_pg.slots[s]);

    const page_id_t p_new = store.allocate_topology_page();
    auto side = assign_sides(members);

    TopologyPage pages[2];
    pages[0] = TopologyPage{p, old_pg.max_degree, {}};
    pages[0].slots.resize(old_pg.capacity());
    pages[1] = TopologyPage{p_new, old_pg.max_degree, {}};
    pages[1].slots.resize(old_pg.capacity());
    std::uint32_t next_slot[2] = {0, 0};
    for (std::size_t i = 0; i < members.size(); ++i) {
      const int t = side[i];
      const std::uint32_t slot = next_slot[t]++;
      pages[t].slots[slot] = members[i];
      store.bind_topology_slot(members[i].node_id,
                               PageSlot{pages[t].page_id, slot});
    }
    store.write_topology_page(pages[0], 0);
    store.write_topology_page(pages[1], 0);
    return {p, p_new};
  }

  /// Vector-file variant of place_record, used when the vector layout
  /// optimization flag is on. Returns the new node id.
  node_id_t place_vector(Store& store, std::span<const float> v,
                         std::span<const node_id_t> nearest) {
    if (nearest.empty()) return store.append_vector(v);

    std::vector<page_id_t> cands;
    for (node_id_t n : nearest) {
      const page_id_t pg = store.vec_location(n).page;
      bool dup = false;
      for (page_id_t c : cands) dup |= (c == pg);
      if (!dup) cands.push_back(pg);
      if (cands.size() >= policy_.top_n_pages) break;
    }
    for (page_id_t pg : cands) {
      const int slot = free_vec_slot(store, pg);
      if (slot >= 0)
        return store.append_vector_at(v, PageSlot{pg, static_cast<std::uint32_t>(slot)});
    }
    if (store.vec_capacity() < 2)
      return store.append_vector_at(v, PageSlot{store.allocate_vector_page(), 0});
    split_vector_page(store, store.vec_location(nearest[0]).page);
    const page_id_t target = store.vec_location(nearest[0]).page;
    const int slot = free_vec_slot(store, target);
    return store.append_vector_at(v, PageSlot{target, static_cast<std::uint32_t>(slot)});
  }

  std::pair<page_id_t, page_id_t> split_vector_page(Store& store, page_id_t p) {
    const std::uint32_t cap = store.vec_capacity();
    if (store.vec_page_occupancy(p) != cap)
      throw PageNotFull("split_vector_page: page-not-full");
    VectorPage old_pg = store.read_vector_page(p, 0);

    std::vector<node_id_t> owners;
    for (std::uint32_t s = 0; s < cap; ++s)
      owners.push_back(store.vec_owner(PageSlot{p, s}));

    // Similarity relation = graph adjacency among the owners; their
    // topology records are fetched page-deduplicated.
    std::vector<TopologyRecord> members(owners.size());
    std::map<page_id_t, std::vector<std::size_t>> by_page;
    for (std::size_t i = 0; i < owners.size(); ++i) {
      if (store.has_topo_slot(owners[i]))
        by_page[store.topo_location(owners[i]).page].push_back(i);
      members[i].node_id = owners[i];
    }
    for (const auto& [pg, idxs] : by_page) {
      const TopologyPage tp = store.read_topology_page(pg, 0);
      for (std::size_t i : idxs) {
        const int slot = tp.find_slot(owners[i]);
        if (slot >= 0) members[i] = tp.slots[slot];
      }
    }

    const page_id_t p_new = store.allocate_vector_page();
    auto side = assign_sides(members);

    VectorPage pages[2];
    pages[0] = VectorPage{p, store.dim(), {}};
    pages[1] = VectorPage{p_new, store.dim(), {}};
    for (auto& pg : pages)
      pg.data.assign(static_cast<std::size_t>(cap) * store.dim(), 0.f);
    std::uint32_t next_slot[2] = {0, 0};
    for (std::size_t i = 0; i < owners.size(); ++i) {
      const int t = side[i];
      const std::uint32_t slot = next_slot[t]++;
      auto dst = pages[t].vector_at(slot);
      auto src = old_pg.vector_at(static_cast<std::uint32_t>(i));
      std::copy(src.begin(), src.end(), dst.begin());
      store.rebind_vector_slot(owners[i], PageSlot{pages[t].page_id, slot});
    }
    store.write_vector_page(pages[0], 0);
    store.write_vector_page(pages[1], 0);
    return {p, p_new};
  }

 private:
  std::vector<page_id_t> candidate_pages(Store& store,
                                         std::span<const node_id_t> nearest) {
    std::vector<page_id_t> cands;
    for (node_id_t n : nearest) {
      const page_id_t pg = store.topo_location(n).page;
      bool dup = false;
      for (page_id_t c : cands) dup |= (c == pg);
      if (!dup) cands.push_back(pg);
      if (cands.size() >= policy_.top_n_pages) break;
    }
    return cands;
  }

  page_id_t insert_into(Store& store, page_id_t pg, const TopologyRecord& rec) {
    TopologyPage page = store.read_topology_page(pg, 1);
    const int slot = page.first_free_slot();
    if (slot < 0) throw Error("place_node: page unexpectedly full");
    page.slots[slot] = rec;
    store.write_topology_page(page, 1);
    store.bind_topology_slot(rec.node_id,
                             PageSlot{pg, static_cast<std::uint32_t>(slot)});
    return pg;
  }

  static int free_vec_slot(Store& store, page_id_t pg) {
    for (std::uint32_t s = 0; s < store.vec_capacity(); ++s)
      if (store.vec_owner(PageSlot{pg, s}) == kInvalidNode)
        return static_cast<int>(s);
    return -1;
  }

  // Seed-to-smaller with neighbor-following capped at half the members.
  // Returns the side (0 = old page, 1 = new page) per member, iterating
  // members in slot order; ties go to the old page.
  std::vector<int> assign_sides(const std::vector<TopologyRecord>& members) {
    const std::size_t n = members.size();
    std::unordered_map<node_id_t, std::size_t> index;
    for (std::size_t i = 0; i < n; ++i) index[members[i].node_id] = i;

    std::vector<int> side(n, -1);
    std::size_t sizes[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      int t = side[i];
      if (t < 0) {
        t = sizes[0] <= sizes[1] ? 0 : 1;
        side[i] = t;
        sizes[t]++;
      }
      for (node_id_t w : members[i].neighbors) {
        auto it = index.find(w);
        if (it == index.end() || side[it->second] >= 0) continue;
        if (2 * sizes[t] >= n) break;
        side[it->second] = t;
        sizes[t]++;
      }
    }
    return side;
  }

  PlacementPolicy policy_;
};

}  // namespace dgann
