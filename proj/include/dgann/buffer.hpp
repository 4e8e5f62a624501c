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

#include <deque>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <unordered_map>
#include <unordered_set>

#include "dgann/pagestore.hpp"

namespace dgann {

struct BufferStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t pinned_hits = 0;

  double hit_rate() const {
    const std::uint64_t total = hits + pinned_hits + misses;
    return total ? static_cast<double>(hits + pinned_hits) / total : 0.0;
  }
};

/// Topology pages cached by a single in-flight search. Pages belong to
/// exactly one context (plus the shared pinned region) and are evicted
/// wholesale when the context ends.
class QueryContext {
 public:
  std::uint64_t id() const { return id_; }
  bool closed() const { return closed_; }
  const BufferStats& stats() const { return stats_; }
  std::size_t resident_pages() const { return pages_.size(); }
  std::size_t resident_bytes() const { return pages_.size() * kPageSize; }

 private:
  friend class BufferManager;
  struct Slot {
    std::shared_ptr<const TopologyPage> page;
    std::uint64_t stamp = 0;
  };
  std::uint64_t id_ = 0;
  std::size_t budget_pages_ = 0;
  std::uint64_t clock_ = 0;
  bool closed_ = false;
  BufferStats stats_;
  std::unordered_map<page_id_t, Slot> pages_;
};

/// Query-level topology-page buffer. Vector pages are never buffered.
/// A small static region of pages near the entry node can be pinned and
/// is shared read-only across contexts.
class BufferManager {
 public:
  explicit BufferManager(Store& store, std::size_t budget_pages = 64)
      : store_(store), budget_pages_(budget_pages) {}

  std::size_t budget_pages() const { return budget_pages_; }
  void set_budget_pages(std::size_t b) { budget_pages_ = b; }

  QueryContext open_context() {
    QueryContext ctx;
    ctx.id_ = next_ctx_.fetch_add(1);
    ctx.budget_pages_ = budget_pages_;
    return ctx;
  }

  std::shared_ptr<const TopologyPage> get_page(QueryContext& ctx,
                                               page_id_t page) {
    if (ctx.closed_) throw ClosedContext("get_page: closed-context");
    {
      std::shared_lock lk(pin_mu_);
      auto it = pinned_.find(page);
      if (it != pinned_.end()) {
        ctx.stats_.pinned_hits++;
        return it->second;
      }
    }
    auto it = ctx.pages_.find(page);
    if (it != ctx.pages_.end()) {
      ctx.stats_.hits++;
      it->second.stamp = ++ctx.clock_;
      return it->second.page;
    }
    ctx.stats_.misses++;
    auto loaded =
        std::make_shared<const TopologyPage>(store_.read_topology_page(page, 1));
    ctx.pages_[page] = QueryContext::Slot{loaded, ++ctx.clock_};
    if (ctx.pages_.size() > ctx.budget_pages_) evict_lru(ctx);
    return loaded;
  }

  void end_query(QueryContext& ctx) {
    if (ctx.closed_) throw ClosedContext("end_query: double-close");
    ctx.pages_.clear();
    ctx.closed_ = true;
    std::lock_guard lk(stats_mu_);
    folded_.hits += ctx.stats_.hits;
    folded_.misses += ctx.stats_.misses;
    folded_.pinned_hits += ctx.stats_.pinned_hits;
  }

  /// BFS from the entry node until `k_pages` distinct topology pages are
  /// touched; those pages are pinned. Fixed at index open / consolidate.
  void pin_entry_region(node_id_t entry, std::size_t k_pages) {
    std::unique_lock lk(pin_mu_);
    pinned_.clear();
    if (k_pages == 0) return;
    if (!store_.has_topo_slot(entry))
      throw EmptyIndex("pin_entry_region: empty-index");

    std::unordered_set<node_id_t> visited;
    std::deque<node_id_t> frontier{entry};
    visited.insert(entry);
    while (!frontier.empty() && pinned_.size() < k_pages) {
      const node_id_t n = frontier.front();
      frontier.pop_front();
      if (!store_.has_topo_slot(n)) continue;
      const PageSlot loc = store_.topo_location(n);
      auto it = pinned_.find(loc.page);
      if (it == pinned_.end()) {
        it = pinned_
                 .emplace(loc.page, std::make_shared<const TopologyPage>(
                                        store_.read_topology_page(loc.page, 1)))
                 .first;
      }
      const int slot = it->second->find_slot(n);
      if (slot < 0) continue;
      for (node_id_t w : it->second->slots[slot].neighbors)
        if (visited.insert(w).second) frontier.push_back(w);
    }
  }

  /// Writer-side hook: keeps a pinned page coherent after it is rewritten.
  /// Contexts opened after the update see the new content; in-flight
  /// contexts holding the old shared_ptr keep a consistent old copy.
  void note_page_write(const TopologyPage& page) {
    std::unique_lock lk(pin_mu_);
    auto it = pinned_.find(page.page_id);
    if (it != pinned_.end())
      it->second = std::make_shared<const TopologyPage>(page);
  }

  void clear_pins() {
    std::unique_lock lk(pin_mu_);
    pinned_.clear();
  }

  std::size_t pinned_pages() const {
    std::shared_lock lk(pin_mu_);
    return pinned_.size();
  }
  bool is_pinned(page_id_t p) const {
    std::shared_lock lk(pin_mu_);
    return pinned_.count(p) != 0;
  }

  BufferStats folded_stats() const {
    std::lock_guard lk(stats_mu_);
    return folded_;
  }
  void reset_folded_stats() {
    std::lock_guard lk(stats_mu_);
    folded_ = BufferStats{};
  }

 private:
  static void evict_lru(QueryContext& ctx) {
    auto victim = ctx.pages_.begin();
    for (auto it = ctx.pages_.begin(); it != ctx.pages_.end(); ++it)
      if (it->second.stamp < victim->second.stamp) victim = it;
    ctx.pages_.erase(victim);
  }

  Store& store_;
  std::size_t budget_pages_;
  mutable std::shared_mutex pin_mu_;
  std::unordered_map<page_id_t, std::shared_ptr<const TopologyPage>> pinned_;
  mutable std::mutex stats_mu_;
  BufferStats folded_;
  std::atomic<std::uint64_t> next_ctx_{0};
};

}  // namespace dgann
