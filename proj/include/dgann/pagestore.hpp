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

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <span>
#include <unordered_set>
#include <vector>

#include "dgann/common.hpp"

namespace dgann {

// ---------------------------------------------------------------------------
// Records and pages
// ---------------------------------------------------------------------------

/// A node's bounded adjacency list. Serialized as
/// [node_id u32][neighbor_count u32][R u32 neighbor ids, 0xFFFFFFFF padded].
struct TopologyRecord {
  node_id_t node_id = kInvalidNode;
  std::vector<node_id_t> neighbors;
};

inline constexpr std::uint32_t topology_record_size(std::uint32_t R) {
  return 4 * (R + 2);
}

/// A 4096-byte page holding up to floor(4096 / record_size) records.
/// A slot is free iff its node_id is the sentinel.
struct TopologyPage {
  page_id_t page_id = kInvalidPage;
  std::uint32_t max_degree = 0;  // R
  std::vector<TopologyRecord> slots;

  static std::uint32_t capacity_for(std::uint32_t R) {
    return static_cast<std::uint32_t>(kPageSize) / topology_record_size(R);
  }

  std::uint32_t capacity() const {
    return static_cast<std::uint32_t>(slots.size());
  }
  bool occupied(std::uint32_t slot) const {
    return slots[slot].node_id != kInvalidNode;
  }
  std::uint32_t occupancy() const {
    std::uint32_t n = 0;
    for (const auto& r : slots) n += (r.node_id != kInvalidNode);
    return n;
  }
  bool full() const { return occupancy() == capacity(); }

  int find_slot(node_id_t node) const {
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (slots[i].node_id == node) return static_cast<int>(i);
    return -1;
  }
  int first_free_slot() const {
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (slots[i].node_id == kInvalidNode) return static_cast<int>(i);
    return -1;
  }

  void clear_slot(std::uint32_t slot) {
    slots[slot].node_id = kInvalidNode;
    slots[slot].neighbors.clear();
  }

  void serialize(std::uint8_t* out /* kPageSize bytes */) const {
    std::memset(out, 0, kPageSize);
    const std::uint32_t rs = topology_record_size(max_degree);
    for (std::size_t i = 0; i < slots.size(); ++i) {
      std::uint8_t* p = out + i * rs;
      const TopologyRecord& r = slots[i];
      if (r.neighbors.size() > max_degree)
        throw DegreeOverflow("TopologyPage: record exceeds max degree");
      const std::uint32_t cnt = static_cast<std::uint32_t>(r.neighbors.size());
      std::memcpy(p, &r.node_id, 4);
      std::memcpy(p + 4, &cnt, 4);
      std::uint32_t j = 0;
      for (; j < cnt; ++j) std::memcpy(p + 8 + 4 * j, &r.neighbors[j], 4);
      for (; j < max_degree; ++j) std::memcpy(p + 8 + 4 * j, &kInvalidNode, 4);
    }
  }

  static TopologyPage parse(page_id_t pid, std::uint32_t R,
                            const std::uint8_t* in) {
    TopologyPage pg;
    pg.page_id = pid;
    pg.max_degree = R;
    const std::uint32_t cap = capacity_for(R);
    const std::uint32_t rs = topology_record_size(R);
    pg.slots.resize(cap);
    for (std::uint32_t i = 0; i < cap; ++i) {
      const std::uint8_t* p = in + static_cast<std::size_t>(i) * rs;
      TopologyRecord& r = pg.slots[i];
      std::memcpy(&r.node_id, p, 4);
      if (r.node_id == kInvalidNode) continue;
      std::uint32_t cnt = 0;
      std::memcpy(&cnt, p + 4, 4);
      if (cnt > R) throw Error("TopologyPage: corrupt neighbor count");
      r.neighbors.resize(cnt);
      if (cnt) std::memcpy(r.neighbors.data(), p + 8, 4 * cnt);
    }
    return pg;
  }
};

/// A 4096-byte page of raw vectors; slot ownership lives in the directory.
struct VectorPage {
  page_id_t page_id = kInvalidPage;
  std::uint32_t dim = 0;
  std::vector<float> data;  // capacity * dim

  static std::uint32_t capacity_for(std::uint32_t D) {
    return static_cast<std::uint32_t>(kPageSize) / (D * 4);
  }
  std::uint32_t capacity() const {
    return dim ? static_cast<std::uint32_t>(data.size() / dim) : 0;
  }
  std::span<const float> vector_at(std::uint32_t slot) const {
    return {data.data() + static_cast<std::size_t>(slot) * dim, dim};
  }
  std::span<float> vector_at(std::uint32_t slot) {
    return {data.data() + static_cast<std::size_t>(slot) * dim, dim};
  }
};

struct PageSlot {
  page_id_t page = kInvalidPage;
  std::uint32_t slot = 0;

  bool valid() const { return page != kInvalidPage; }
  friend bool operator==(const PageSlot& a, const PageSlot& b) {
    return a.page == b.page && a.slot == b.slot;
  }
  friend bool operator<(const PageSlot& a, const PageSlot& b) {
    return a.page != b.page ? a.page < b.page : a.slot < b.slot;
  }
};

// ---------------------------------------------------------------------------
// I/O accounting
// ---------------------------------------------------------------------------

struct IoStatsSnapshot {
  std::uint64_t topo_pages_read = 0;
  std::uint64_t topo_pages_written = 0;
  std::uint64_t vec_pages_read = 0;
  std::uint64_t vec_pages_written = 0;
  std::uint64_t bytes_read = 0;
  std::uint64_t bytes_written = 0;
  std::uint64_t coupled_equiv_bytes = 0;

  std::uint64_t bytes_total() const { return bytes_read + bytes_written; }

  IoStatsSnapshot operator-(const IoStatsSnapshot& o) const {
    IoStatsSnapshot d;
    d.topo_pages_read = topo_pages_read - o.topo_pages_read;
    d.topo_pages_written = topo_pages_written - o.topo_pages_written;
    d.vec_pages_read = vec_pages_read - o.vec_pages_read;
    d.vec_pages_written = vec_pages_written - o.vec_pages_written;
    d.bytes_read = bytes_read - o.bytes_read;
    d.bytes_written = bytes_written - o.bytes_written;
    d.coupled_equiv_bytes = coupled_equiv_bytes - o.coupled_equiv_bytes;
    return d;
  }
};

class IoStats {
 public:
  void add_topo_read(std::uint64_t pages) {
    topo_pages_read_ += pages;
    bytes_read_ += pages * kPageSize;
  }
  void add_topo_write(std::uint64_t pages) {
    topo_pages_written_ += pages;
    bytes_written_ += pages * kPageSize;
  }
  void add_vec_read(std::uint64_t pages) {
    vec_pages_read_ += pages;
    bytes_read_ += pages * kPageSize;
  }
  void add_vec_write(std::uint64_t pages) {
    vec_pages_written_ += pages;
    bytes_written_ += pages * kPageSize;
  }
  void add_coupled(std::uint64_t pages) {
    coupled_equiv_bytes_ += pages * kPageSize;
  }

  IoStatsSnapshot snapshot() const {
    IoStatsSnapshot s;
    s.topo_pages_read = topo_pages_read_.load();
    s.topo_pages_written = topo_pages_written_.load();
    s.vec_pages_read = vec_pages_read_.load();
    s.vec_pages_written = vec_pages_written_.load();
    s.bytes_read = bytes_read_.load();
    s.bytes_written = bytes_written_.load();
    s.coupled_equiv_bytes = coupled_equiv_bytes_.load();
    return s;
  }

  void restore(const IoStatsSnapshot& s) {
    topo_pages_read_ = s.topo_pages_read;
    topo_pages_written_ = s.topo_pages_written;
    vec_pages_read_ = s.vec_pages_read;
    vec_pages_written_ = s.vec_pages_written;
    bytes_read_ = s.bytes_read;
    bytes_written_ = s.bytes_written;
    coupled_equiv_bytes_ = s.coupled_equiv_bytes;
  }

 private:
  std::atomic<std::uint64_t> topo_pages_read_{0}, topo_pages_written_{0};
  std::atomic<std::uint64_t> vec_pages_read_{0}, vec_pages_written_{0};
  std::atomic<std::uint64_t> bytes_read_{0}, bytes_written_{0};
  std::atomic<std::uint64_t> coupled_equiv_bytes_{0};
};

// ---------------------------------------------------------------------------
// Directory
// ---------------------------------------------------------------------------

/// In-memory node -> (page,slot) maps for both files, plus free lists and
/// the tombstoned-node set. Every live node appears in both maps.
struct Directory {
  std::vector<PageSlot> topo_loc;  // indexed by node id
  std::vector<PageSlot> vec_loc;
  std::vector<std::uint32_t> topo_page_used;
  std::vector<std::uint32_t> vec_page_used;
  std::vector<node_id_t> vec_slot_owner;  // page*cap + slot -> node
  std::set<PageSlot> vec_free;            // slots reclaimed by consolidation
  std::unordered_set<node_id_t> deleted;

  bool known(node_id_t n) const {
    return n < topo_loc.size() || n < vec_loc.size();
  }
  bool has_vec(node_id_t n) const {
    return n < vec_loc.size() && vec_loc[n].valid();
  }
  bool has_topo(node_id_t n) const {
    return n < topo_loc.size() && topo_loc[n].valid();
  }
  bool is_deleted(node_id_t n) const { return deleted.count(n) != 0; }
  bool live(node_id_t n) const { return has_vec(n) && !is_deleted(n); }
};

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

/// Owns the two page files of the decoupled layout (`<base>.topo`,
/// `<base>.vec`), the directory, and byte-level I/O accounting including
/// the coupled-layout cost emulator.
///
/// Accounting rules: real counters advance per physical 4 KB page moved.
/// `coupled_equiv_bytes` advances per *logical node* touched by each
/// store-level access, mirroring the op structure (a read-modify-write
/// charges a read page and a written page per node). Page splits are a
/// decoupled-only mechanism and charge no coupled bytes.
struct StoreOptions {
  bool vector_layout_opt = false;  // reorder policy drives vector placement
  bool coupled_accounting = true;
};

class Store {
 public:
  static std::unique_ptr<Store> create(const std::filesystem::path& base,
                                       std::uint32_t D, std::uint32_t R,
                                       StoreOptions opts = StoreOptions()) {
    if (D < 1 || R < 1) throw InvalidParams("create_store: invalid-params");
    if (TopologyPage::capacity_for(R) < 1)
      throw InvalidParams("create_store: record larger than a page");
    if (VectorPage::capacity_for(D) < 1)
      throw InvalidParams("create_store: vector larger than a page");
    auto s = std::unique_ptr<Store>(new Store());
    s->base_ = base;
    s->D_ = D;
    s->R_ = R;
    s->opts_ = opts;
    s->topo_fd_ = ::open((base.string() + ".topo").c_str(),
                         O_RDWR | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    s->vec_fd_ = ::open((base.string() + ".vec").c_str(),
                        O_RDWR | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (s->topo_fd_ < 0 || s->vec_fd_ < 0)
      throw IoError("create_store: io-failure opening " + base.string());
    s->flush();
    return s;
  }

  static std::unique_ptr<Store> open(const std::filesystem::path& base) {
    auto s = std::unique_ptr<Store>(new Store());
    s->base_ = base;
    s->load_meta();
    s->topo_fd_ = ::open((base.string() + ".topo").c_str(),
                         O_RDWR | O_CLOEXEC);
    s->vec_fd_ = ::open((base.string() + ".vec").c_str(), O_RDWR | O_CLOEXEC);
    if (s->topo_fd_ < 0 || s->vec_fd_ < 0)
      throw IoError("open_store: io-failure opening " + base.string());
    s->load_dir();
    return s;
  }

  ~Store() {
    if (topo_fd_ >= 0) ::close(topo_fd_);
    if (vec_fd_ >= 0) ::close(vec_fd_);
  }
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  // -- geometry -------------------------------------------------------------

  std::uint32_t dim() const { return D_; }
  std::uint32_t max_degree() const { return R_; }
  std::uint32_t record_size() const { return topology_record_size(R_); }
  std::uint32_t topo_capacity() const { return TopologyPage::capacity_for(R_); }
  std::uint32_t vec_capacity() const { return VectorPage::capacity_for(D_); }

  /// Nodes per page of an equivalent coupled (vector+topology) layout.
  std::uint32_t coupled_capacity() const {
    return static_cast<std::uint32_t>(kPageSize) / (D_ * 4 + record_size());
  }
  /// Bytes fetched per record read over bytes actually needed.
  double read_amplification() const {
    return static_cast<double>(kPageSize) / (4.0 * (R_ + 1));
  }

  std::uint64_t topo_page_count() const { return topo_pages_; }
  std::uint64_t vec_page_count() const { return vec_pages_; }
  std::uint64_t next_node_id() const { return next_node_; }
  std::uint64_t live_count() const {
    std::shared_lock lk(mu_);
    return live_count_locked();
  }
  const StoreOptions& options() const { return opts_; }

  IoStatsSnapshot io_snapshot() const { return stats_.snapshot(); }
  IoStats& stats() { return stats_; }

  // -- directory views --------------------------------------------------------

  PageSlot topo_location(node_id_t n) const {
    std::shared_lock lk(mu_);
    if (!dir_.has_topo(n)) throw UnknownNode("topo_location: unknown-node");
    return dir_.topo_loc[n];
  }
  PageSlot vec_location(node_id_t n) const {
    std::shared_lock lk(mu_);
    if (!dir_.has_vec(n)) throw UnknownNode("vec_location: unknown-node");
    return dir_.vec_loc[n];
  }
  bool node_live(node_id_t n) const {
    std::shared_lock lk(mu_);
    return dir_.live(n);
  }
  bool has_topo_slot(node_id_t n) const {
    std::shared_lock lk(mu_);
    return dir_.has_topo(n);
  }
  bool node_deleted(node_id_t n) const {
    std::shared_lock lk(mu_);
    return dir_.is_deleted(n);
  }
  std::vector<node_id_t> deleted_nodes() const {
    std::shared_lock lk(mu_);
    std::vector<node_id_t> v(dir_.deleted.begin(), dir_.deleted.end());
    std::sort(v.begin(), v.end());
    return v;
  }
  std::uint32_t topo_page_occupancy(page_id_t p) const {
    std::shared_lock lk(mu_);
    return dir_.topo_page_used.at(p);
  }
  std::uint64_t topo_record_count() const {
    std::shared_lock lk(mu_);
    std::uint64_t n = 0;
    for (std::uint32_t u : dir_.topo_page_used) n += u;
    return n;
  }
  std::uint32_t vec_page_occupancy(page_id_t p) const {
    std::shared_lock lk(mu_);
    return dir_.vec_page_used.at(p);
  }

  // -- topology file ----------------------------------------------------------

  /// Reads one full 4 KB page. `nodes_charged` is the number of logical
  /// node accesses this read serves, for the coupled emulator.
  TopologyPage read_topology_page(page_id_t p, std::uint64_t nodes_charged = 1) {
    std::shared_lock lk(mu_);
    return read_topo_page_locked(p, nodes_charged);
  }

  /// Returns the record and the full page it lives in (the page is
  /// surfaced so callers can reuse co-located records).
  std::pair<TopologyRecord, TopologyPage> read_topology(node_id_t n) {
    std::shared_lock lk(mu_);
    if (!dir_.has_topo(n) || dir_.is_deleted(n))
      throw UnknownNode("read_topology: unknown-node");
    const PageSlot loc = dir_.topo_loc[n];
    TopologyPage pg = read_topo_page_locked(loc.page, 1);
    return {pg.slots[loc.slot], std::move(pg)};
  }

  /// Record access without the liveness check (consolidation internals).
  TopologyRecord read_topology_raw(node_id_t n) {
    std::shared_lock lk(mu_);
    if (!dir_.has_topo(n)) throw UnknownNode("read_topology_raw: unknown-node");
    const PageSlot loc = dir_.topo_loc[n];
    TopologyPage pg = read_topo_page_locked(loc.page, 1);
    return pg.slots[loc.slot];
  }

  /// Rewrites one record in place (read-modify-write of its page).
  void write_topology(const TopologyRecord& rec) {
    std::unique_lock lk(mu_);
    if (!dir_.has_topo(rec.node_id) || dir_.is_deleted(rec.node_id))
      throw UnknownNode("write_topology: unknown-node");
    if (rec.neighbors.size() > R_)
      throw DegreeOverflow("write_topology: degree-overflow");
    const PageSlot loc = dir_.topo_loc[rec.node_id];
    TopologyPage pg = read_topo_page_locked(loc.page, 1);
    pg.slots[loc.slot] = rec;
    write_topo_page_locked(pg, 1);
  }

  /// Writes a whole page the caller already holds. `nodes_charged` is the
  /// number of records logically modified.
  void write_topology_page(const TopologyPage& pg,
                           std::uint64_t nodes_charged) {
    std::unique_lock lk(mu_);
    write_topo_page_locked(pg, nodes_charged);
  }

  /// Appends one formatted (all-free) page to the topology file.
  page_id_t allocate_topology_page() {
    std::unique_lock lk(mu_);
    TopologyPage pg;
    pg.page_id = static_cast<page_id_t>(topo_pages_);
    pg.max_degree = R_;
    pg.slots.resize(topo_capacity());
    topo_pages_++;
    dir_.topo_page_used.push_back(0);
    write_topo_page_locked(pg, 0);
    return pg.page_id;
  }

  /// Directory-only placement bookkeeping; page content is the caller's.
  void bind_topology_slot(node_id_t n, PageSlot loc) {
    std::unique_lock lk(mu_);
    if (n >= dir_.topo_loc.size())
      dir_.topo_loc.resize(n + 1, PageSlot{});
    if (!dir_.topo_loc[n].valid()) dir_.topo_page_used[loc.page]++;
    else dir_.topo_page_used[dir_.topo_loc[n].page]--,
         dir_.topo_page_used[loc.page]++;
    dir_.topo_loc[n] = loc;
  }

  // -- vector file -------------------------------------------------------------

  /// Appends a vector at the lowest free (page,slot); returns the new id.
  node_id_t append_vector(std::span<const float> v) {
    std::unique_lock lk(mu_);
    if (v.size() != D_) throw DimensionMismatch("append_vector: dimension mismatch");
    const PageSlot loc = pick_append_slot_locked();
    return append_at_locked(v, loc);
  }

  /// Appends at a slot chosen by the placement policy.
  node_id_t append_vector_at(std::span<const float> v, PageSlot loc) {
    std::unique_lock lk(mu_);
    if (v.size() != D_) throw DimensionMismatch("append_vector_at: dimension mismatch");
    if (loc.page >= vec_pages_ || loc.slot >= vec_capacity() ||
        vec_owner_locked(loc) != kInvalidNode)
      throw InvalidParams("append_vector_at: slot unavailable");
    return append_at_locked(v, loc);
  }

  /// Marks the node's vector as deleted (lazy; directory-only).
  void tombstone_vector(node_id_t n) {
    std::unique_lock lk(mu_);
    if (!dir_.has_vec(n)) throw UnknownNode("tombstone_vector: unknown-node");
    if (dir_.is_deleted(n)) throw DoubleDelete("tombstone_vector: double-delete");
    dir_.deleted.insert(n);
  }

  /// Batched vector fetch: deduplicates pages, one read per distinct page,
  /// output order matches input order.
  VectorArray read_vectors(std::span<const node_id_t> nodes,
                           std::uint64_t* pages_out = nullptr) {
    std::shared_lock lk(mu_);
    for (node_id_t n : nodes)
      if (!dir_.live(n)) throw UnknownNode("read_vectors: unknown-node");
    return read_vectors_locked(nodes, pages_out);
  }

  /// Same as read_vectors but permits tombstoned nodes (consolidation).
  VectorArray read_vectors_raw(std::span<const node_id_t> nodes,
                               std::uint64_t* pages_out = nullptr) {
    std::shared_lock lk(mu_);
    for (node_id_t n : nodes)
      if (!dir_.has_vec(n)) throw UnknownNode("read_vectors_raw: unknown-node");
    return read_vectors_locked(nodes, pages_out);
  }

  VectorPage read_vector_page(page_id_t p, std::uint64_t nodes_charged = 1) {
    std::shared_lock lk(mu_);
    if (p >= vec_pages_) throw InvalidParams("read_vector_page: page-unknown");
    VectorPage pg;
    pg.page_id = p;
    pg.dim = D_;
    pg.data.resize(static_cast<std::size_t>(vec_capacity()) * D_);
    std::uint8_t buf[kPageSize];
    pread_page(vec_fd_, p, buf);
    std::memcpy(pg.data.data(), buf, pg.data.size() * sizeof(float));
    stats_.add_vec_read(1);
    charge_coupled(nodes_charged);
    return pg;
  }

  void write_vector_page(const VectorPage& pg, std::uint64_t nodes_charged) {
    std::unique_lock lk(mu_);
    write_vec_page_locked(pg, nodes_charged);
  }

  page_id_t allocate_vector_page() {
    std::unique_lock lk(mu_);
    return allocate_vec_page_locked();
  }

  /// Moves a vector to a new slot (page-split support). Caller rewrites
  /// the affected pages itself; this updates the directory only.
  void rebind_vector_slot(node_id_t n, PageSlot loc) {
    std::unique_lock lk(mu_);
    const PageSlot old = dir_.vec_loc[n];
    dir_.vec_slot_owner[lin_slot(old)] = kInvalidNode;
    dir_.vec_page_used[old.page]--;
    dir_.vec_loc[n] = loc;
    dir_.vec_slot_owner[lin_slot(loc)] = n;
    dir_.vec_page_used[loc.page]++;
  }

  node_id_t vec_owner(PageSlot loc) const {
    std::shared_lock lk(mu_);
    return vec_owner_locked(loc);
  }

  // -- deletion lifecycle -------------------------------------------------------

  /// Frees the slots of consolidated nodes. Topology page *content* must
  /// already be cleared by the caller's page writes; this releases the
  /// directory entries and returns vector slots to the free list.
  void release_deleted(std::span<const node_id_t> nodes) {
    std::unique_lock lk(mu_);
    for (node_id_t n : nodes) {
      if (!dir_.is_deleted(n)) throw UnknownNode("release_deleted: not deleted");
      dir_.deleted.erase(n);
      if (dir_.has_topo(n)) {
        dir_.topo_page_used[dir_.topo_loc[n].page]--;
        dir_.topo_loc[n] = PageSlot{};
      }
      const PageSlot v = dir_.vec_loc[n];
      dir_.vec_slot_owner[lin_slot(v)] = kInvalidNode;
      dir_.vec_page_used[v.page]--;
      dir_.vec_free.insert(v);
      dir_.vec_loc[n] = PageSlot{};
    }
  }

  // -- integrity ----------------------------------------------------------------

  /// Full-file scan oracle: checks that both directory maps are bijective
  /// onto the occupied slots and that occupancy counters agree. Throws on
  /// the first violation.
  void verify_integrity() {
    std::shared_lock lk(mu_);
    std::vector<char> seen;
    for (page_id_t p = 0; p < topo_pages_; ++p) {
      const TopologyPage pg =
          read_topo_page_locked(p, dir_.topo_page_used[p]);
      std::uint32_t occ = 0;
      for (std::uint32_t s = 0; s < pg.capacity(); ++s) {
        if (!pg.occupied(s)) continue;
        occ++;
        const node_id_t n = pg.slots[s].node_id;
        if (!dir_.has_topo(n) || !(dir_.topo_loc[n] == PageSlot{p, s}))
          throw Error("integrity: topology record not mapped to its slot");
        if (pg.slots[s].neighbors.size() > R_)
          throw Error("integrity: degree overflow on disk");
        if (n >= seen.size()) seen.resize(n + 1, 0);
        if (seen[n]) throw Error("integrity: node appears in two slots");
        seen[n] = 1;
      }
      if (occ != dir_.topo_page_used[p])
        throw Error("integrity: topology occupancy counter mismatch");
    }
    for (node_id_t n = 0; n < dir_.topo_loc.size(); ++n)
      if (dir_.topo_loc[n].valid() && (n >= seen.size() || !seen[n]))
        throw Error("integrity: directory maps node to an empty slot");

    std::vector<std::uint32_t> used(vec_pages_, 0);
    for (node_id_t n = 0; n < dir_.vec_loc.size(); ++n) {
      const PageSlot v = dir_.vec_loc[n];
      if (!v.valid()) continue;
      if (v.page >= vec_pages_ || v.slot >= vec_capacity())
        throw Error("integrity: vector slot out of range");
      if (dir_.vec_slot_owner[lin_slot(v)] != n)
        throw Error("integrity: vector slot owner mismatch");
      used[v.page]++;
    }
    for (page_id_t p = 0; p < vec_pages_; ++p)
      if (used[p] != dir_.vec_page_used[p])
        throw Error("integrity: vector occupancy counter mismatch");
    for (const PageSlot& f : dir_.vec_free)
      if (dir_.vec_slot_owner[lin_slot(f)] != kInvalidNode)
        throw Error("integrity: free-list slot is owned");
    for (node_id_t n : dir_.deleted)
      if (!dir_.has_vec(n))
        throw Error("integrity: deleted node missing from directory");
  }

  // -- persistence ----------------------------------------------------------------

  void flush() {
    std::shared_lock lk(mu_);
    save_meta();
    save_dir();
  }

 private:
  Store() = default;

  std::uint64_t live_count_locked() const {
    std::uint64_t n = 0;
    for (node_id_t i = 0; i < dir_.vec_loc.size(); ++i)
      if (dir_.vec_loc[i].valid() && !dir_.is_deleted(i)) n++;
    return n;
  }

  std::size_t lin_slot(PageSlot s) const {
    return static_cast<std::size_t>(s.page) * vec_capacity() + s.slot;
  }
  node_id_t vec_owner_locked(PageSlot s) const {
    const std::size_t i = lin_slot(s);
    return i < dir_.vec_slot_owner.size() ? dir_.vec_slot_owner[i]
                                          : kInvalidNode;
  }

  void charge_coupled(std::uint64_t node_page_ops) {
    if (!opts_.coupled_accounting) return;
    stats_.add_coupled(node_page_ops * coupled_pages_per_node());
  }
  std::uint64_t coupled_pages_per_node() const {
    const std::uint32_t cap = coupled_capacity();
    if (cap >= 1) return 1;
    return (D_ * 4 + record_size() + kPageSize - 1) / kPageSize;
  }

  static void pread_page(int fd, page_id_t p, std::uint8_t* buf) {
    const ::ssize_t r =
        ::pread(fd, buf, kPageSize, static_cast<off_t>(p) * kPageSize);
    if (r != static_cast<::ssize_t>(kPageSize))
      throw IoError("pread: io-failure");
  }
  static void pwrite_page(int fd, page_id_t p, const std::uint8_t* buf) {
    const ::ssize_t w =
        ::pwrite(fd, buf, kPageSize, static_cast<off_t>(p) * kPageSize);
    if (w != static_cast<::ssize_t>(kPageSize))
      throw IoError("pwrite: io-failure");
  }

  TopologyPage read_topo_page_locked(page_id_t p, std::uint64_t nodes_charged) {
    if (p >= topo_pages_)
      throw InvalidParams("read_topology_page: page-unknown");
    std::uint8_t buf[kPageSize];
    pread_page(topo_fd_, p, buf);
    stats_.add_topo_read(1);
    charge_coupled(nodes_charged);
    return TopologyPage::parse(p, R_, buf);
  }

  void write_topo_page_locked(const TopologyPage& pg,
                              std::uint64_t nodes_charged) {
    if (pg.page_id >= topo_pages_)
      throw InvalidParams("write_topology_page: page-unknown");
    std::uint8_t buf[kPageSize];
    pg.serialize(buf);
    pwrite_page(topo_fd_, pg.page_id, buf);
    stats_.add_topo_write(1);
    charge_coupled(nodes_charged);
  }

  void write_vec_page_locked(const VectorPage& pg, std::uint64_t nodes_charged) {
    if (pg.page_id >= vec_pages_)
      throw InvalidParams("write_vector_page: page-unknown");
    std::uint8_t buf[kPageSize];
    std::memset(buf, 0, kPageSize);
    std::memcpy(buf, pg.data.data(), pg.data.size() * sizeof(float));
    pwrite_page(vec_fd_, pg.page_id, buf);
    stats_.add_vec_write(1);
    charge_coupled(nodes_charged);
  }

  page_id_t allocate_vec_page_locked() {
    const page_id_t p = static_cast<page_id_t>(vec_pages_);
    vec_pages_++;
    dir_.vec_page_used.push_back(0);
    dir_.vec_slot_owner.resize(vec_pages_ * vec_capacity(), kInvalidNode);
    if (::ftruncate(vec_fd_, static_cast<off_t>(vec_pages_) * kPageSize) != 0)
      throw IoError("allocate_vector_page: io-failure");
    return p;
  }

  PageSlot pick_append_slot_locked() {
    if (!dir_.vec_free.empty()) {
      const PageSlot s = *dir_.vec_free.begin();
      dir_.vec_free.erase(dir_.vec_free.begin());
      return s;
    }
    if (vec_pages_ > 0) {
      const page_id_t last = static_cast<page_id_t>(vec_pages_ - 1);
      if (dir_.vec_page_used[last] < vec_capacity()) {
        for (std::uint32_t s = 0; s < vec_capacity(); ++s)
          if (vec_owner_locked(PageSlot{last, s}) == kInvalidNode)
            return PageSlot{last, s};
      }
    }
    return PageSlot{allocate_vec_page_locked(), 0};
  }

  node_id_t append_at_locked(std::span<const float> v, PageSlot loc) {
    if (next_node_ >= kInvalidNode) throw StoreFull("append_vector: store full");
    const node_id_t id = static_cast<node_id_t>(next_node_++);

    // RMW unless this is the first slot written to a still-empty page.
    std::uint8_t buf[kPageSize];
    const bool blind = dir_.vec_page_used[loc.page] == 0;
    if (blind) std::memset(buf, 0, kPageSize);
    else {
      pread_page(vec_fd_, loc.page, buf);
      stats_.add_vec_read(1);
    }
    std::memcpy(buf + static_cast<std::size_t>(loc.slot) * D_ * 4, v.data(),
                D_ * 4);
    pwrite_page(vec_fd_, loc.page, buf);
    stats_.add_vec_write(1);
    charge_coupled(blind ? 1 : 2);

    if (id >= dir_.vec_loc.size()) dir_.vec_loc.resize(id + 1, PageSlot{});
    dir_.vec_loc[id] = loc;
    dir_.vec_slot_owner[lin_slot(loc)] = id;
    dir_.vec_page_used[loc.page]++;
    return id;
  }

  VectorArray read_vectors_locked(std::span<const node_id_t> nodes,
                                  std::uint64_t* pages_out) {
    VectorArray out(D_);
    if (nodes.empty()) {
      if (pages_out) *pages_out = 0;
      return out;
    }
    std::map<page_id_t, std::vector<std::size_t>> by_page;  // page -> input idx
    for (std::size_t i = 0; i < nodes.size(); ++i)
      by_page[dir_.vec_loc[nodes[i]].page].push_back(i);

    out.resize_rows(nodes.size());
    std::uint8_t buf[kPageSize];
    for (const auto& [page, idxs] : by_page) {
      pread_page(vec_fd_, page, buf);
      stats_.add_vec_read(1);
      for (std::size_t i : idxs) {
        const PageSlot loc = dir_.vec_loc[nodes[i]];
        std::memcpy(out[i].data(),
                    buf + static_cast<std::size_t>(loc.slot) * D_ * 4, D_ * 4);
      }
    }
    charge_coupled(nodes.size());
    if (pages_out) *pages_out = by_page.size();
    return out;
  }

  // -- meta / dir files ------------------------------------------------------

  template <class T>
  static void put(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <class T>
  static void get(std::ifstream& f, T& v) {
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
  }

  void save_meta() const {
    std::ofstream f(base_.string() + ".meta", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("save_meta: io-failure");
    f.write("DGMT", 4);
    put<std::uint32_t>(f, 1);  // version
    put(f, D_);
    put(f, R_);
    put<std::uint64_t>(f, topo_pages_);
    put<std::uint64_t>(f, vec_pages_);
    put<std::uint64_t>(f, next_node_);
    put<std::uint8_t>(f, opts_.vector_layout_opt);
    put<std::uint8_t>(f, opts_.coupled_accounting);
    const IoStatsSnapshot s = stats_.snapshot();
    put(f, s.topo_pages_read);
    put(f, s.topo_pages_written);
    put(f, s.vec_pages_read);
    put(f, s.vec_pages_written);
    put(f, s.bytes_read);
    put(f, s.bytes_written);
    put(f, s.coupled_equiv_bytes);
    if (!f) throw IoError("save_meta: io-failure");
  }

  void load_meta() {
    std::ifstream f(base_.string() + ".meta", std::ios::binary);
    if (!f) throw IoError("load_meta: cannot open " + base_.string() + ".meta");
    char magic[4];
    std::uint32_t version = 0;
    f.read(magic, 4);
    get(f, version);
    if (!f || std::memcmp(magic, "DGMT", 4) != 0 || version != 1)
      throw MalformedInput("load_meta: bad header");
    get(f, D_);
    get(f, R_);
    get(f, topo_pages_);
    get(f, vec_pages_);
    get(f, next_node_);
    std::uint8_t vlo = 0, ca = 1;
    get(f, vlo);
    get(f, ca);
    opts_.vector_layout_opt = vlo;
    opts_.coupled_accounting = ca;
    IoStatsSnapshot s;
    get(f, s.topo_pages_read);
    get(f, s.topo_pages_written);
    get(f, s.vec_pages_read);
    get(f, s.vec_pages_written);
    get(f, s.bytes_read);
    get(f, s.bytes_written);
    get(f, s.coupled_equiv_bytes);
    if (!f) throw MalformedInput("load_meta: truncated");
    stats_.restore(s);
  }

  void save_dir() const {
    std::ofstream f(base_.string() + ".dir", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("save_dir: io-failure");
    f.write("DGDR", 4);
    put<std::uint32_t>(f, 1);
    auto write_map = [&](const std::vector<PageSlot>& m) {
      std::uint64_t cnt = 0;
      for (const auto& s : m) cnt += s.valid();
      put(f, cnt);
      for (node_id_t n = 0; n < m.size(); ++n) {
        if (!m[n].valid()) continue;
        put(f, n);
        put(f, m[n].page);
        put(f, m[n].slot);
      }
    };
    write_map(dir_.topo_loc);
    write_map(dir_.vec_loc);
    std::vector<node_id_t> del(dir_.deleted.begin(), dir_.deleted.end());
    std::sort(del.begin(), del.end());
    put<std::uint64_t>(f, del.size());
    for (node_id_t n : del) put(f, n);
    put<std::uint64_t>(f, dir_.vec_free.size());
    for (const PageSlot& s : dir_.vec_free) {
      put(f, s.page);
      put(f, s.slot);
    }
    if (!f) throw IoError("save_dir: io-failure");
  }

  void load_dir() {
    std::ifstream f(base_.string() + ".dir", std::ios::binary);
    if (!f) throw IoError("load_dir: cannot open " + base_.string() + ".dir");
    char magic[4];
    std::uint32_t version = 0;
    f.read(magic, 4);
    get(f, version);
    if (!f || std::memcmp(magic, "DGDR", 4) != 0 || version != 1)
      throw MalformedInput("load_dir: bad header");
    auto read_map = [&](std::vector<PageSlot>& m) {
      std::uint64_t cnt = 0;
      get(f, cnt);
      for (std::uint64_t i = 0; i < cnt; ++i) {
        node_id_t n = 0;
        PageSlot s;
        get(f, n);
        get(f, s.page);
        get(f, s.slot);
        if (n >= m.size()) m.resize(n + 1, PageSlot{});
        m[n] = s;
      }
    };
    read_map(dir_.topo_loc);
    read_map(dir_.vec_loc);
    std::uint64_t cnt = 0;
    get(f, cnt);
    for (std::uint64_t i = 0; i < cnt; ++i) {
      node_id_t n = 0;
      get(f, n);
      dir_.deleted.insert(n);
    }
    get(f, cnt);
    for (std::uint64_t i = 0; i < cnt; ++i) {
      PageSlot s;
      get(f, s.page);
      get(f, s.slot);
      dir_.vec_free.insert(s);
    }
    if (!f) throw MalformedInput("load_dir: truncated");

    dir_.topo_page_used.assign(topo_pages_, 0);
    dir_.vec_page_used.assign(vec_pages_, 0);
    dir_.vec_slot_owner.assign(vec_pages_ * vec_capacity(), kInvalidNode);
    for (node_id_t n = 0; n < dir_.topo_loc.size(); ++n)
      if (dir_.topo_loc[n].valid()) dir_.topo_page_used[dir_.topo_loc[n].page]++;
    for (node_id_t n = 0; n < dir_.vec_loc.size(); ++n) {
      if (!dir_.vec_loc[n].valid()) continue;
      dir_.vec_page_used[dir_.vec_loc[n].page]++;
      dir_.vec_slot_owner[lin_slot(dir_.vec_loc[n])] = n;
    }
  }

  std::filesystem::path base_;
  int topo_fd_ = -1, vec_fd_ = -1;
  std::uint32_t D_ = 0, R_ = 0;
  StoreOptions opts_;
  std::uint64_t topo_pages_ = 0, vec_pages_ = 0;
  std::uint64_t next_node_ = 0;
  Directory dir_;
  mutable IoStats stats_;
  mutable std::shared_mutex mu_;
};

}  // namespace dgann
