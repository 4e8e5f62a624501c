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

#include <filesystem>
#include <random>

#include "dgann/pagestore.hpp"

namespace dgann::test {

/// Fresh scratch directory under the system temp dir, wiped on destruction.
struct ScratchDir {
  std::filesystem::path path;

  explicit ScratchDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("dgann_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~ScratchDir() { std::filesystem::remove_all(path); }

  std::filesystem::path operator/(const std::string& name) const {
    return path / name;
  }
};

/// Appends a vector and binds its topology record at the first free slot
/// of the last page (sequential placement, no reorder policy).
inline node_id_t place_seq(Store& store, std::span<const float> v,
                           std::vector<node_id_t> neighbors = {}) {
  const node_id_t id = store.append_vector(v);
  page_id_t pg = kInvalidPage;
  for (page_id_t p = 0; p < store.topo_page_count(); ++p)
    if (store.topo_page_occupancy(p) < store.topo_capacity()) {
      pg = p;
      break;
    }
  if (pg == kInvalidPage) pg = store.allocate_topology_page();
  TopologyPage page = store.read_topology_page(pg, 1);
  const int slot = page.first_free_slot();
  page.slots[slot] = TopologyRecord{id, std::move(neighbors)};
  store.write_topology_page(page, 1);
  store.bind_topology_slot(id, PageSlot{pg, static_cast<std::uint32_t>(slot)});
  return id;
}

inline VectorArray uniform_vectors(std::size_t n, std::size_t dim,
                                   std::uint32_t seed, float lo = -1.f,
                                   float hi = 1.f) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  VectorArray out(dim, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) out[i][j] = u(rng);
  return out;
}

}  // namespace dgann::test
