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
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "dgann/common.hpp"

namespace dgann {

inline constexpr std::uint32_t kPqBookSize = 256;  // codes are single bytes

/// Per-vector code: one centroid index per subspace.
using PQCode = std::vector<std::uint8_t>;

/// Independent product quantizer: m subspaces, 256 centroids each.
struct PQCodebook {
  std::uint32_t num_subspaces = 0;  // m
  std::uint32_t subdim = 0;         // D / m
  std::uint32_t pq_id = 0;          // PQ-A = 0, PQ-B = 1, ...
  std::vector<float> centroids;     // m * 256 * subdim, subspace-major

  std::uint32_t dim() const { return num_subspaces * subdim; }

  const float* centroid(std::uint32_t j, std::uint32_t c) const {
    return centroids.data() +
           (static_cast<std::size_t>(j) * kPqBookSize + c) * subdim;
  }
  float* centroid(std::uint32_t j, std::uint32_t c) {
    return centroids.data() +
           (static_cast<std::size_t>(j) * kPqBookSize + c) * subdim;
  }
};

/// Per-query lookup table: entries[j*256 + c] is the squared distance
/// between the query's j-th subvector and centroid (j, c).
struct DistanceTable {
  std::uint32_t num_subspaces = 0;
  std::vector<float> entries;  // m * 256

  const float* row(std::uint32_t j) const {
    return entries.data() + static_cast<std::size_t>(j) * kPqBookSize;
  }
};

namespace detail {

// Uniform double in [0,1) from the top 53 bits; portable across stdlibs.
inline double unit_real(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Lloyd's k-means over flat (n x d) points with k-means++ seeding.
// Initial centroids are distinct input points; if fewer than `k` distinct
// points exist the run stops early and the caller fills the remainder.
inline std::size_t kmeans(const std::vector<float>& pts, std::size_t n,
                          std::size_t d, std::size_t k, std::mt19937_64& rng,
                          float* out /* k*d */, std::size_t max_iters,
                          double rel_tol) {
  std::vector<float> mindist(n, std::numeric_limits<float>::max());
  std::vector<std::uint32_t> chosen;
  chosen.reserve(k);
  chosen.push_back(static_cast<std::uint32_t>(rng() % n));
  while (chosen.size() < k) {
    const float* last = pts.data() + static_cast<std::size_t>(chosen.back()) * d;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float dd = squared_l2(pts.data() + i * d, last, d);
      if (dd < mindist[i]) mindist[i] = dd;
      total += mindist[i];
    }
    if (total <= 0.0) break;  // fewer distinct points than k
    double r = unit_real(rng) * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      r -= mindist[i];
      if (r <= 0.0 && mindist[i] > 0.0f) {
        pick = i;
        break;
      }
    }
    chosen.push_back(static_cast<std::uint32_t>(pick));
  }

  const std::size_t keff = chosen.size();
  for (std::size_t c = 0; c < keff; ++c)
    std::memcpy(out + c * d, pts.data() + static_cast<std::size_t>(chosen[c]) * d,
                d * sizeof(float));

  std::vector<std::uint32_t> assign(n, 0);
  std::vector<double> sums(keff * d);
  std::vector<std::size_t> counts(keff);
  double prev_inertia = std::numeric_limits<double>::max();
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), std::size_t{0});
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = pts.data() + i * d;
      float best = std::numeric_limits<float>::max();
      std::uint32_t bc = 0;
      for (std::size_t c = 0; c < keff; ++c) {
        const float dd = squared_l2(p, out + c * d, d);
        if (dd < best) {
          best = dd;
          bc = static_cast<std::uint32_t>(c);
        }
      }
      assign[i] = bc;
      inertia += best;
      counts[bc]++;
      double* s = sums.data() + static_cast<std::size_t>(bc) * d;
      for (std::size_t j = 0; j < d; ++j) s[j] += p[j];
    }
    // Re-seed empty clusters to the point farthest from its centroid.
    for (std::size_t c = 0; c < keff; ++c) {
      if (counts[c] != 0) continue;
      float far_d = -1.f;
      std::size_t far_i = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[assign[i]] <= 1) continue;  // keep donor clusters non-empty
        const float dd =
            squared_l2(pts.data() + i * d, out + static_cast<std::size_t>(assign[i]) * d, d);
        if (dd > far_d) {
          far_d = dd;
          far_i = i;
        }
      }
      if (far_d < 0.f) break;
      counts[assign[far_i]]--;
      assign[far_i] = static_cast<std::uint32_t>(c);
      counts[c] = 1;
      std::memcpy(out + c * d, pts.data() + far_i * d, d * sizeof(float));
    }
    for (std::size_t c = 0; c < keff; ++c) {
      if (counts[c] == 0) continue;
      const double inv = 1.0 / static_cast<double>(counts[c]);
      const double* s = sums.data() + c * d;
      float* o = out + c * d;
      for (std::size_t j = 0; j < d; ++j)
        o[j] = static_cast<float>(s[j] * inv);
    }
    if (inertia == 0.0) break;
    if (prev_inertia != std::numeric_limits<double>::max() &&
        std::abs(prev_inertia - inertia) < rel_tol * prev_inertia)
      break;
    prev_inertia = inertia;
  }
  return keff;
}

}  // namespace detail

/// Trains one product quantizer with per-subspace k-means (k = 256,
/// k-means++ seeding, 25 iterations or relative-inertia change < 1e-4).
/// Deterministic given (vectors, m, seed). Subspaces with fewer than 256
/// distinct subvectors get their centroid slots filled by duplication.
inline PQCodebook train_pq(const VectorArray& vectors, std::uint32_t m,
                           std::uint32_t pq_id, std::uint64_t seed) {
  if (vectors.empty()) throw EmptyInput("train_pq: empty-input");
  const std::size_t dim = vectors.dim();
  if (m == 0 || dim % m != 0)
    throw DimensionMismatch("train_pq: dimension-not-divisible");

  PQCodebook cb;
  cb.num_subspaces = m;
  cb.subdim = static_cast<std::uint32_t>(dim / m);
  cb.pq_id = pq_id;
  cb.centroids.assign(static_cast<std::size_t>(m) * kPqBookSize * cb.subdim, 0.f);

  std::mt19937_64 rng(seed);
  const std::size_t n = vectors.size();
  const std::size_t d = cb.subdim;
  std::vector<float> pts(n * d);
  for (std::uint32_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i)
      std::memcpy(pts.data() + i * d, vectors[i].data() + j * d,
                  d * sizeof(float));
    float* out = cb.centroid(j, 0);
    const std::size_t keff =
        detail::kmeans(pts, n, d, kPqBookSize, rng, out, 25, 1e-4);
    for (std::size_t c = keff; c < kPqBookSize; ++c)
      std::memcpy(out + c * d, out + (c % keff) * d, d * sizeof(float));
  }
  return cb;
}

/// Nearest centroid per subspace; ties broken by lowest centroid index.
inline PQCode encode(std::span<const float> v, const PQCodebook& cb) {
  if (v.size() != cb.dim())
    throw DimensionMismatch("encode: dimension mismatch");
  PQCode code(cb.num_subspaces);
  for (std::uint32_t j = 0; j < cb.num_subspaces; ++j) {
    const float* slice = v.data() + static_cast<std::size_t>(j) * cb.subdim;
    float best = std::numeric_limits<float>::max();
    std::uint32_t bc = 0;
    for (std::uint32_t c = 0; c < kPqBookSize; ++c) {
      const float d = squared_l2(slice, cb.centroid(j, c), cb.subdim);
      if (d < best) {
        best = d;
        bc = c;
      }
    }
    code[j] = static_cast<std::uint8_t>(bc);
  }
  return code;
}

/// Concatenation of the code's centroids (the reconstructed vector).
inline DenseVector decode(std::span<const std::uint8_t> code,
                          const PQCodebook& cb) {
  if (code.size() != cb.num_subspaces)
    throw DimensionMismatch("decode: code length mismatch");
  DenseVector v(cb.dim());
  for (std::uint32_t j = 0; j < cb.num_subspaces; ++j)
    std::memcpy(v.data() + static_cast<std::size_t>(j) * cb.subdim,
                cb.centroid(j, code[j]), cb.subdim * sizeof(float));
  return v;
}

inline DistanceTable distance_table(std::span<const float> q,
                                    const PQCodebook& cb) {
  if (q.size() != cb.dim())
    throw DimensionMismatch("distance_table: dimension mismatch");
  DistanceTable t;
  t.num_subspaces = cb.num_subspaces;
  t.entries.resize(static_cast<std::size_t>(cb.num_subspaces) * kPqBookSize);
  for (std::uint32_t j = 0; j < cb.num_subspaces; ++j) {
    const float* slice = q.data() + static_cast<std::size_t>(j) * cb.subdim;
    float* row = t.entries.data() + static_cast<std::size_t>(j) * kPqBookSize;
    for (std::uint32_t c = 0; c < kPqBookSize; ++c)
      row[c] = squared_l2(slice, cb.centroid(j, c), cb.subdim);
  }
  return t;
}

/// Asymmetric distance: sum of table entries in ascending subspace order.
/// The fixed order makes the batch kernel bit-identical.
inline float adc(std::span<const std::uint8_t> code, const DistanceTable& t) {
  if (code.size() != t.num_subspaces)
    throw DimensionMismatch("adc: length mismatch");
  float acc = 0.f;
  for (std::uint32_t j = 0; j < t.num_subspaces; ++j)
    acc += t.row(j)[code[j]];
  return acc;
}

/// Subspace-major batch ADC over flat codes (n x m). Distances contributed
/// by one subspace are accumulated for all vectors before moving to the
/// next; per-vector accumulation order is unchanged, so each output is
/// bit-identical to adc() on the same code.
inline void batch_adc_flat(const std::uint8_t* codes, std::size_t n,
                           const DistanceTable& t, float* out) {
  const std::size_t m = t.num_subspaces;
  std::fill(out, out + n, 0.f);
  for (std::size_t j = 0; j < m; ++j) {
    const float* row = t.row(static_cast<std::uint32_t>(j));
    const std::uint8_t* cj = codes + j;
    for (std::size_t i = 0; i < n; ++i) out[i] += row[cj[i * m]];
  }
}

inline std::vector<float> batch_adc(const std::vector<PQCode>& codes,
                                    const DistanceTable& t) {
  const std::size_t m = t.num_subspaces;
  std::vector<float> out(codes.size());
  if (codes.empty()) return out;
  std::vector<std::uint8_t> flat(codes.size() * m);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i].size() != m)
      throw DimensionMismatch("batch_adc: mixed code lengths");
    std::memcpy(flat.data() + i * m, codes[i].data(), m);
  }
  batch_adc_flat(flat.data(), codes.size(), t, out.data());
  return out;
}

// --- codebook file format -------------------------------------------------
// Little-endian header {magic "DGPQ", version u32, pq_id u32, D u32, m u32}
// followed by m*256*subdim 32-bit reals.

inline void save_codebook(const PQCodebook& cb,
                          const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_codebook: cannot open " + path.string());
  const char magic[4] = {'D', 'G', 'P', 'Q'};
  const std::uint32_t version = 1, d = cb.dim();
  f.write(magic, 4);
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&cb.pq_id), 4);
  f.write(reinterpret_cast<const char*>(&d), 4);
  f.write(reinterpret_cast<const char*>(&cb.num_subspaces), 4);
  f.write(reinterpret_cast<const char*>(cb.centroids.data()),
          static_cast<std::streamsize>(cb.centroids.size() * sizeof(float)));
  if (!f) throw IoError("save_codebook: write failed");
}

inline PQCodebook load_codebook(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_codebook: cannot open " + path.string());
  char magic[4];
  std::uint32_t version = 0, pq_id = 0, d = 0, m = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&pq_id), 4);
  f.read(reinterpret_cast<char*>(&d), 4);
  f.read(reinterpret_cast<char*>(&m), 4);
  if (!f || std::memcmp(magic, "DGPQ", 4) != 0 || version != 1)
    throw MalformedInput("load_codebook: bad header");
  if (m == 0 || d == 0 || d % m != 0)
    throw MalformedInput("load_codebook: bad geometry");
  PQCodebook cb;
  cb.pq_id = pq_id;
  cb.num_subspaces = m;
  cb.subdim = d / m;
  cb.centroids.resize(static_cast<std::size_t>(m) * kPqBookSize * cb.subdim);
  f.read(reinterpret_cast<char*>(cb.centroids.data()),
         static_cast<std::streamsize>(cb.centroids.size() * sizeof(float)));
  if (!f) throw MalformedInput("load_codebook: truncated centroid data");
  return cb;
}

}  // namespace dgann
