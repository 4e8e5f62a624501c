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
#include <fstream>

#include "dgann/common.hpp"

namespace dgann {

enum class VecsFormat { fvecs, bvecs, ivecs };

inline VecsFormat vecs_format_from_path(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".fvecs") return VecsFormat::fvecs;
  if (ext == ".bvecs") return VecsFormat::bvecs;
  if (ext == ".ivecs") return VecsFormat::ivecs;
  throw InvalidParams("unknown vecs extension: " + ext);
}

/// Reads an fvecs/bvecs/ivecs file: per record a little-endian 32-bit
/// dimension header, then dim payload elements. bvecs bytes and ivecs
/// integers are widened to reals.
inline VectorArray read_vecs(const std::filesystem::path& path,
                             VecsFormat fmt) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_vecs: cannot open " + path.string());
  VectorArray out;
  std::int32_t dim = 0;
  std::vector<float> row;
  std::vector<std::uint8_t> brow;
  std::vector<std::int32_t> irow;
  while (f.read(reinterpret_cast<char*>(&dim), 4)) {
    if (dim <= 0) throw MalformedInput("read_vecs: malformed-record");
    row.resize(dim);
    bool ok = true;
    switch (fmt) {
      case VecsFormat::fvecs:
        ok = static_cast<bool>(
            f.read(reinterpret_cast<char*>(row.data()), 4ll * dim));
        break;
      case VecsFormat::bvecs:
        brow.resize(dim);
        ok = static_cast<bool>(
            f.read(reinterpret_cast<char*>(brow.data()), dim));
        for (std::int32_t i = 0; i < dim; ++i) row[i] = brow[i];
        break;
      case VecsFormat::ivecs:
        irow.resize(dim);
        ok = static_cast<bool>(
            f.read(reinterpret_cast<char*>(irow.data()), 4ll * dim));
        for (std::int32_t i = 0; i < dim; ++i)
          row[i] = static_cast<float>(irow[i]);
        break;
    }
    if (!ok) throw MalformedInput("read_vecs: malformed-record");
    if (out.dim() != 0 && static_cast<std::size_t>(dim) != out.dim())
      throw MalformedInput("read_vecs: inconsistent-dim");
    out.push_back(row);
  }
  return out;
}

inline VectorArray read_vecs(const std::filesystem::path& path) {
  return read_vecs(path, vecs_format_from_path(path));
}

inline void write_fvecs(const std::filesystem::path& path,
                        const VectorArray& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_fvecs: cannot open " + path.string());
  const std::int32_t dim = static_cast<std::int32_t>(data.dim());
  for (std::size_t i = 0; i < data.size(); ++i) {
    f.write(reinterpret_cast<const char*>(&dim), 4);
    f.write(reinterpret_cast<const char*>(data[i].data()), 4ll * dim);
  }
  if (!f) throw IoError("write_fvecs: write failed");
}

/// Ground-truth id lists in the usual ivecs layout.
inline void write_ivecs(const std::filesystem::path& path,
                        const std::vector<std::vector<node_id_t>>& rows) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_ivecs: cannot open " + path.string());
  for (const auto& row : rows) {
    const std::int32_t dim = static_cast<std::int32_t>(row.size());
    f.write(reinterpret_cast<const char*>(&dim), 4);
    for (node_id_t v : row) {
      const std::int32_t iv = static_cast<std::int32_t>(v);
      f.write(reinterpret_cast<const char*>(&iv), 4);
    }
  }
  if (!f) throw IoError("write_ivecs: write failed");
}

inline std::vector<std::vector<node_id_t>> read_ivecs_ids(
    const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_ivecs_ids: cannot open " + path.string());
  std::vector<std::vector<node_id_t>> out;
  std::int32_t dim = 0;
  while (f.read(reinterpret_cast<char*>(&dim), 4)) {
    if (dim < 0) throw MalformedInput("read_ivecs_ids: malformed-record");
    std::vector<node_id_t> row(dim);
    if (!f.read(reinterpret_cast<char*>(row.data()), 4ll * dim))
      throw MalformedInput("read_ivecs_ids: malformed-record");
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace dgann
