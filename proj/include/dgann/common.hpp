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

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dgann {

using node_id_t = std::uint32_t;
using page_id_t = std::uint32_t;

inline constexpr node_id_t kInvalidNode = 0xFFFFFFFFu;
inline constexpr page_id_t kInvalidPage = 0xFFFFFFFFu;
inline constexpr std::size_t kPageSize = 4096;

/// A single vector; the unit of search.
using DenseVector = std::vector<float>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParams : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };
class DimensionMismatch : public Error { public: using Error::Error; };
class UnknownNode : public Error { public: using Error::Error; };
class DoubleDelete : public Error { public: using Error::Error; };
class DegreeOverflow : public Error { public: using Error::Error; };
class EmptyIndex : public Error { public: using Error::Error; };
class EmptyInput : public Error { public: using Error::Error; };
class ClosedContext : public Error { public: using Error::Error; };
class PageNotFull : public Error { public: using Error::Error; };
class StoreFull : public Error { public: using Error::Error; };
class MalformedInput : public Error { public: using Error::Error; };

/// Flat row-major storage for a set of same-dimension vectors.
class VectorArray {
 public:
  VectorArray() = default;
  explicit VectorArray(std::size_t dim) : dim_(dim) {}
  VectorArray(std::size_t dim, std::size_t n) : dim_(dim), data_(dim * n) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return dim_ == 0 ? 0 : data_.size() / dim_; }
  bool empty() const { return data_.empty(); }

  std::span<const float> operator[](std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  std::span<float> operator[](std::size_t i) {
    return {data_.data() + i * dim_, dim_};
  }

  void push_back(std::span<const float> v) {
    if (dim_ == 0) dim_ = v.size();
    if (v.size() != dim_)
      throw DimensionMismatch("VectorArray: row dimension mismatch");
    data_.insert(data_.end(), v.begin(), v.end());
  }

  void append_rows(const VectorArray& other) {
    if (dim_ == 0) dim_ = other.dim_;
    if (other.dim_ != dim_)
      throw DimensionMismatch("VectorArray: dimension mismatch");
    data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  }

  const float* data() const { return data_.data(); }
  float* data() { return data_.data(); }
  void resize_rows(std::size_t n) { data_.resize(n * dim_); }
  void clear() { data_.clear(); }

 private:
  std::size_t dim_ = 0;
  std::vector<float> data_;
};

/// Squared Euclidean distance. Four partial accumulators keep the
/// expression order fixed so results are reproducible run to run.
inline float squared_l2(const float* a, const float* b, std::size_t n) {
  float s0 = 0.f, s1 = 0.f, s2 = 0.f, s3 = 0.f;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float d0 = a[i] - b[i];
    const float d1 = a[i + 1] - b[i + 1];
    const float d2 = a[i + 2] - b[i + 2];
    const float d3 = a[i + 3] - b[i + 3];
    s0 += d0 * d0;
    s1 += d1 * d1;
    s2 += d2 * d2;
    s3 += d3 * d3;
  }
  for (; i < n; ++i) {
    const float d = a[i] - b[i];
    s0 += d * d;
  }
  return (s0 + s1) + (s2 + s3);
}

inline float squared_l2(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw DimensionMismatch("squared_l2: size mismatch");
  return squared_l2(a.data(), b.data(), a.size());
}

}  // namespace dgann
