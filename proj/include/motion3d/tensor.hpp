#pragma once

// Dense rank-<=5 tensor. Clip tensors use the axis order (N, C, T, H, W);
// lower-rank tensors drop leading axes (e.g. a single clip is (C, T, H, W),
// a feature batch is (N, D)).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "motion3d/error.hpp"

namespace motion3d {

using Index = std::int64_t;

// Eigen splits vectorized loops into an unaligned head and aligned packets
// based on the buffer address, which changes float summation order. A fixed
// base alignment makes kernel results identical from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

class Shape {
 public:
  static constexpr std::size_t kMaxRank = 5;

  Shape() = default;

  Shape(std::initializer_list<Index> extents) { assign(extents.begin(), extents.end()); }

  explicit Shape(std::span<const Index> extents) { assign(extents.begin(), extents.end()); }

  std::size_t rank() const { return rank_; }
  Index operator[](std::size_t axis) const { return dims_[axis]; }
  Index back() const { return dims_[rank_ - 1]; }

  Index numel() const {
    Index n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  /// Product of extents from `axis` to the end.
  Index stride(std::size_t axis) const {
    Index n = 1;
    for (std::size_t i = axis + 1; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  std::span<const Index> extents() const { return {dims_.data(), rank_}; }

  Shape with(std::size_t axis, Index extent) const {
    Shape s = *this;
    if (extent < 1) throw ShapeError("invalid extent " + std::to_string(extent));
    s.dims_[axis] = extent;
    return s;
  }

  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (std::size_t i = 0; i < rank_; ++i)
      if (dims_[i] != o.dims_[i]) return false;
    return true;
  }

  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
    os << ')';
    return os.str();
  }

 private:
  template <class It>
  void assign(It first, It last) {
    const auto n = static_cast<std::size_t>(std::distance(first, last));
    if (n > kMaxRank) throw ShapeError("rank " + std::to_string(n) + " exceeds 5");
    rank_ = n;
    std::size_t i = 0;
    for (; first != last; ++first, ++i) {
      if (*first < 1) {
        throw ShapeError("invalid shape: extent " + std::to_string(*first) +
                         " at axis " + std::to_string(i));
      }
      dims_[i] = *first;
    }
  }

  std::array<Index, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

/// Fan-in scaled normal fill: N(0, stddev^2) drawn from a seeded generator.
struct SeededNormal {
  std::uint64_t seed = 0;
  double stddev = 1.0;

  /// He initialisation for a layer with the given fan-in.
  static SeededNormal he(std::uint64_t seed, Index fan_in) {
    return {seed, std::sqrt(2.0 / static_cast<double>(fan_in))};
  }
};

struct SeededUniform {
  std::uint64_t seed = 0;
  double lo = 0.0;
  double hi = 1.0;
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  /// Rank-0 single-element tensor.
  Tensor() : data_(1, T(0)) {}

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(static_cast<std::size_t>(shape.numel()), fill) {}

  Tensor(Shape shape, const std::vector<T>& values) : shape_(shape), data_(values.begin(), values.end()) {
    if (static_cast<Index>(data_.size()) != shape_.numel()) {
      throw ShapeError("data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  Tensor(Shape shape, SeededNormal spec) : Tensor(shape) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> dist(0.0, spec.stddev);
    for (auto& v : data_) v = static_cast<T>(dist(rng));
  }

  Tensor(Shape shape, SeededUniform spec) : Tensor(shape) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> dist(spec.lo, spec.hi);
    for (auto& v : data_) v = static_cast<T>(dist(rng));
  }

  const Shape& shape() const { return shape_; }
  Index numel() const { return static_cast<Index>(data_.size()); }
  Index dim(std::size_t axis) const { return shape_[axis]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Element access by multi-index; the index count must equal the rank.
  template <class... I>
  T& at(I... idx) {
    return data_[offset({static_cast<Index>(idx)...})];
  }
  template <class... I>
  const T& at(I... idx) const {
    return data_[offset({static_cast<Index>(idx)...})];
  }

  /// Same data viewed with a different shape of equal element count.
  Tensor reshaped(Shape s) const {
    if (s.numel() != numel()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
    }
    Tensor out = *this;
    out.shape_ = s;
    return out;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> v(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(v));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  std::size_t offset(std::initializer_list<Index> idx) const {
    if (idx.size() != shape_.rank()) {
      throw IndexError("index rank " + std::to_string(idx.size()) + " vs tensor " + shape_.str());
    }
    Index off = 0;
    std::size_t axis = 0;
    for (Index i : idx) {
      if (i < 0 || i >= shape_[axis]) {
        throw IndexError("index " + std::to_string(i) + " out of range on axis " +
                         std::to_string(axis) + " of " + shape_.str());
      }
      off = off * shape_[axis] + i;
      ++axis;
    }
    return static_cast<std::size_t>(off);
  }

  Shape shape_;
  Buffer<T> data_;
};

/// Inner product of two equally-shaped tensors, accumulated in double.
template <class T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("dot of " + a.shape().str() + " and " + b.shape().str());
  }
  double s = 0;
  for (Index i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

}  // namespace motion3d
