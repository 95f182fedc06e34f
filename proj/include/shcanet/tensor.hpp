#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "shcanet/error.hpp"

namespace shcanet {

// Extents of a dense tensor of rank 1..4. Rank-4 tensors are (N, C, H, W).
class Shape {
 public:
  static constexpr int kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<int> extents) {
    require(extents.size() >= 1 && extents.size() <= kMaxRank, "shape rank must be 1..4");
    for (int e : extents) {
      require(e > 0, "shape extents must be positive");
      dims_[static_cast<std::size_t>(rank_++)] = e;
    }
  }
  static Shape nchw(int n, int c, int h, int w) { return Shape{n, c, h, w}; }

  int rank() const { return rank_; }
  int operator[](int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
  std::size_t numel() const {
    std::size_t p = rank_ == 0 ? 0 : 1;
    for (int i = 0; i < rank_; ++i) p *= static_cast<std::size_t>(dims_[static_cast<std::size_t>(i)]);
    return p;
  }

  int n() const { return dims_[0]; }
  int c() const { return dims_[1]; }
  int h() const { return dims_[2]; }
  int w() const { return dims_[3]; }

  Shape with(int axis, int extent) const {
    Shape s = *this;
    s.dims_[static_cast<std::size_t>(axis)] = extent;
    return s;
  }

  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (dims_[static_cast<std::size_t>(i)] != o.dims_[static_cast<std::size_t>(i)]) return false;
    return true;
  }

  std::vector<int> to_vector() const { return {dims_.begin(), dims_.begin() + rank_}; }
  static Shape from_vector(const std::vector<int>& v) {
    require(!v.empty() && v.size() <= kMaxRank, "shape rank must be 1..4");
    Shape s;
    for (int e : v) {
      require(e > 0, "shape extents must be positive");
      s.dims_[static_cast<std::size_t>(s.rank_++)] = e;
    }
    return s;
  }

  std::string str() const {
    std::string out = "(";
    for (int i = 0; i < rank_; ++i) {
      if (i) out += ",";
      out += std::to_string(dims_[static_cast<std::size_t>(i)]);
    }
    return out + ")";
  }

 private:
  std::array<int, kMaxRank> dims_{};
  int rank_ = 0;
};

// Dense row-major tensor owning its storage. Value semantics.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    require(data_.size() == shape_.numel(), "tensor data length " + std::to_string(data_.size()) +
                                                " does not match shape " + shape_.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() & { return data_; }
  std::span<const T> data() const& { return data_; }
  std::span<const T> data() && = delete;  // would dangle
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c() + c) * shape_.h() + h) * shape_.w() + w;
  }
  T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  // Pointer to the (n, c) plane of a rank-4 tensor.
  T* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const T* plane(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  // Same data, different extents with equal element count.
  Tensor reshaped(Shape s) const {
    require(s.numel() == size(), "reshape " + shape_.str() + " -> " + s.str() + " changes element count");
    return Tensor(s, data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

}  // namespace shcanet
