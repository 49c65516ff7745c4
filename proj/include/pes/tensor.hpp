#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "pes/common.hpp"

namespace pes {

// Dense row-major tensor with value semantics.  Rank is small (<= 4 in
// practice) and shapes are fixed after construction; compute kernels index
// through raw pointers.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), S(0));
  }

  Tensor(std::vector<int> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    assert(data_.size() == numel_of(shape_));
  }

  static Tensor full(std::vector<int> shape, S v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  static Tensor scalar(S v) { return full({1}, v); }

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& vec() { return data_; }
  const std::vector<S>& vec() const { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  S& at2(int i, int j) {
    return data_[static_cast<std::size_t>(i) * dim(1) + j];
  }
  const S& at2(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * dim(1) + j];
  }

  // [C,T,H,W] indexing for feature maps.
  S& at4(int c, int t, int h, int w) {
    return data_[idx4(c, t, h, w)];
  }
  const S& at4(int c, int t, int h, int w) const {
    return data_[idx4(c, t, h, w)];
  }
  std::size_t idx4(int c, int t, int h, int w) const {
    return ((static_cast<std::size_t>(c) * dim(1) + t) * dim(2) + h) * dim(3) + w;
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(S(0)); }

  // Same data, new shape; element count must match.
  Tensor reshaped(std::vector<int> shape) const {
    assert(numel_of(shape) == data_.size());
    return Tensor(std::move(shape), data_);
  }

  void add_(const Tensor& o) {
    assert(o.numel() == numel());
    const S* p = o.data();
    S* q = data();
    for (std::size_t i = 0; i < data_.size(); ++i) q[i] += p[i];
  }

  void add_scaled_(const Tensor& o, S a) {
    assert(o.numel() == numel());
    const S* p = o.data();
    S* q = data();
    for (std::size_t i = 0; i < data_.size(); ++i) q[i] += a * p[i];
  }

  void scale_(S a) {
    for (auto& v : data_) v *= a;
  }

  bool all_finite() const {
    for (S v : data_)
      if (!is_finite(v)) return false;
    return true;
  }

  template <typename T2>
  Tensor<T2> cast() const {
    Tensor<T2> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<T2>(data_[i]);
    return out;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  static std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      assert(d >= 0);
      n *= static_cast<std::size_t>(d);
    }
    return shape.empty() ? 0 : n;
  }

 private:
  std::vector<int> shape_;
  std::vector<S> data_;
};

}  // namespace pes
