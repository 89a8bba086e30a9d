#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace omnigf {

// Dense row-major tensor. Owns its storage; shapes are small int vectors.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel(shape), T(0)) {}
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != numel(shape))
      throw std::invalid_argument("tensor: data size does not match shape");
  }

  static std::int64_t numel(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& at(int i) { return data[static_cast<size_t>(i)]; }
  const T& at(int i) const { return data[static_cast<size_t>(i)]; }
  T& at(int i, int j) { return data[static_cast<size_t>(i) * dim(1) + j]; }
  const T& at(int i, int j) const { return data[static_cast<size_t>(i) * dim(1) + j]; }
  T& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  const T& at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }

  T item() const {
    if (size() != 1) throw std::logic_error("tensor: item() on non-scalar");
    return data[0];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

}  // namespace omnigf
