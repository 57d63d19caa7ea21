#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "hodiff/rng.hpp"

namespace hodiff {

/// Dense row-major tensor. Rank 2 covers point clouds and feature matrices,
/// rank 3 covers H x W x C images (channel fastest).
template <typename S>
struct Tensor {
  std::vector<int> dims;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, S fill = S(0)) : dims(std::move(shape)) {
    data.assign(size_of(dims), fill);
  }

  static size_t size_of(const std::vector<int>& d) {
    size_t n = 1;
    for (int x : d) {
      if (x < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= static_cast<size_t>(x);
    }
    return n;
  }

  size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(dims.size()); }
  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  int rows() const { return dims.at(0); }
  int cols() const { return dims.at(1); }

  S& at(int r, int c) { return data[static_cast<size_t>(r) * dims[1] + c]; }
  const S& at(int r, int c) const { return data[static_cast<size_t>(r) * dims[1] + c]; }

  // Rank-3 access: (row, col, channel).
  S& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
  }
  const S& at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
  }

  using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatMap =
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  /// View the tensor as a rows x cols matrix (rank 2, or explicit shape).
  MatMap mat() { return MatMap(data.data(), dims.at(0), dims.at(1)); }
  ConstMatMap mat() const { return ConstMatMap(data.data(), dims.at(0), dims.at(1)); }
  MatMap as_mat(int r, int c) {
    if (static_cast<size_t>(r) * c != size()) throw std::invalid_argument("tensor: bad reshape");
    return MatMap(data.data(), r, c);
  }
  ConstMatMap as_mat(int r, int c) const {
    if (static_cast<size_t>(r) * c != size()) throw std::invalid_argument("tensor: bad reshape");
    return ConstMatMap(data.data(), r, c);
  }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (const S& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.dims = dims;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }

  static Tensor randn(std::vector<int> shape, Rng& rng, S scale = S(1)) {
    Tensor t(std::move(shape));
    for (S& v : t.data) v = static_cast<S>(rng.normal()) * scale;
    return t;
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<S>> rows) {
    int r = static_cast<int>(rows.size());
    int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    Tensor t({r, c});
    int i = 0;
    for (const auto& row : rows) {
      if (static_cast<int>(row.size()) != c) throw std::invalid_argument("ragged initializer");
      int j = 0;
      for (S v : row) t.at(i, j++) = v;
      ++i;
    }
    return t;
  }
};

template <typename S>
std::string shape_str(const Tensor<S>& t) {
  std::string s = "(";
  for (size_t i = 0; i < t.dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.dims[i]);
  }
  return s + ")";
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace hodiff
