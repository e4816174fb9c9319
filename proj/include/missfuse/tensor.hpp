#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "missfuse/errors.hpp"

namespace missfuse::diff {

// Dense row-major tensor. Rank 1 and 2 are all the model needs.
template <class S>
struct Tensor {
  std::vector<int> shape;
  std::vector<S> data;

  Tensor() = default;
  Tensor(std::vector<int> shp, std::vector<S> values)
      : shape(std::move(shp)), data(std::move(values)) {}

  static Tensor zeros(std::vector<int> shp) {
    Tensor t;
    t.shape = std::move(shp);
    t.data.assign(count(t.shape), S(0));
    return t;
  }

  static Tensor full(std::vector<int> shp, S v) {
    Tensor t = zeros(std::move(shp));
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  static Tensor vec(std::vector<S> values) {
    const int n = static_cast<int>(values.size());
    return Tensor({n}, std::move(values));
  }

  int numel() const { return count(shape); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }

  S& at(int i) { return data[i]; }
  S at(int i) const { return data[i]; }
  S& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  S at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (S v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) os << "x";
      os << shape[i];
    }
    os << "]";
    return os.str();
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.reserve(data.size());
    for (S v : data) out.data.push_back(static_cast<T>(v));
    return out;
  }

 private:
  static int count(const std::vector<int>& shp) {
    int n = 1;
    for (int d : shp) {
      if (d <= 0) throw ConfigError("tensor dimensions must be positive");
      n *= d;
    }
    return n;
  }
};

}  // namespace missfuse::diff
