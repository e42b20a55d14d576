#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepmark/rng.hpp"

namespace deepmark {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  if (s.empty()) os << "scalar";
  return os.str();
}

/// Dense N-d array, row-major. Images use height x width x channel order.
/// grad, when non-empty, always matches data in length.
template <typename T>
struct TensorT {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;

  TensorT() = default;
  explicit TensorT(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
  TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  std::size_t numel() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }

  // 3-d accessors (h, w, c); valid only for rank-3 tensors.
  T& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * shape[1] + x) * shape[2] + c];
  }
  T at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * shape[1] + x) * shape[2] + c];
  }

  void ensure_grad() {
    requires_grad = true;
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    if (requires_grad) grad.assign(data.size(), T(0));
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static TensorT zeros(Shape s) { return TensorT(std::move(s)); }
  static TensorT full(Shape s, T v) {
    TensorT t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static TensorT scalar(T v) { return TensorT({}, {v}); }

  static TensorT uniform(Shape s, Rng& rng, T lo, T hi) {
    TensorT t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

template <typename T>
bool same_shape(const TensorT<T>& a, const TensorT<T>& b) {
  return a.shape == b.shape;
}

}  // namespace deepmark
