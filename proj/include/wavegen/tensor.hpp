#ifndef WAVEGEN_TENSOR_HPP
#define WAVEGEN_TENSOR_HPP

#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace wavegen {

using Shape = std::vector<long>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (long d : s) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Dense n-dimensional array, row-major, last axis fastest.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if ((long)data.size() != shape_numel(shape))
      throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape));
  }

  long size() const { return (long)data.size(); }
  int rank() const { return (int)shape.size(); }
  long dim(int i) const { return shape[(size_t)i]; }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, {v}); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = (U)data[i];
    return out;
  }
};

template <typename T, typename Rng>
Tensor<T> random_normal(Shape s, T stddev, Rng& rng) {
  Tensor<T> t(std::move(s));
  std::normal_distribution<double> dist(0.0, (double)stddev);
  for (auto& v : t.data) v = (T)dist(rng);
  return t;
}

template <typename T, typename Rng>
Tensor<T> random_uniform(Shape s, T lo, T hi, Rng& rng) {
  Tensor<T> t(std::move(s));
  std::uniform_real_distribution<double> dist((double)lo, (double)hi);
  for (auto& v : t.data) v = (T)dist(rng);
  return t;
}

}  // namespace wavegen

#endif
