#include "arnas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace arnas {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.numel()) {
    throw std::invalid_argument("tensor value count " +
                                std::to_string(data_.size()) +
                                " does not match shape " + shape_.str());
  }
}

Tensor Tensor::slice_batch(int begin, int end) const {
  if (begin < 0 || end > shape_.n || begin > end) {
    throw std::out_of_range("batch slice out of range");
  }
  Shape s = shape_;
  s.n = end - begin;
  const std::size_t per = static_cast<std::size_t>(shape_.c) * shape_.plane();
  std::vector<double> v(data_.begin() + static_cast<std::ptrdiff_t>(begin * per),
                        data_.begin() + static_cast<std::ptrdiff_t>(end * per));
  return Tensor(s, std::move(v));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::axpy(double scale, const Tensor& other) {
  if (!(other.shape_ == shape_)) {
    throw std::invalid_argument("axpy shape mismatch " + shape_.str() +
                                " vs " + other.shape_.str());
  }
  const double* src = other.data_.data();
  double* dst = data_.data();
  for (std::size_t i = 0; i < data_.size(); ++i) dst[i] += scale * src[i];
}

Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  Shape s = parts.front().shape();
  s.n = 0;
  for (const auto& p : parts) {
    if (p.shape().c != s.c || p.shape().h != s.h || p.shape().w != s.w) {
      throw std::invalid_argument("concat_batch shape mismatch");
    }
    s.n += p.shape().n;
  }
  std::vector<double> v;
  v.reserve(s.numel());
  for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
  return Tensor(s, std::move(v));
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot length mismatch");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace arnas
