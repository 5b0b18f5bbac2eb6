#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace arnas {

/// NCHW extent. Matrices and vectors use trailing unit dimensions.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense double-precision NCHW tensor with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int h, int w) {
    return data_[index(n, c, h, w)];
  }
  double at(int n, int c, int h, int w) const {
    return data_[index(n, c, h, w)];
  }

  /// Rows [begin, end) along the batch dimension.
  Tensor slice_batch(int begin, int end) const;

  void fill(double v);
  /// this += scale * other; shapes must match.
  void axpy(double scale, const Tensor& other);

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }

  Shape shape_;
  std::vector<double> data_;
};

/// Stacks single images (n == 1 each) or batches along the batch dimension.
Tensor concat_batch(std::span<const Tensor> parts);

double max_abs(const Tensor& t);
double l2_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> v);

}  // namespace arnas
