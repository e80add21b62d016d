#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace agop {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

/// Raised when a quantity is mathematically undefined on its input
/// (zero-energy AGOP, zero-variance series, constant logits).
class DegenerateError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised when a computation produced non-finite values; trials catch it and
/// record themselves as diverged.
class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major block of 64-bit floats with an explicit shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }
  static Tensor from(const Vector& v) { return Tensor({static_cast<std::size_t>(v.size())}, {v.data(), v.data() + v.size()}); }
  static Tensor from(const Matrix& m) {
    return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                  {m.data(), m.data() + m.size()});
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  Eigen::Map<const Vector> flat() const { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
  Eigen::Map<Vector> flat() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }

  /// Views a rank-2 tensor as a matrix.
  ConstMatrixMap matrix() const {
    if (rank() != 2) throw std::invalid_argument("matrix view needs a rank-2 tensor, got " + shape_string(shape_));
    return {data_.data(), static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1])};
  }

  Vector to_vector() const { return flat(); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

}  // namespace agop
