#pragma once

// Evaluation contract for differentiable models. A model maps a flattened
// input x (declared shape, row-major) to c output coordinates and exposes the
// two first-order products of its standard c-by-d Jacobian J(x):
//   vjp: J(x)^T w      (reverse mode)
//   jvp: J(x) u        (forward mode)
// Non-differentiable points follow the library-wide subgradient policy:
// ReLU-like gates use the strict mask 1[z > 0], so the derivative at 0 is 0.

#include <cstddef>
#include <stdexcept>
#include <string>

#include "agop/tensor.hpp"

namespace agop {

class DiffModel {
 public:
  virtual ~DiffModel() = default;

  virtual Shape input_shape() const = 0;
  virtual std::size_t output_dim() const = 0;
  std::size_t input_dim() const { return shape_numel(input_shape()); }

  virtual Vector evaluate(const Vector& x) const = 0;
  virtual Vector vjp(const Vector& x, const Vector& cotangent) const = 0;
  virtual Vector jvp(const Vector& x, const Vector& tangent) const = 0;

  /// J(x) U for tangents stored as the columns of U (d x k); returns c x k.
  virtual Matrix jvp_block(const Vector& x, const Matrix& tangents) const {
    Matrix out(static_cast<Eigen::Index>(output_dim()), tangents.cols());
    for (Eigen::Index k = 0; k < tangents.cols(); ++k) out.col(k) = jvp(x, tangents.col(k));
    return out;
  }
};

namespace detail {

inline void check_input(const DiffModel& model, const Tensor& input) {
  if (input.shape() != model.input_shape())
    throw std::invalid_argument("input shape " + shape_string(input.shape()) + " does not match model input " +
                                shape_string(model.input_shape()));
}

}  // namespace detail

inline Tensor forward(const DiffModel& model, const Tensor& input) {
  detail::check_input(model, input);
  return Tensor::from(model.evaluate(input.to_vector()));
}

/// Gradient of output coordinate `output_index` with respect to the input,
/// shaped like the input.
inline Tensor input_gradient(const DiffModel& model, const Tensor& input, std::size_t output_index) {
  detail::check_input(model, input);
  if (output_index >= model.output_dim())
    throw std::out_of_range("output index " + std::to_string(output_index) + " outside output dimension " +
                            std::to_string(model.output_dim()));
  Vector e = Vector::Zero(static_cast<Eigen::Index>(model.output_dim()));
  e[static_cast<Eigen::Index>(output_index)] = 1.0;
  const Vector g = model.vjp(input.to_vector(), e);
  return Tensor(input.shape(), {g.data(), g.data() + g.size()});
}

inline Tensor directional_derivative(const DiffModel& model, const Tensor& input, const Tensor& tangent) {
  detail::check_input(model, input);
  if (tangent.shape() != input.shape())
    throw std::invalid_argument("tangent shape " + shape_string(tangent.shape()) + " does not match input shape " +
                                shape_string(input.shape()));
  return Tensor::from(model.jvp(input.to_vector(), tangent.to_vector()));
}

/// Standard c x d Jacobian, built from whichever product needs fewer passes.
inline Matrix jacobian(const DiffModel& model, const Vector& x) {
  const auto c = static_cast<Eigen::Index>(model.output_dim());
  const auto d = static_cast<Eigen::Index>(model.input_dim());
  Matrix jac(c, d);
  if (c <= d) {
    Vector e = Vector::Zero(c);
    for (Eigen::Index i = 0; i < c; ++i) {
      e[i] = 1.0;
      jac.row(i) = model.vjp(x, e).transpose();
      e[i] = 0.0;
    }
  } else {
    jac = model.jvp_block(x, Matrix::Identity(d, d));
  }
  return jac;
}

}  // namespace agop
