#pragma once

// Small reference models used by the estimator oracles, gradient checks and
// the agop-check command.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>

#include "agop/diff_model.hpp"
#include "agop/rng.hpp"

namespace agop {

/// f(x) = A x
class LinearModel final : public DiffModel {
 public:
  explicit LinearModel(Matrix a) : a_(std::move(a)) {}

  Shape input_shape() const override { return {static_cast<std::size_t>(a_.cols())}; }
  std::size_t output_dim() const override { return static_cast<std::size_t>(a_.rows()); }
  Vector evaluate(const Vector& x) const override { return a_ * x; }
  Vector vjp(const Vector&, const Vector& w) const override { return a_.transpose() * w; }
  Vector jvp(const Vector&, const Vector& u) const override { return a_ * u; }
  Matrix jvp_block(const Vector&, const Matrix& u) const override { return a_ * u; }

  const Matrix& weights() const { return a_; }

 private:
  Matrix a_;
};

inline LinearModel identity_model(std::size_t d) {
  return LinearModel(Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)));
}

/// Elementwise ReLU with the strict gate 1[x > 0].
class ReluModel final : public DiffModel {
 public:
  explicit ReluModel(std::size_t d) : d_(d) {}

  Shape input_shape() const override { return {d_}; }
  std::size_t output_dim() const override { return d_; }
  Vector evaluate(const Vector& x) const override { return x.cwiseMax(0.0); }
  Vector vjp(const Vector& x, const Vector& w) const override { return gate(x).cwiseProduct(w); }
  Vector jvp(const Vector& x, const Vector& u) const override { return gate(x).cwiseProduct(u); }

 private:
  static Vector gate(const Vector& x) { return (x.array() > 0.0).cast<double>().matrix(); }
  std::size_t d_;
};

/// Two-layer perceptron f(x) = W2 tanh(W1 x + b1) + b2.
class MlpModel final : public DiffModel {
 public:
  MlpModel(Matrix w1, Vector b1, Matrix w2, Vector b2)
      : w1_(std::move(w1)), b1_(std::move(b1)), w2_(std::move(w2)), b2_(std::move(b2)) {
    if (w1_.rows() != b1_.size() || w2_.cols() != w1_.rows() || w2_.rows() != b2_.size())
      throw std::invalid_argument("inconsistent MLP layer shapes");
  }

  static MlpModel random(std::size_t d_in, std::size_t hidden, std::size_t d_out, std::uint64_t seed) {
    RandomStream rng(seed, 0x6d6c70);
    auto gauss = [&](Eigen::Index r, Eigen::Index c, double scale) {
      Matrix m(r, c);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
      return m;
    };
    const auto in = static_cast<Eigen::Index>(d_in);
    const auto h = static_cast<Eigen::Index>(hidden);
    const auto out = static_cast<Eigen::Index>(d_out);
    Matrix w1 = gauss(h, in, 1.0 / std::sqrt(static_cast<double>(d_in)));
    Vector b1 = gauss(h, 1, 0.1);
    Matrix w2 = gauss(out, h, 1.0 / std::sqrt(static_cast<double>(hidden)));
    Vector b2 = gauss(out, 1, 0.1);
    return MlpModel(std::move(w1), std::move(b1), std::move(w2), std::move(b2));
  }

  Shape input_shape() const override { return {static_cast<std::size_t>(w1_.cols())}; }
  std::size_t output_dim() const override { return static_cast<std::size_t>(w2_.rows()); }

  Vector evaluate(const Vector& x) const override {
    return w2_ * (w1_ * x + b1_).array().tanh().matrix() + b2_;
  }
  Vector vjp(const Vector& x, const Vector& w) const override {
    return w1_.transpose() * slope(x).cwiseProduct(w2_.transpose() * w);
  }
  Vector jvp(const Vector& x, const Vector& u) const override {
    return w2_ * slope(x).cwiseProduct(w1_ * u);
  }

 private:
  Vector slope(const Vector& x) const {
    const Vector t = (w1_ * x + b1_).array().tanh().matrix();
    return (1.0 - t.array().square()).matrix();
  }

  Matrix w1_;
  Vector b1_;
  Matrix w2_;
  Vector b2_;
};

}  // namespace agop
