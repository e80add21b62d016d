#pragma once

// AGOP estimators.
//
// exact_agop_input   E[J^T J]   (d x d, input space; J is the standard c x d Jacobian)
// exact_gram_output  E[J J^T]   (c x c, output side)
// jvp_agop           E_x E_u[(P J u)(P J u)^T] with u ~ N(0, I), an unbiased
//                    Monte-Carlo estimate of E[P J J^T P^T]

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "agop/diff_model.hpp"
#include "agop/metrics.hpp"
#include "agop/rng.hpp"
#include "agop/tensor.hpp"

namespace agop {

/// Ordered, possibly lazily materialized collection of model inputs.
class Dataset {
 public:
  using Loader = std::function<Tensor(std::size_t)>;

  Dataset() = default;
  explicit Dataset(std::vector<Tensor> inputs, std::uint64_t seed = 0)
      : size_(inputs.size()), seed_(seed), owned_(std::move(inputs)) {}
  Dataset(std::size_t size, Loader loader, std::uint64_t seed = 0)
      : size_(size), seed_(seed), loader_(std::move(loader)) {}

  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  std::uint64_t seed() const { return seed_; }

  Tensor at(std::size_t i) const {
    if (i >= size_) throw std::out_of_range("dataset index " + std::to_string(i));
    return loader_ ? loader_(i) : owned_[i];
  }

 private:
  std::size_t size_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<Tensor> owned_;
  Loader loader_;
};

struct ProjectionMatrix {
  Matrix values;  // out_dim x in_dim
  std::uint64_t seed = 0;

  std::size_t out_dim() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t in_dim() const { return static_cast<std::size_t>(values.cols()); }
};

/// Standard-normal projection; the same seed always yields the same matrix.
inline ProjectionMatrix make_projection(std::size_t out_dim, std::size_t in_dim, std::uint64_t seed) {
  RandomStream rng(seed, derive_seed("projection"));
  ProjectionMatrix p{Matrix(static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(in_dim)), seed};
  for (Eigen::Index i = 0; i < p.values.size(); ++i) p.values.data()[i] = rng.normal();
  return p;
}

inline ProjectionMatrix identity_projection(std::size_t dim) {
  const auto n = static_cast<Eigen::Index>(dim);
  return {Matrix::Identity(n, n), 0};
}

struct EstimatorConfig {
  std::size_t n_batches = 4;
  std::size_t batch_size = 128;
  std::size_t n_probes = 64;
  bool center_logits = false;
  bool rms_normalize_logits = false;

  void validate() const {
    if (n_batches < 1 || batch_size < 1 || n_probes < 1)
      throw std::invalid_argument("estimator counts must all be >= 1");
  }
};

namespace detail {

inline void require_nonempty(const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("AGOP estimation needs a non-empty dataset");
}

}  // namespace detail

inline AgopMatrix exact_agop_input(const DiffModel& model, const Dataset& data) {
  detail::require_nonempty(data);
  const auto d = static_cast<Eigen::Index>(model.input_dim());
  Matrix sum = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor x = data.at(i);
    detail::check_input(model, x);
    const Matrix jac = jacobian(model, x.to_vector());
    sum.noalias() += jac.transpose() * jac;
  }
  sum /= static_cast<double>(data.size());
  return symmetrize(sum, AgopSpace::input, data.size(), "exact_input");
}

inline AgopMatrix exact_gram_output(const DiffModel& model, const Dataset& data) {
  detail::require_nonempty(data);
  const auto c = static_cast<Eigen::Index>(model.output_dim());
  Matrix sum = Matrix::Zero(c, c);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor x = data.at(i);
    detail::check_input(model, x);
    const Matrix jac = jacobian(model, x.to_vector());
    sum.noalias() += jac * jac.transpose();
  }
  sum /= static_cast<double>(data.size());
  return symmetrize(sum, AgopSpace::output, data.size(), "exact_output");
}

/// Random-probe estimate of the projected output Gram. Batches of inputs are
/// drawn uniformly (with replacement) from `data`; every sampled input gets
/// its own block of `n_probes` standard-normal tangents. Per-batch partial sums
/// are reduced in batch order, so the result does not depend on `workers`.
inline AgopMatrix jvp_agop(const DiffModel& model, const Dataset& data, const ProjectionMatrix& projection,
                           const EstimatorConfig& cfg, std::uint64_t seed, std::size_t workers = 1) {
  cfg.validate();
  detail::require_nonempty(data);
  if (projection.in_dim() != model.output_dim())
    throw std::invalid_argument("projection expects " + std::to_string(projection.in_dim()) +
                                " inputs but the model emits " + std::to_string(model.output_dim()));
  detail::check_input(model, data.at(0));
  const auto out = static_cast<Eigen::Index>(projection.out_dim());
  const auto d = static_cast<Eigen::Index>(model.input_dim());
  const auto probes = static_cast<Eigen::Index>(cfg.n_probes);

  std::vector<Matrix> partial(cfg.n_batches, Matrix::Zero(out, out));
  std::vector<std::string> failure(cfg.n_batches);

  auto run_batch = [&](std::size_t b) {
    try {
      RandomStream pick(seed, derive_seed("jvp-batch", {b}));
      Matrix tangents(d, probes);
      for (std::size_t s = 0; s < cfg.batch_size; ++s) {
        const Tensor x = data.at(pick.uniform_index(data.size()));
        detail::check_input(model, x);
        RandomStream probe(seed, derive_seed("jvp-probe", {b, s}));
        for (Eigen::Index i = 0; i < tangents.size(); ++i) tangents.data()[i] = probe.normal();
        const Matrix y = projection.values * model.jvp_block(x.to_vector(), tangents);
        if (!y.allFinite()) throw DivergedError("non-finite Jacobian-vector product");
        partial[b].noalias() += y * y.transpose();
      }
    } catch (const std::exception& e) {
      failure[b] = e.what();
    }
  };

  workers = std::max<std::size_t>(1, std::min(workers, cfg.n_batches));
  if (workers == 1) {
    for (std::size_t b = 0; b < cfg.n_batches; ++b) run_batch(b);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t b = w; b < cfg.n_batches; b += workers) run_batch(b);
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& f : failure)
    if (!f.empty()) throw DivergedError(f);

  Matrix sum = Matrix::Zero(out, out);
  for (const auto& p : partial) sum += p;
  const std::size_t count = cfg.n_batches * cfg.batch_size * cfg.n_probes;
  sum /= static_cast<double>(count);
  return symmetrize(sum, AgopSpace::projected, cfg.n_batches * cfg.batch_size, "jvp");
}

// Logit preprocessing: optional mean-centering followed by optional division
// by the root-mean-square over the logit coordinates.

inline Vector logit_preprocess(const Vector& logits, bool center, bool rms_normalize) {
  Vector out = logits;
  if (center) out.array() -= out.mean();
  if (rms_normalize) {
    const double rms = std::sqrt(out.squaredNorm() / static_cast<double>(out.size()));
    if (!(rms > 0.0)) throw DegenerateError("degenerate logits: zero RMS");
    out /= rms;
  }
  return out;
}

inline Tensor logit_preprocess(const Tensor& logits, const EstimatorConfig& cfg) {
  return Tensor(logits.shape(), [&] {
    const Vector v = logit_preprocess(logits.to_vector(), cfg.center_logits, cfg.rms_normalize_logits);
    return std::vector<double>(v.data(), v.data() + v.size());
  }());
}

/// Composes a model with logit preprocessing, so gradients and JVPs are
/// taken through the preprocessing map.
class PreprocessedModel final : public DiffModel {
 public:
  PreprocessedModel(const DiffModel& inner, bool center, bool rms_normalize)
      : inner_(inner), center_(center), rms_(rms_normalize) {}
  PreprocessedModel(const DiffModel& inner, const EstimatorConfig& cfg)
      : PreprocessedModel(inner, cfg.center_logits, cfg.rms_normalize_logits) {}

  Shape input_shape() const override { return inner_.input_shape(); }
  std::size_t output_dim() const override { return inner_.output_dim(); }

  Vector evaluate(const Vector& x) const override { return logit_preprocess(inner_.evaluate(x), center_, rms_); }

  Vector jvp(const Vector& x, const Vector& u) const override {
    const Vector logits = inner_.evaluate(x);
    return apply_jacobian(logits, inner_.jvp(x, u));
  }

  Matrix jvp_block(const Vector& x, const Matrix& u) const override {
    const Vector logits = inner_.evaluate(x);
    Matrix dl = inner_.jvp_block(x, u);
    for (Eigen::Index k = 0; k < dl.cols(); ++k) dl.col(k) = apply_jacobian(logits, dl.col(k));
    return dl;
  }

  // The preprocessing Jacobian is symmetric, so the same map serves the VJP.
  Vector vjp(const Vector& x, const Vector& w) const override {
    const Vector logits = inner_.evaluate(x);
    return inner_.vjp(x, apply_jacobian(logits, w));
  }

 private:
  Vector apply_jacobian(const Vector& logits, Vector dl) const {
    Vector c = logits;
    if (center_) {
      c.array() -= c.mean();
      dl.array() -= dl.mean();
    }
    if (rms_) {
      const double n = static_cast<double>(c.size());
      const double rms = std::sqrt(c.squaredNorm() / n);
      if (!(rms > 0.0)) throw DegenerateError("degenerate logits: zero RMS");
      const Vector r = c / rms;
      dl = (dl - r * (r.dot(dl) / n)) / rms;
    }
    return dl;
  }

  const DiffModel& inner_;
  bool center_;
  bool rms_;
};

}  // namespace agop
