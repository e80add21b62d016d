#pragma once

// Tied bottleneck autoencoder x -> ReLU(W^T W x + b) on sparse unit-norm data,
// its training loop, the closed-form AGOP and the double-descent sweep.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "agop/diff_model.hpp"
#include "agop/estimators.hpp"
#include "agop/metrics.hpp"
#include "agop/optim.hpp"
#include "agop/rng.hpp"
#include "agop/stats.hpp"
#include "agop/tensor.hpp"

namespace agop {

class TiedAutoencoder final : public DiffModel {
 public:
  TiedAutoencoder(std::size_t m, std::size_t d)
      : w(Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d))),
        b(Vector::Zero(static_cast<Eigen::Index>(d))) {}
  TiedAutoencoder(Matrix weights, Vector bias) : w(std::move(weights)), b(std::move(bias)) {
    if (w.cols() != b.size()) throw std::invalid_argument("bias length must equal the input dimension");
  }

  /// W ~ N(0, std^2), b = 0.
  static TiedAutoencoder initialized(std::size_t m, std::size_t d, double std, std::uint64_t seed) {
    TiedAutoencoder model(m, d);
    RandomStream rng(seed, derive_seed("toy-init"));
    for (Eigen::Index i = 0; i < model.w.size(); ++i) model.w.data()[i] = std * rng.normal();
    return model;
  }

  std::size_t bottleneck() const { return static_cast<std::size_t>(w.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(w.cols()); }

  /// G = W^T W
  Matrix interaction() const { return w.transpose() * w; }

  Shape input_shape() const override { return {dim()}; }
  std::size_t output_dim() const override { return dim(); }

  Vector evaluate(const Vector& x) const override { return preactivation(x).cwiseMax(0.0); }
  Vector jvp(const Vector& x, const Vector& u) const override {
    return gate(x).cwiseProduct(w.transpose() * (w * u));
  }
  Vector vjp(const Vector& x, const Vector& c) const override {
    return w.transpose() * (w * gate(x).cwiseProduct(c));
  }

  /// Rows of `x` are samples; returns ReLU(X G + 1 b^T).
  Matrix forward_batch(const Eigen::Ref<const Matrix>& x) const {
    Matrix z = (x * w.transpose()) * w;
    z.rowwise() += b.transpose();
    return z.cwiseMax(0.0);
  }

  Matrix w;  // m x d
  Vector b;  // d

 private:
  Vector preactivation(const Vector& x) const { return w.transpose() * (w * x) + b; }
  Vector gate(const Vector& x) const { return (preactivation(x).array() > 0.0).cast<double>().matrix(); }
};

struct SparseDataSpec {
  std::size_t n = 1;
  std::size_t d = 1000;
  double p_zero = 0.99;
  std::uint64_t seed = 0;
};

/// Compressed sparse rows of unit-norm vectors.
struct SparseDataset {
  std::size_t d = 0;
  std::vector<std::size_t> row_start{0};
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  std::size_t size() const { return row_start.size() - 1; }

  /// Dense copy of rows [first, first + count) into a count x d matrix.
  Matrix dense_rows(std::size_t first, std::size_t count) const {
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(d));
    for (std::size_t r = 0; r < count; ++r) fill_row(first + r, out, r);
    return out;
  }

  Matrix gather_rows(std::span<const std::size_t> rows) const {
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
    for (std::size_t r = 0; r < rows.size(); ++r) fill_row(rows[r], out, r);
    return out;
  }

  Tensor row(std::size_t i) const {
    Tensor t({d});
    for (std::size_t k = row_start[i]; k < row_start[i + 1]; ++k) t[index[k]] = value[k];
    return t;
  }

  Dataset as_dataset() const {
    return Dataset(size(), [this](std::size_t i) { return row(i); });
  }

 private:
  void fill_row(std::size_t src, Matrix& out, std::size_t r) const {
    for (std::size_t k = row_start[src]; k < row_start[src + 1]; ++k)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(index[k])) = value[k];
  }
};

/// Each coordinate is zero with probability p_zero, otherwise uniform on
/// [0, 1); vectors are then l2-normalized. An all-zero draw is redrawn from
/// the same stream.
inline SparseDataset generate_sparse_data(const SparseDataSpec& spec) {
  if (spec.n < 1 || spec.d < 1) throw std::invalid_argument("sparse data needs n >= 1 and d >= 1");
  if (!(spec.p_zero >= 0.0 && spec.p_zero < 1.0)) throw std::invalid_argument("p_zero must lie in [0, 1)");
  SparseDataset out;
  out.d = spec.d;
  RandomStream rng(spec.seed, derive_seed("sparse-data"));
  std::vector<std::uint32_t> idx;
  std::vector<double> val;
  for (std::size_t i = 0; i < spec.n; ++i) {
    double sq = 0.0;
    do {
      idx.clear();
      val.clear();
      sq = 0.0;
      for (std::size_t j = 0; j < spec.d; ++j) {
        if (rng.uniform() < spec.p_zero) continue;
        const double v = rng.uniform();
        idx.push_back(static_cast<std::uint32_t>(j));
        val.push_back(v);
        sq += v * v;
      }
    } while (!(sq > 0.0));
    const double norm = std::sqrt(sq);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.index.push_back(idx[k]);
      out.value.push_back(val[k] / norm);
    }
    out.row_start.push_back(out.index.size());
  }
  return out;
}

/// Mean over samples (rows) of sum_i (x_i - |xhat_i|)^2.
inline double toy_loss(const Eigen::Ref<const Matrix>& xhat, const Eigen::Ref<const Matrix>& x) {
  if (xhat.rows() != x.rows() || xhat.cols() != x.cols())
    throw std::invalid_argument("toy_loss: reconstruction and target shapes differ");
  if (x.rows() == 0) return 0.0;
  return (x.array() - xhat.array().abs()).square().sum() / static_cast<double>(x.rows());
}

inline double toy_loss(const Tensor& xhat, const Tensor& x) {
  if (xhat.shape() != x.shape())
    throw std::invalid_argument("toy_loss: shapes " + shape_string(xhat.shape()) + " and " + shape_string(x.shape()));
  if (x.rank() == 1) return (x.flat().array() - xhat.flat().array().abs()).square().sum();
  return toy_loss(xhat.matrix(), x.matrix());
}

inline double toy_loss(const TiedAutoencoder& model, const SparseDataset& data, std::size_t chunk = 1024) {
  double total = 0.0;
  for (std::size_t first = 0; first < data.size(); first += chunk) {
    const std::size_t count = std::min(chunk, data.size() - first);
    const Matrix x = data.dense_rows(first, count);
    total += toy_loss(model.forward_batch(x), x) * static_cast<double>(count);
  }
  return total / static_cast<double>(data.size());
}

// Closed-form AGOP. Per sample the standard Jacobian is diag(m) G with gate
// mask m = 1[Gx + b > 0], so J J^T = (m m^T) .* (G G); averaging gives
// A = (G G) .* C with C the mean gate co-activation.

/// C = mean of m m^T, accumulated over chunks of `chunk` samples.
inline Matrix coactivation(const TiedAutoencoder& model, std::size_t n,
                           const std::function<Matrix(std::size_t, std::size_t)>& rows, std::size_t chunk) {
  if (n == 0) throw std::invalid_argument("AGOP estimation needs a non-empty dataset");
  if (chunk == 0) throw std::invalid_argument("chunk size must be >= 1");
  const auto d = static_cast<Eigen::Index>(model.dim());
  Matrix c = Matrix::Zero(d, d);
  for (std::size_t first = 0; first < n; first += chunk) {
    const std::size_t count = std::min(chunk, n - first);
    Matrix z = (rows(first, count) * model.w.transpose()) * model.w;
    z.rowwise() += model.b.transpose();
    const Matrix mask = (z.array() > 0.0).cast<double>().matrix();
    c.noalias() += mask.transpose() * mask;
  }
  return c / static_cast<double>(n);
}

inline AgopMatrix tied_autoencoder_agop_from_coactivation(const TiedAutoencoder& model, const Matrix& c,
                                                          std::size_t n) {
  const Matrix g = model.interaction();
  const Matrix g2 = g * g;
  return symmetrize(g2.cwiseProduct(c), AgopSpace::output, n, "closed_form");
}

inline AgopMatrix tied_autoencoder_agop(const TiedAutoencoder& model, const SparseDataset& data,
                                        std::size_t chunk = 1024) {
  const Matrix c = coactivation(
      model, data.size(), [&](std::size_t f, std::size_t k) { return data.dense_rows(f, k); }, chunk);
  return tied_autoencoder_agop_from_coactivation(model, c, data.size());
}

inline AgopMatrix tied_autoencoder_agop(const TiedAutoencoder& model, const Dataset& data, std::size_t chunk = 1024) {
  const auto d = static_cast<Eigen::Index>(model.dim());
  const Matrix c = coactivation(
      model, data.size(),
      [&](std::size_t first, std::size_t count) {
        Matrix x(static_cast<Eigen::Index>(count), d);
        for (std::size_t r = 0; r < count; ++r) {
          const Tensor t = data.at(first + r);
          detail::check_input(model, t);
          x.row(static_cast<Eigen::Index>(r)) = t.flat().transpose();
        }
        return x;
      },
      chunk);
  return tied_autoencoder_agop_from_coactivation(model, c, data.size());
}

struct ToyTrainConfig {
  std::size_t d = 1000;
  std::size_t m = 2;
  double p_zero = 0.99;
  long long steps = 3000;
  double lr = 5e-3;
  double weight_decay = 1e-2;
  double warmup_fraction = 0.25;
  std::size_t batch_cap = 2048;
  std::size_t test_size = 5000;
  double init_std = 0.02;
  std::size_t agop_chunk = 1024;
  bool keep_agop = false;
};

struct ToyTrialResult {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double test_loss = std::numeric_limits<double>::quiet_NaN();
  double aofe = std::numeric_limits<double>::quiet_NaN();
  double aofe_ratio = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;
  /// Every gate is off on the test set: the AGOP is zero and the ratio undefined.
  bool degenerate = false;
  std::optional<AgopMatrix> agop;
};

inline std::uint64_t toy_train_seed(std::size_t n) { return derive_seed("train", {n}); }
inline std::uint64_t toy_test_seed() { return derive_seed("test"); }

inline SparseDataset toy_test_set(const ToyTrainConfig& cfg) {
  return generate_sparse_data({cfg.test_size, cfg.d, cfg.p_zero, toy_test_seed()});
}

struct ToyTrainOutcome {
  TiedAutoencoder model;
  ToyTrialResult result;
};

namespace detail {

/// Loss and gradients on one dense batch; returns the batch loss.
inline double toy_loss_and_grad(const TiedAutoencoder& model, const Matrix& x, Matrix& grad_w, Vector& grad_b) {
  const auto rows = static_cast<double>(x.rows());
  const Matrix h = x * model.w.transpose();  // B x m
  Matrix z = h * model.w;                    // B x d
  z.rowwise() += model.b.transpose();
  const Matrix xhat = z.cwiseMax(0.0);
  const Matrix resid = x - xhat;
  const double loss = resid.squaredNorm() / rows;
  // d loss / d z = -2 (x - xhat) on active gates; |xhat| = xhat there.
  const Matrix dz = ((z.array() > 0.0).cast<double>() * resid.array() * (-2.0 / rows)).matrix();
  grad_b = dz.colwise().sum().transpose();
  const Matrix dh = dz * model.w.transpose();  // B x m
  grad_w.noalias() = h.transpose() * dz;
  grad_w.noalias() += dh.transpose() * x;
  return loss;
}

}  // namespace detail

/// Trains on n samples with AdamW under warmup-cosine, then scores the test
/// set and its closed-form AGOP. Pass a prebuilt test set to share it across
/// trials.
inline ToyTrainOutcome train_toy(std::size_t n, std::uint64_t seed, const ToyTrainConfig& cfg,
                                 const SparseDataset* test_set = nullptr) {
  if (n < 1) throw std::invalid_argument("train_toy needs n >= 1");
  const SparseDataset train = generate_sparse_data({n, cfg.d, cfg.p_zero, toy_train_seed(n)});
  std::optional<SparseDataset> own_test;
  if (!test_set) {
    own_test = toy_test_set(cfg);
    test_set = &*own_test;
  }

  ToyTrainOutcome out{TiedAutoencoder::initialized(cfg.m, cfg.d, cfg.init_std, seed), {}};
  TiedAutoencoder& model = out.model;
  ToyTrialResult& res = out.result;
  res.n = n;
  res.seed = seed;

  Matrix grad_w = Matrix::Zero(model.w.rows(), model.w.cols());
  Vector grad_b = Vector::Zero(model.b.size());
  std::vector<ParamRef> params{
      {"W", {model.w.data(), static_cast<std::size_t>(model.w.size())},
       {grad_w.data(), static_cast<std::size_t>(grad_w.size())}},
      {"b", {model.b.data(), static_cast<std::size_t>(model.b.size())},
       {grad_b.data(), static_cast<std::size_t>(grad_b.size())}},
  };
  AdamWConfig acfg;
  acfg.weight_decay = cfg.weight_decay;
  OptimState state(acfg, params);
  const auto warmup = static_cast<long long>(std::floor(cfg.warmup_fraction * static_cast<double>(cfg.steps)));
  const LrSchedule schedule(cfg.lr, warmup, cfg.steps);

  const std::size_t batch = std::min(cfg.batch_cap, n);
  const bool full_batch = batch == n;
  const Matrix full = full_batch ? train.dense_rows(0, n) : Matrix();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t cursor = n;
  long long epoch = 0;
  std::vector<std::size_t> picked(batch);

  for (long long step = 0; step < cfg.steps; ++step) {
    double loss = 0.0;
    if (full_batch) {
      loss = detail::toy_loss_and_grad(model, full, grad_w, grad_b);
    } else {
      // Sampling without replacement within an epoch; each epoch reshuffles.
      for (std::size_t k = 0; k < batch; ++k) {
        if (cursor == n) {
          RandomStream shuffle(seed, derive_seed("toy-epoch", {n, static_cast<std::uint64_t>(epoch++)}));
          for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.uniform_index(i + 1)]);
          cursor = 0;
        }
        picked[k] = order[cursor++];
      }
      loss = detail::toy_loss_and_grad(model, train.gather_rows(picked), grad_w, grad_b);
    }
    if (!std::isfinite(loss) || adamw_step(params, state, lr_at(schedule, step + 1)) == StepStatus::diverged) {
      res.diverged = true;
      return out;
    }
  }

  res.test_loss = toy_loss(model, *test_set);
  if (!std::isfinite(res.test_loss) || !model.w.allFinite() || !model.b.allFinite()) {
    res.diverged = true;
    return out;
  }
  AgopMatrix agop = tied_autoencoder_agop(model, *test_set, cfg.agop_chunk);
  res.aofe = aofe(agop);
  try {
    res.aofe_ratio = aofe_ratio(agop);
  } catch (const DegenerateError&) {
    res.degenerate = true;
  }
  if (cfg.keep_agop) res.agop = std::move(agop);
  return out;
}

/// The 22 training-set sizes of the reference grid.
inline std::vector<std::size_t> default_toy_sizes() {
  return {3,    5,    8,    10,   15,   30,    50,    100,   200,   500,   1000,
          1395, 1946, 2714, 3786, 5282, 7368, 10278, 14337, 20000, 30000, 40000};
}

struct DoubleDescentRow {
  std::size_t data_size = 0;
  MeanStd test_loss;
  MeanStd aofe;
  MeanStd aofe_ratio;
  std::size_t diverged = 0;
  std::size_t degenerate = 0;
  std::optional<AgopMatrix> mean_agop;
};

/// Per-size mean and population std over non-diverged trials. Degenerate
/// trials keep their loss and AOFE but are left out of the ratio statistics.
inline std::vector<DoubleDescentRow> aggregate_double_descent(const std::vector<ToyTrialResult>& trials) {
  std::map<std::size_t, std::vector<const ToyTrialResult*>> by_size;
  for (const auto& t : trials) by_size[t.n].push_back(&t);
  std::vector<DoubleDescentRow> rows;
  for (const auto& [n, group] : by_size) {
    DoubleDescentRow row;
    row.data_size = n;
    std::vector<double> loss, energy, ratio;
    std::size_t agop_count = 0;
    for (const auto* t : group) {
      if (t->diverged) {
        ++row.diverged;
        continue;
      }
      loss.push_back(t->test_loss);
      energy.push_back(t->aofe);
      if (t->degenerate) ++row.degenerate;
      else ratio.push_back(t->aofe_ratio);
      if (t->agop) {
        if (!row.mean_agop) row.mean_agop = AgopMatrix{Matrix::Zero(t->agop->values.rows(), t->agop->values.cols()),
                                                       t->agop->space, 0, "seed_mean"};
        row.mean_agop->values += t->agop->values;
        row.mean_agop->sample_count += t->agop->sample_count;
        ++agop_count;
      }
    }
    if (row.mean_agop) row.mean_agop->values /= static_cast<double>(agop_count);
    row.test_loss = mean_std(loss);
    row.aofe = mean_std(energy);
    row.aofe_ratio = mean_std(ratio);
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Trials run in (size, seed) order; `on_trial` sees each result as soon as
/// it exists, and `cached` may supply previously completed trials.
inline std::vector<DoubleDescentRow> double_descent_sweep(
    const std::vector<std::size_t>& sizes, std::size_t seeds, const ToyTrainConfig& cfg,
    const std::function<void(const ToyTrialResult&)>& on_trial = {},
    const std::function<std::optional<ToyTrialResult>(std::size_t, std::uint64_t)>& cached = {}) {
  if (sizes.empty()) throw std::invalid_argument("double-descent sweep needs at least one size");
  const SparseDataset test = toy_test_set(cfg);
  std::vector<ToyTrialResult> trials;
  for (std::size_t n : sizes) {
    for (std::uint64_t s = 0; s < seeds; ++s) {
      std::optional<ToyTrialResult> r = cached ? cached(n, s) : std::nullopt;
      if (!r) {
        r = train_toy(n, s, cfg, &test).result;
        if (on_trial) on_trial(*r);
      }
      trials.push_back(std::move(*r));
    }
  }
  return aggregate_double_descent(trials);
}

}  // namespace agop
