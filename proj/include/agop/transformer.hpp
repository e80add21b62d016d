#pragma once

// Byte-level decoder-only transformer with hand-written batched forward,
// reverse-mode backward and forward-mode tangent passes.
//
// Block (pre-norm):
//   x <- x + Attn(LN1(x)) Wo          Q, K, V, O bias-free, head size 4
//   x <- x + GELU(LN2(x) W1) W2       W1: d x 4d, W2: 4d x d, bias-free
// Output: logits = LNf(x) Whead       untied head, d x vocab
//
// Activations are stored as (batch * len) x d row-major matrices; row
// b * len + t is position t of sequence b. Weights act on the right (x W).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "agop/diff_model.hpp"
#include "agop/lmshape.hpp"
#include "agop/optim.hpp"
#include "agop/rng.hpp"
#include "agop/tensor.hpp"

namespace agop {

/// Flat parameter or gradient storage. Over-aligned so that vectorized kernels
/// see the same alignment on every allocation; otherwise reductions can round
/// differently from one run to the next.
using ParamBuffer = std::vector<double, Eigen::aligned_allocator<double>>;

struct TensorSlot {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return rows * cols; }
};

struct LayerNormCache {
  Matrix xhat;
  Vector inv_std;
};

struct BlockCache {
  LayerNormCache ln1, ln2;
  Matrix a, q, k, v, att, c, u;
};

struct ForwardCache {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<BlockCache> blocks;
  LayerNormCache lnf;
  Matrix f;
};

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;

inline double gelu(double u) { return 0.5 * u * (1.0 + std::erf(u * std::numbers::sqrt2 / 2.0)); }
inline double gelu_slope(double u) {
  return 0.5 * (1.0 + std::erf(u * std::numbers::sqrt2 / 2.0)) +
         u * std::exp(-0.5 * u * u) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
}

inline Matrix layer_norm(const Matrix& x, const double* g, const double* b, LayerNormCache* cache) {
  const Eigen::Index d = x.cols();
  Eigen::Map<const Eigen::RowVectorXd> gain(g, d), bias(b, d);
  const Eigen::VectorXd mean = x.rowwise().mean();
  Matrix xhat = x.colwise() - mean;
  const Eigen::ArrayXd var = xhat.array().square().rowwise().mean();
  const Eigen::VectorXd inv = (var + kLayerNormEps).rsqrt().matrix();
  xhat = inv.asDiagonal() * xhat;
  Matrix y = (xhat.array().rowwise() * gain.array()).rowwise() + bias.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv;
  }
  return y;
}

/// Returns dx; adds into dg/db when given.
inline Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& c, const double* g, double* dg,
                                  double* db) {
  const Eigen::Index d = dy.cols();
  Eigen::Map<const Eigen::RowVectorXd> gain(g, d);
  if (dg) Eigen::Map<Eigen::RowVectorXd>(dg, d) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  if (db) Eigen::Map<Eigen::RowVectorXd>(db, d) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gain.array();
  const Eigen::VectorXd m1 = dxhat.rowwise().mean();
  const Eigen::VectorXd m2 = (dxhat.array() * c.xhat.array()).rowwise().mean().matrix();
  Matrix dx = dxhat.colwise() - m1;
  dx -= (c.xhat.array().colwise() * m2.array()).matrix();
  return c.inv_std.asDiagonal() * dx;
}

/// Tangent of LN for stacked tangents: row r pairs with primal row r % len.
inline Matrix layer_norm_tangent(const Matrix& dx, const LayerNormCache& c, const double* g) {
  const Eigen::Index len = c.xhat.rows();
  const Eigen::Index d = dx.cols();
  Eigen::Map<const Eigen::RowVectorXd> gain(g, d);
  Matrix out(dx.rows(), d);
  for (Eigen::Index p = 0; p < dx.rows() / len; ++p) {
    auto blk = dx.middleRows(p * len, len);
    const Eigen::VectorXd m1 = blk.rowwise().mean();
    const Eigen::VectorXd m2 = (blk.array() * c.xhat.array()).rowwise().mean().matrix();
    Matrix t = blk.colwise() - m1;
    t -= (c.xhat.array().colwise() * m2.array()).matrix();
    out.middleRows(p * len, len) = (c.inv_std.asDiagonal() * t).array().rowwise() * gain.array();
  }
  return out;
}

/// Causal softmax attention row i of one (sequence, head): fills p[0..i].
inline void attention_row(const double* q, const double* k, std::size_t i, std::size_t stride, double scale,
                          double* p) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j <= i; ++j) {
    const double* kj = k + j * stride;
    double s = 0.0;
    for (std::size_t c = 0; c < kHeadDim; ++c) s += q[c] * kj[c];
    p[j] = s * scale;
    mx = std::max(mx, p[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j <= i; ++j) {
    p[j] = std::exp(p[j] - mx);
    sum += p[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j <= i; ++j) p[j] *= inv;
}

inline Matrix attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t batch,
                                std::size_t len) {
  const auto d = static_cast<std::size_t>(q.cols());
  const std::size_t heads = d / kHeadDim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(kHeadDim));
  Matrix out = Matrix::Zero(q.rows(), q.cols());
  std::vector<double> p(len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = b * len * d + h * kHeadDim;
      for (std::size_t i = 0; i < len; ++i) {
        attention_row(q.data() + base + i * d, k.data() + base, i, d, scale, p.data());
        double* o = out.data() + base + i * d;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vj = v.data() + base + j * d;
          for (std::size_t c = 0; c < kHeadDim; ++c) o[c] += p[j] * vj[c];
        }
      }
    }
  }
  return out;
}

/// Reverse pass through attention; probabilities are recomputed row by row.
inline void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& dout,
                               std::size_t batch, std::size_t len, Matrix& dq, Matrix& dk, Matrix& dv) {
  const auto d = static_cast<std::size_t>(q.cols());
  const std::size_t heads = d / kHeadDim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(kHeadDim));
  dq = Matrix::Zero(q.rows(), q.cols());
  dk = Matrix::Zero(q.rows(), q.cols());
  dv = Matrix::Zero(q.rows(), q.cols());
  std::vector<double> p(len), dp(len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = b * len * d + h * kHeadDim;
      for (std::size_t i = 0; i < len; ++i) {
        const double* qi = q.data() + base + i * d;
        const double* doi = dout.data() + base + i * d;
        attention_row(qi, k.data() + base, i, d, scale, p.data());
        double rowdot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vj = v.data() + base + j * d;
          double s = 0.0;
          for (std::size_t c = 0; c < kHeadDim; ++c) s += doi[c] * vj[c];
          dp[j] = s;
          rowdot += p[j] * s;
        }
        double* dqi = dq.data() + base + i * d;
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = p[j] * (dp[j] - rowdot) * scale;
          const double* kj = k.data() + base + j * d;
          double* dkj = dk.data() + base + j * d;
          double* dvj = dv.data() + base + j * d;
          for (std::size_t c = 0; c < kHeadDim; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
            dvj[c] += p[j] * doi[c];
          }
        }
      }
    }
  }
}

/// Forward-mode attention for stacked tangents around a single primal sequence.
inline Matrix attention_tangent(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& dq,
                                const Matrix& dk, const Matrix& dv) {
  const auto len = static_cast<std::size_t>(q.rows());
  const auto d = static_cast<std::size_t>(q.cols());
  const std::size_t heads = d / kHeadDim;
  const std::size_t probes = static_cast<std::size_t>(dq.rows()) / len;
  const double scale = 1.0 / std::sqrt(static_cast<double>(kHeadDim));
  // Primal probabilities, lower triangle per head.
  std::vector<double> prob(heads * len * len, 0.0);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < len; ++i)
      attention_row(q.data() + i * d + h * kHeadDim, k.data() + h * kHeadDim, i, d, scale,
                    prob.data() + (h * len + i) * len);
  Matrix out = Matrix::Zero(dq.rows(), dq.cols());
  std::vector<double> ds(len);
  for (std::size_t p = 0; p < probes; ++p) {
    const std::size_t tbase = p * len * d;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t col = h * kHeadDim;
      for (std::size_t i = 0; i < len; ++i) {
        const double* pi = prob.data() + (h * len + i) * len;
        const double* qi = q.data() + i * d + col;
        const double* dqi = dq.data() + tbase + i * d + col;
        double mean = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = k.data() + j * d + col;
          const double* dkj = dk.data() + tbase + j * d + col;
          double s = 0.0;
          for (std::size_t c = 0; c < kHeadDim; ++c) s += dqi[c] * kj[c] + qi[c] * dkj[c];
          ds[j] = s * scale;
          mean += pi[j] * ds[j];
        }
        double* oi = out.data() + tbase + i * d + col;
        for (std::size_t j = 0; j <= i; ++j) {
          const double dpj = pi[j] * (ds[j] - mean);
          const double* vj = v.data() + j * d + col;
          const double* dvj = dv.data() + tbase + j * d + col;
          for (std::size_t c = 0; c < kHeadDim; ++c) oi[c] += dpj * vj[c] + pi[j] * dvj[c];
        }
      }
    }
  }
  return out;
}

}  // namespace detail

/// Mean next-byte cross-entropy (nats) over all rows; fills dlogits with the
/// gradient of that mean when requested.
inline double cross_entropy(const Matrix& logits, std::span<const std::uint8_t> targets, Matrix* dlogits = nullptr) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size())
    throw std::invalid_argument("cross_entropy: one target per logit row required");
  const auto n = static_cast<double>(logits.rows());
  if (dlogits) dlogits->resize(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(targets[static_cast<std::size_t>(r)]);
    if (dlogits) {
      dlogits->row(r) = (row.array() - lse).exp().matrix() / n;
      (*dlogits)(r, targets[static_cast<std::size_t>(r)]) -= 1.0 / n;
    }
  }
  return total / n;
}

class TinyTransformer {
 public:
  struct BlockSlots {
    std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, w2;
  };

  explicit TinyTransformer(const ShapeConfig& shape) : shape_(shape) {
    if (shape.d_model < kHeadDim || shape.d_model % kHeadDim != 0)
      throw std::invalid_argument("d_model must be a positive multiple of the head size");
    if (shape.layers < 1) throw std::invalid_argument("transformer needs at least one block");
    const std::size_t d = shape.d_model, ff = 4 * d, vocab = shape.vocab, ctx = shape.context;
    tok_ = add("tok_emb", vocab, d);
    pos_ = add("pos_emb", ctx, d);
    for (std::size_t l = 0; l < shape.layers; ++l) {
      const std::string p = "block" + std::to_string(l) + ".";
      BlockSlots s{};
      s.ln1_g = add(p + "ln1.gain", 1, d);
      s.ln1_b = add(p + "ln1.bias", 1, d);
      s.wq = add(p + "attn.wq", d, d);
      s.wk = add(p + "attn.wk", d, d);
      s.wv = add(p + "attn.wv", d, d);
      s.wo = add(p + "attn.wo", d, d);
      s.ln2_g = add(p + "ln2.gain", 1, d);
      s.ln2_b = add(p + "ln2.bias", 1, d);
      s.w1 = add(p + "mlp.w1", d, ff);
      s.w2 = add(p + "mlp.w2", ff, d);
      blocks_.push_back(s);
    }
    lnf_g_ = add("lnf.gain", 1, d);
    lnf_b_ = add("lnf.bias", 1, d);
    head_ = add("head", d, vocab);
    params_.assign(total_, 0.0);
  }

  /// Weights ~ N(0, 0.02^2); residual output projections (Wo, W2) use
  /// 0.02 / sqrt(2 L); norm gains 1, biases 0.
  static TinyTransformer initialized(const ShapeConfig& shape, std::uint64_t seed) {
    TinyTransformer m(shape);
    RandomStream rng(seed, derive_seed("lm-init", {shape.layers, shape.d_model}));
    const double base = 0.02;
    const double resid = base / std::sqrt(2.0 * static_cast<double>(shape.layers));
    for (const auto& s : m.slots_) {
      double* p = m.params_.data() + s.offset;
      const bool gain = s.name.ends_with(".gain");
      const bool bias = s.name.ends_with(".bias");
      const bool residual = s.name.ends_with("attn.wo") || s.name.ends_with("mlp.w2");
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (gain) p[i] = 1.0;
        else if (bias) p[i] = 0.0;
        else p[i] = (residual ? resid : base) * rng.normal();
      }
    }
    return m;
  }

  const ShapeConfig& shape() const { return shape_; }
  std::size_t d_model() const { return shape_.d_model; }
  std::size_t vocab() const { return shape_.vocab; }
  std::size_t context() const { return shape_.context; }
  std::size_t parameter_count() const { return params_.size(); }

  ParamBuffer& parameters() { return params_; }
  const ParamBuffer& parameters() const { return params_; }
  const std::vector<TensorSlot>& slots() const { return slots_; }

  /// Named (value, gradient) views for the optimizer; `grad` must have
  /// parameter_count() entries and outlive the views.
  std::vector<ParamRef> parameter_refs(ParamBuffer& grad) {
    if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer size mismatch");
    std::vector<ParamRef> refs;
    for (const auto& s : slots_)
      refs.push_back({s.name, {params_.data() + s.offset, s.size()}, {grad.data() + s.offset, s.size()}});
    return refs;
  }

  /// Token plus position embedding for `batch` sequences of `len` bytes.
  Matrix embed(std::span<const std::uint8_t> tokens, std::size_t batch, std::size_t len) const {
    check_tokens(tokens, batch, len);
    const auto d = static_cast<Eigen::Index>(d_model());
    Matrix x(static_cast<Eigen::Index>(batch * len), d);
    const auto tok = view(params_.data(), tok_);
    const auto pos = view(params_.data(), pos_);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < len; ++t) {
        const auto r = static_cast<Eigen::Index>(b * len + t);
        x.row(r) = tok.row(tokens[b * len + t]) + pos.row(static_cast<Eigen::Index>(t));
      }
    return x;
  }

  /// Logits ((batch * len) x vocab) from embedded inputs.
  Matrix forward_embedded(const Matrix& x0, std::size_t batch, std::size_t len, ForwardCache* cache = nullptr) const {
    if (len < 1 || len > context()) throw std::invalid_argument("sequence length must lie in [1, context]");
    if (static_cast<std::size_t>(x0.rows()) != batch * len || static_cast<std::size_t>(x0.cols()) != d_model())
      throw std::invalid_argument("embedded input must be (batch * len) x d_model");
    const double* w = params_.data();
    if (cache) {
      cache->batch = batch;
      cache->len = len;
      cache->blocks.assign(blocks_.size(), {});
    }
    Matrix x = x0;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const BlockSlots& s = blocks_[l];
      BlockCache local;
      BlockCache& bc = cache ? cache->blocks[l] : local;
      bc.a = detail::layer_norm(x, w + slots_[s.ln1_g].offset, w + slots_[s.ln1_b].offset, &bc.ln1);
      bc.q = bc.a * view(w, s.wq);
      bc.k = bc.a * view(w, s.wk);
      bc.v = bc.a * view(w, s.wv);
      bc.att = detail::attention_forward(bc.q, bc.k, bc.v, batch, len);
      x.noalias() += bc.att * view(w, s.wo);
      bc.c = detail::layer_norm(x, w + slots_[s.ln2_g].offset, w + slots_[s.ln2_b].offset, &bc.ln2);
      bc.u = bc.c * view(w, s.w1);
      const Matrix g = bc.u.unaryExpr(&detail::gelu);
      x.noalias() += g * view(w, s.w2);
      if (!cache) local = {};
    }
    LayerNormCache lnf_local;
    Matrix f = detail::layer_norm(x, w + slots_[lnf_g_].offset, w + slots_[lnf_b_].offset,
                                  cache ? &cache->lnf : &lnf_local);
    Matrix logits = f * view(w, head_);
    if (cache) cache->f = std::move(f);
    return logits;
  }

  Matrix logits(std::span<const std::uint8_t> tokens, std::size_t batch, std::size_t len) const {
    return forward_embedded(embed(tokens, batch, len), batch, len);
  }

  /// Reverse pass from dlogits. Accumulates parameter gradients into `grad`
  /// when non-null (embedding tables excluded; see accumulate_embedding_grad)
  /// and returns the gradient with respect to the embedded input.
  Matrix backward(const ForwardCache& cache, const Matrix& dlogits, ParamBuffer* grad) const {
    const double* w = params_.data();
    double* gw = grad ? grad->data() : nullptr;
    auto gview = [&](std::size_t slot) { return view(gw, slot); };
    auto gptr = [&](std::size_t slot) { return gw ? gw + slots_[slot].offset : nullptr; };

    if (gw) gview(head_).noalias() += cache.f.transpose() * dlogits;
    Matrix dx = dlogits * view(w, head_).transpose();
    dx = detail::layer_norm_backward(dx, cache.lnf, w + slots_[lnf_g_].offset, gptr(lnf_g_), gptr(lnf_b_));

    for (std::size_t li = blocks_.size(); li-- > 0;) {
      const BlockSlots& s = blocks_[li];
      const BlockCache& bc = cache.blocks[li];
      // MLP branch.
      const Matrix g = bc.u.unaryExpr(&detail::gelu);
      if (gw) gview(s.w2).noalias() += g.transpose() * dx;
      Matrix du = dx * view(w, s.w2).transpose();
      du.array() *= bc.u.unaryExpr(&detail::gelu_slope).array();
      if (gw) gview(s.w1).noalias() += bc.c.transpose() * du;
      const Matrix dc = du * view(w, s.w1).transpose();
      dx += detail::layer_norm_backward(dc, bc.ln2, w + slots_[s.ln2_g].offset, gptr(s.ln2_g), gptr(s.ln2_b));
      // Attention branch.
      if (gw) gview(s.wo).noalias() += bc.att.transpose() * dx;
      const Matrix datt = dx * view(w, s.wo).transpose();
      Matrix dq, dk, dv;
      detail::attention_backward(bc.q, bc.k, bc.v, datt, cache.batch, cache.len, dq, dk, dv);
      if (gw) {
        gview(s.wq).noalias() += bc.a.transpose() * dq;
        gview(s.wk).noalias() += bc.a.transpose() * dk;
        gview(s.wv).noalias() += bc.a.transpose() * dv;
      }
      Matrix da = dq * view(w, s.wq).transpose();
      da.noalias() += dk * view(w, s.wk).transpose();
      da.noalias() += dv * view(w, s.wv).transpose();
      dx += detail::layer_norm_backward(da, bc.ln1, w + slots_[s.ln1_g].offset, gptr(s.ln1_g), gptr(s.ln1_b));
    }
    return dx;
  }

  void accumulate_embedding_grad(std::span<const std::uint8_t> tokens, std::size_t batch, std::size_t len,
                                 const Matrix& dx0, ParamBuffer& grad) const {
    auto tok = view(grad.data(), tok_);
    auto pos = view(grad.data(), pos_);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < len; ++t) {
        const auto r = static_cast<Eigen::Index>(b * len + t);
        tok.row(tokens[b * len + t]) += dx0.row(r);
        pos.row(static_cast<Eigen::Index>(t)) += dx0.row(r);
      }
  }

  /// Mean cross-entropy of next-byte prediction over `batch` windows of
  /// len + 1 bytes each; fills `grad` (overwritten) when non-null.
  double loss(std::span<const std::uint8_t> windows, std::size_t batch, std::size_t len,
              ParamBuffer* grad = nullptr) const {
    if (windows.size() != batch * (len + 1)) throw std::invalid_argument("loss expects batch windows of len + 1 bytes");
    std::vector<std::uint8_t> inputs(batch * len), targets(batch * len);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < len; ++t) {
        inputs[b * len + t] = windows[b * (len + 1) + t];
        targets[b * len + t] = windows[b * (len + 1) + t + 1];
      }
    const Matrix x0 = embed(inputs, batch, len);
    if (!grad) return cross_entropy(forward_embedded(x0, batch, len), targets);
    ForwardCache cache;
    const Matrix logit = forward_embedded(x0, batch, len, &cache);
    Matrix dlogits;
    const double value = cross_entropy(logit, targets, &dlogits);
    grad->assign(params_.size(), 0.0);
    const Matrix dx0 = backward(cache, dlogits, grad);
    accumulate_embedding_grad(inputs, batch, len, dx0, *grad);
    return value;
  }

  /// Last-position logit tangents for stacked input tangents dx0
  /// ((probes * len) x d) around one embedded sequence x0 (len x d).
  /// Returns probes x vocab.
  Matrix last_logit_tangents(const Matrix& x0, const Matrix& dx0) const {
    const auto len = static_cast<std::size_t>(x0.rows());
    if (dx0.cols() != x0.cols() || dx0.rows() % x0.rows() != 0)
      throw std::invalid_argument("tangent block must stack whole sequences");
    const std::size_t probes = static_cast<std::size_t>(dx0.rows()) / len;
    ForwardCache cache;
    forward_embedded(x0, 1, len, &cache);
    const double* w = params_.data();
    Matrix dx = dx0;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const BlockSlots& s = blocks_[l];
      const BlockCache& bc = cache.blocks[l];
      const Matrix da = detail::layer_norm_tangent(dx, bc.ln1, w + slots_[s.ln1_g].offset);
      const Matrix dq = da * view(w, s.wq);
      const Matrix dk = da * view(w, s.wk);
      const Matrix dv = da * view(w, s.wv);
      dx.noalias() += detail::attention_tangent(bc.q, bc.k, bc.v, dq, dk, dv) * view(w, s.wo);
      const Matrix dc = detail::layer_norm_tangent(dx, bc.ln2, w + slots_[s.ln2_g].offset);
      Matrix du = dc * view(w, s.w1);
      const Matrix slope = bc.u.unaryExpr(&detail::gelu_slope);
      for (std::size_t p = 0; p < probes; ++p)
        du.middleRows(static_cast<Eigen::Index>(p * len), static_cast<Eigen::Index>(len)).array() *= slope.array();
      dx.noalias() += du * view(w, s.w2);
    }
    // Only the last position is needed past the final residual stream.
    const auto last = static_cast<Eigen::Index>(len - 1);
    LayerNormCache lnf_last{cache.lnf.xhat.row(last), cache.lnf.inv_std.segment(last, 1)};
    Matrix dlast(static_cast<Eigen::Index>(probes), dx.cols());
    for (std::size_t p = 0; p < probes; ++p) dlast.row(static_cast<Eigen::Index>(p)) = dx.row(static_cast<Eigen::Index>(p * len) + last);
    const Matrix df = detail::layer_norm_tangent(dlast, lnf_last, w + slots_[lnf_g_].offset);
    return df * view(w, head_);
  }

  ConstMatrixMap tensor(const std::string& name) const {
    for (std::size_t i = 0; i < slots_.size(); ++i)
      if (slots_[i].name == name) return view(params_.data(), i);
    throw std::out_of_range("no parameter named '" + name + "'");
  }
  MatrixMap tensor(const std::string& name) {
    for (std::size_t i = 0; i < slots_.size(); ++i)
      if (slots_[i].name == name) return view(params_.data(), i);
    throw std::out_of_range("no parameter named '" + name + "'");
  }

 private:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    slots_.push_back({std::move(name), rows, cols, total_});
    total_ += rows * cols;
    return slots_.size() - 1;
  }

  ConstMatrixMap view(const double* base, std::size_t slot) const {
    const auto& s = slots_[slot];
    return {base + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols)};
  }
  MatrixMap view(double* base, std::size_t slot) const {
    const auto& s = slots_[slot];
    return {base + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols)};
  }

  void check_tokens(std::span<const std::uint8_t> tokens, std::size_t batch, std::size_t len) const {
    if (tokens.size() != batch * len) throw std::invalid_argument("token count must equal batch * len");
    if (len < 1 || len > context())
      throw std::invalid_argument("sequence length " + std::to_string(len) + " outside [1, " +
                                  std::to_string(context()) + "]");
    for (std::uint8_t t : tokens)
      if (t >= vocab()) throw std::out_of_range("token id " + std::to_string(t) + " outside the vocabulary");
  }

  ShapeConfig shape_;
  std::vector<TensorSlot> slots_;
  std::vector<BlockSlots> blocks_;
  std::size_t tok_ = 0, pos_ = 0, lnf_g_ = 0, lnf_b_ = 0, head_ = 0;
  std::size_t total_ = 0;
  ParamBuffer params_;
};

/// Token ids to logits ((len) x vocab) for one sequence.
inline Matrix lm_forward(const TinyTransformer& model, std::span<const std::uint8_t> tokens) {
  return model.logits(tokens, 1, tokens.size());
}

/// The differentiable map from an embedded sequence (len x d, after token and
/// position lookup) to the logits at the last position.
class LastLogitsModel final : public DiffModel {
 public:
  LastLogitsModel(const TinyTransformer& model, std::size_t len) : model_(model), len_(len) {
    if (len < 1 || len > model.context()) throw std::invalid_argument("sequence length outside [1, context]");
  }

  Shape input_shape() const override { return {len_, model_.d_model()}; }
  std::size_t output_dim() const override { return model_.vocab(); }

  Vector evaluate(const Vector& x) const override {
    const Matrix logits = model_.forward_embedded(as_sequence(x), 1, len_);
    return logits.row(logits.rows() - 1).transpose();
  }

  Vector jvp(const Vector& x, const Vector& u) const override {
    Matrix block(u.size(), 1);
    block.col(0) = u;
    return jvp_block(x, block).col(0);
  }

  Matrix jvp_block(const Vector& x, const Matrix& tangents) const override {
    const auto d = static_cast<Eigen::Index>(model_.d_model());
    const auto len = static_cast<Eigen::Index>(len_);
    Matrix dx(tangents.cols() * len, d);
    for (Eigen::Index p = 0; p < tangents.cols(); ++p)
      for (Eigen::Index t = 0; t < len; ++t) dx.row(p * len + t) = tangents.col(p).segment(t * d, d).transpose();
    return model_.last_logit_tangents(as_sequence(x), dx).transpose();
  }

  Vector vjp(const Vector& x, const Vector& w) const override {
    ForwardCache cache;
    const Matrix logits = model_.forward_embedded(as_sequence(x), 1, len_, &cache);
    Matrix dlogits = Matrix::Zero(logits.rows(), logits.cols());
    dlogits.row(logits.rows() - 1) = w.transpose();
    const Matrix dx = model_.backward(cache, dlogits, nullptr);
    return Eigen::Map<const Vector>(dx.data(), dx.size());
  }

  /// Embedded form of a token sequence, flattened row-major.
  Tensor embed(std::span<const std::uint8_t> tokens) const {
    const Matrix x = model_.embed(tokens, 1, len_);
    return Tensor(input_shape(), std::vector<double>(x.data(), x.data() + x.size()));
  }

 private:
  Matrix as_sequence(const Vector& x) const {
    return ConstMatrixMap(x.data(), static_cast<Eigen::Index>(len_), static_cast<Eigen::Index>(model_.d_model()));
  }

  const TinyTransformer& model_;
  std::size_t len_;
};

}  // namespace agop
