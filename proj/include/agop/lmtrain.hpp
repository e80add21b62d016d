#pragma once

// Fixed-budget training of the byte-level decoder and the projected AGOP
// measurement that produces one TrialRecord per (shape, seed).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agop/corpus.hpp"
#include "agop/estimators.hpp"
#include "agop/lmshape.hpp"
#include "agop/metrics.hpp"
#include "agop/optim.hpp"
#include "agop/transformer.hpp"

namespace agop {

/// D = 60 P bytes; S0 = max(200, floor(D / (context * batch))); training
/// runs at most floor(1.5 S0) updates.
struct TrainBudget {
  std::uint64_t tokens = 0;
  long long base_steps = 0;
  long long max_steps = 0;
  std::size_t batch = 64;
  long long eval_every = 200;

  static TrainBudget for_target(std::uint64_t target_n, std::size_t context, std::size_t batch = 64,
                                double tokens_per_param = 60.0, long long min_steps = 200) {
    TrainBudget b;
    b.batch = batch;
    b.tokens = static_cast<std::uint64_t>(tokens_per_param * static_cast<double>(target_n));
    b.base_steps = std::max<long long>(min_steps, static_cast<long long>(b.tokens / context / batch));
    b.max_steps = b.base_steps * 3 / 2;
    return b;
  }
};

struct LmTrainConfig {
  double lr = 3e-4;
  double weight_decay = 1e-2;
  double clip_norm = 1.0;
  long long warmup = 300;
  std::size_t patience = 3;
  /// Cap on validation/test windows per evaluation; 0 evaluates the whole split.
  std::size_t max_eval_windows = 0;
  /// Leading training-split windows used to score train loss before and after training.
  std::size_t train_eval_windows = 64;
  std::size_t eval_batch = 64;
  EstimatorConfig estimator;
  std::size_t projection_dim = 64;
  std::uint64_t projection_seed = 20240601;
  std::size_t agop_workers = 1;
};

struct TrialRecord {
  ShapeConfig shape;
  std::uint64_t seed = 0;
  double initial_train_loss = std::numeric_limits<double>::quiet_NaN();
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double test_loss = std::numeric_limits<double>::quiet_NaN();
  double aofe = std::numeric_limits<double>::quiet_NaN();
  double aofe_ratio = std::numeric_limits<double>::quiet_NaN();
  long long steps = 0;
  long long best_step = 0;
  bool diverged = false;
  /// "ok", "diverged" or the metric failure message.
  std::string status = "ok";

  std::string id() const { return shape_id(shape); }
};

/// Mean cross-entropy over windows of context + 1 bytes, in fixed order.
inline double evaluate_windows(const TinyTransformer& model, const std::vector<std::span<const std::uint8_t>>& windows,
                               std::size_t context, std::size_t eval_batch = 64) {
  if (windows.empty()) throw std::invalid_argument("no evaluation windows");
  double total = 0.0;
  std::vector<std::uint8_t> buf;
  for (std::size_t first = 0; first < windows.size(); first += eval_batch) {
    const std::size_t count = std::min(eval_batch, windows.size() - first);
    buf.clear();
    for (std::size_t i = 0; i < count; ++i) buf.insert(buf.end(), windows[first + i].begin(), windows[first + i].end());
    total += model.loss(buf, count, context) * static_cast<double>(count);
  }
  return total / static_cast<double>(windows.size());
}

inline std::vector<std::span<const std::uint8_t>> capped(std::vector<std::span<const std::uint8_t>> w, std::size_t cap) {
  if (cap > 0 && w.size() > cap) w.resize(cap);
  return w;
}

struct LmAgopResult {
  AgopMatrix agop;
  double aofe = 0.0;
  double aofe_ratio = 0.0;
};

/// Projected JVP AGOP of last-position logits; inputs are test-split windows
/// at uniformly sampled offsets, differentiated in embedding space.
inline LmAgopResult lm_agop_metrics(const TinyTransformer& model, const ByteCorpus& corpus, const ProjectionMatrix& p,
                                    const EstimatorConfig& cfg, std::uint64_t seed, std::size_t workers = 1) {
  const std::size_t len = model.context();
  if (corpus.test.size() < len) throw std::invalid_argument("test split shorter than one context window");
  const LastLogitsModel last(model, len);
  const Dataset data(corpus.test.size() - len + 1, [&](std::size_t i) {
    return last.embed(std::span<const std::uint8_t>(corpus.test.data() + i, len));
  });
  LmAgopResult r;
  if (cfg.center_logits || cfg.rms_normalize_logits) {
    const PreprocessedModel pre(last, cfg);
    r.agop = jvp_agop(pre, data, p, cfg, seed, workers);
  } else {
    r.agop = jvp_agop(last, data, p, cfg, seed, workers);
  }
  r.aofe = aofe(r.agop);
  r.aofe_ratio = aofe_ratio(r.agop);
  return r;
}

struct LmTrainOutcome {
  TinyTransformer model;
  TrialRecord record;
  std::vector<std::pair<long long, double>> val_history;
};

/// AdamW with warmup then cosine decay over max_steps; validation every
/// eval_every updates and at the last one; early stopping (allowed once
/// base_steps updates are done) after `patience` checks without a new best;
/// the best-validation parameters are restored before final scoring.
inline LmTrainOutcome train_lm(const ShapeConfig& shape, const ByteCorpus& corpus, const TrainBudget& budget,
                               std::uint64_t seed, const LmTrainConfig& cfg = {},
                               const std::function<void(long long, double)>& on_step = {}) {
  const std::size_t ctx = shape.context;
  LmTrainOutcome out{TinyTransformer::initialized(shape, seed), {}, {}};
  TinyTransformer& model = out.model;
  TrialRecord& rec = out.record;
  rec.shape = shape;
  rec.seed = seed;

  const auto train_windows = capped(eval_windows(corpus.train, ctx), cfg.train_eval_windows);
  const auto val_windows = capped(eval_windows(corpus.valid, ctx), cfg.max_eval_windows);
  const auto test_windows = capped(eval_windows(corpus.test, ctx), cfg.max_eval_windows);
  rec.initial_train_loss = evaluate_windows(model, train_windows, ctx, cfg.eval_batch);

  ParamBuffer grad(model.parameter_count(), 0.0);
  auto refs = model.parameter_refs(grad);
  AdamWConfig acfg;
  acfg.weight_decay = cfg.weight_decay;
  acfg.clip_norm = cfg.clip_norm;
  OptimState state(acfg, refs);
  const LrSchedule schedule(cfg.lr, std::min(cfg.warmup, budget.max_steps), budget.max_steps);

  ParamBuffer best = model.parameters();
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::uint8_t> batch(budget.batch * (ctx + 1));

  long long step = 0;
  while (step < budget.max_steps) {
    for (std::size_t b = 0; b < budget.batch; ++b) {
      const auto w = sample_train_window(corpus, ctx, seed, static_cast<std::uint64_t>(step) * budget.batch + b);
      std::copy(w.begin(), w.end(), batch.begin() + static_cast<std::ptrdiff_t>(b * (ctx + 1)));
    }
    const double loss = model.loss(batch, budget.batch, ctx, &grad);
    if (!std::isfinite(loss) || adamw_step(refs, state, lr_at(schedule, step + 1)) == StepStatus::diverged) {
      rec.diverged = true;
      rec.status = "diverged";
      rec.steps = step;
      return out;
    }
    ++step;
    if (on_step) on_step(step, loss);
    if (step % budget.eval_every == 0 || step == budget.max_steps) {
      const double val = evaluate_windows(model, val_windows, ctx, cfg.eval_batch);
      out.val_history.emplace_back(step, val);
      if (!std::isfinite(val)) {
        rec.diverged = true;
        rec.status = "diverged";
        rec.steps = step;
        return out;
      }
      if (val < best_val) {
        best_val = val;
        best = model.parameters();
        rec.best_step = step;
        since_best = 0;
      } else {
        ++since_best;
      }
      if (step >= budget.base_steps && since_best >= cfg.patience) break;
    }
  }
  rec.steps = step;
  if (step > 0) model.parameters() = best;

  rec.train_loss = evaluate_windows(model, train_windows, ctx, cfg.eval_batch);
  rec.val_loss = step > 0 ? best_val : evaluate_windows(model, val_windows, ctx, cfg.eval_batch);
  rec.test_loss = evaluate_windows(model, test_windows, ctx, cfg.eval_batch);

  try {
    const ProjectionMatrix p = make_projection(cfg.projection_dim, shape.vocab, cfg.projection_seed);
    const LmAgopResult m = lm_agop_metrics(model, corpus, p, cfg.estimator, derive_seed("lm-agop", {seed}),
                                           cfg.agop_workers);
    rec.aofe = m.aofe;
    rec.aofe_ratio = m.aofe_ratio;
  } catch (const DivergedError& e) {
    rec.diverged = true;
    rec.status = std::string("diverged: ") + e.what();
  } catch (const DegenerateError& e) {
    rec.status = std::string("degenerate: ") + e.what();
  }
  return out;
}

// Trial CSV. Numbers use %.17g so that rows round-trip exactly.

inline constexpr const char* kTrialHeader =
    "ID,train_loss,val_loss,test_loss,AOFE,AOFE_ratio,target_N,depth,d_model,n_heads,d_ff,active_N,"
    "depth_width_ratio,context,seed,initial_train_loss,steps,best_step,diverged,status";

inline std::string fmt17(double v) {
  if (std::isnan(v)) return "NaN";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trial_row(const TrialRecord& r) {
  const auto& s = r.shape;
  std::string status = r.status;
  std::replace(status.begin(), status.end(), ',', ';');
  std::replace(status.begin(), status.end(), '\n', ' ');
  return r.id() + ',' + fmt17(r.train_loss) + ',' + fmt17(r.val_loss) + ',' + fmt17(r.test_loss) + ',' +
         fmt17(r.aofe) + ',' + fmt17(r.aofe_ratio) + ',' + std::to_string(s.target_n) + ',' +
         std::to_string(s.layers) + ',' + std::to_string(s.d_model) + ',' + std::to_string(s.n_heads) + ',' +
         std::to_string(s.d_ff) + ',' + std::to_string(s.active_n) + ',' + format_ratio(s.alpha()) + ',' +
         std::to_string(s.context) + ',' + std::to_string(r.seed) + ',' + fmt17(r.initial_train_loss) + ',' +
         std::to_string(r.steps) + ',' + std::to_string(r.best_step) + ',' + (r.diverged ? "1" : "0") + ',' + status;
}

}  // namespace agop
