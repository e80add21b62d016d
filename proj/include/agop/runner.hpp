#pragma once

// Experiment runner: output directory layout, run manifest, resumable
// per-trial logs and the derived result files.
//
//   <out>/run.ini      resolved config plus a [provenance] section; written
//                      before the first trial and checked on resume
//   <out>/trials.csv   one row per completed trial, appended under a lock
//   <out>/...          sorted result tables and plots, rebuilt from trials.csv
//
// Result tables depend only on the set of completed trials, never on the
// order they finished in, so reruns and resumed runs are byte-identical.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "agop/analysis.hpp"
#include "agop/checkpoint.hpp"
#include "agop/config.hpp"
#include "agop/corpus.hpp"
#include "agop/csv.hpp"
#include "agop/hash.hpp"
#include "agop/lmshape.hpp"
#include "agop/lmtrain.hpp"
#include "agop/svg.hpp"
#include "agop/toymodel.hpp"

#ifndef AGOP_SOURCE_HASH
#define AGOP_SOURCE_HASH "unknown"
#endif

namespace agop {

namespace fs = std::filesystem;

struct RunOptions {
  /// Continue a run whose output directory already holds trials.
  bool resume = false;
  /// Config keys set away from the profile defaults, recorded in the manifest.
  std::vector<std::string> overrides;
  std::ostream* log = nullptr;
};

// Manifest

inline std::string manifest_text(const RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& prov) {
  std::string text = to_ini(cfg);
  text += "[provenance]\n";
  for (const auto& [k, v] : prov) text += k + "=" + v + "\n";
  return text;
}

/// Creates `dir` and its manifest, or validates an existing one. A directory
/// with completed trials is only reused under `resume`, and only for an
/// identical config.
inline void open_run_dir(const fs::path& dir, const RunConfig& cfg,
                         const std::vector<std::pair<std::string, std::string>>& prov, const RunOptions& opt) {
  fs::create_directories(dir);
  const fs::path manifest = dir / "run.ini";
  if (fs::exists(manifest)) {
    const RunConfig old = config_from_tree(read_config_file(manifest));
    const bool has_trials = fs::exists(dir / "trials.csv") && fs::file_size(dir / "trials.csv") > 0;
    if (has_trials && !opt.resume)
      throw std::runtime_error(dir.string() + " already holds trials; pass --resume to continue or choose another --out");
    if (has_trials && !same_config(old, cfg))
      throw std::runtime_error(dir.string() + " was created with a different config; refusing to mix results");
  }
  std::ofstream out(manifest);
  if (!out) throw std::runtime_error("cannot write " + manifest.string());
  out << manifest_text(cfg, prov);
}

inline std::vector<std::pair<std::string, std::string>> base_provenance(const RunConfig& cfg, const RunOptions& opt) {
  std::vector<std::pair<std::string, std::string>> prov{{"source_hash", AGOP_SOURCE_HASH}};
  std::string joined;
  for (const auto& o : opt.overrides) joined += (joined.empty() ? "" : " ; ") + o;
  prov.emplace_back("overrides", joined.empty() ? "none" : joined);
  for (const auto& f : fixture_files()) {
    const fs::path p = fs::path(cfg.data_dir) / f;
    if (fs::exists(p)) prov.emplace_back("fixture." + f, hex64(file_checksum(p)));
  }
  return prov;
}

// Trial log

/// Append-only CSV of completed trials keyed by their first `key_columns`
/// cells. Rows are written whole and flushed while holding the lock.
class TrialLog {
 public:
  TrialLog(fs::path path, std::string header, std::size_t key_columns)
      : path_(std::move(path)), header_(std::move(header)), key_columns_(key_columns) {
    if (fs::exists(path_) && fs::file_size(path_) > 0) {
      table_ = read_csv(path_);
      if (join(table_.header) != header_)
        throw std::runtime_error(path_.string() + " has an unexpected header; was it written by another experiment?");
      for (std::size_t i = 0; i < table_.rows.size(); ++i) index_[key_of(table_.rows[i].cells)] = i;
    } else {
      table_.header = split_csv_line(header_);
      std::ofstream(path_) << header_ << '\n';
    }
  }

  const CsvTable& table() const { return table_; }
  std::optional<std::size_t> find(const std::vector<std::string>& key) const {
    const auto it = index_.find(join(key));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  void append(const std::string& row) {
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app);
    out << row << '\n';
    out.flush();
    if (!out) throw std::runtime_error("failed to append to " + path_.string());
  }

 private:
  static std::string join(const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
    return s;
  }
  std::string key_of(const std::vector<std::string>& cells) const {
    return join({cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(std::min(key_columns_, cells.size()))});
  }

  fs::path path_;
  std::string header_;
  std::size_t key_columns_;
  CsvTable table_;
  std::map<std::string, std::size_t> index_;
  std::mutex mu_;
};

/// Runs jobs 0..count-1 on up to `workers` threads. Failures are collected
/// per job; the remaining jobs still run.
inline std::vector<std::string> run_pool(std::size_t count, std::size_t workers,
                                         const std::function<void(std::size_t)>& job) {
  std::vector<std::string> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < count;) {
      try {
        job(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, count));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return errors;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Double descent

inline constexpr const char* kToyTrialHeader = "data_size,seed,test_loss,AOFE,AOFE_ratio,diverged,degenerate";
inline constexpr const char* kDoubleDescentHeader =
    "data_size,test_loss_mean,test_loss_std,AOFE_ratio,AOFE_ratio_std,AOFE,AOFE_std,trials,diverged,degenerate";

inline std::string toy_trial_row(const ToyTrialResult& r) {
  return std::to_string(r.n) + ',' + std::to_string(r.seed) + ',' + fmt17(r.test_loss) + ',' + fmt17(r.aofe) + ',' +
         fmt17(r.aofe_ratio) + ',' + (r.diverged ? "1" : "0") + ',' + (r.degenerate ? "1" : "0");
}

inline ToyTrialResult parse_toy_trial(const CsvTable& t, const CsvRow& row) {
  const CsvRecord r(t, row);
  ToyTrialResult out;
  out.n = r.count("data_size");
  out.seed = r.count("seed");
  out.test_loss = r.number("test_loss");
  out.aofe = r.number("AOFE");
  out.aofe_ratio = r.number("AOFE_ratio");
  out.diverged = r.count("diverged") != 0;
  out.degenerate = r.count("degenerate") != 0;
  return out;
}

inline std::string double_descent_csv(const std::vector<DoubleDescentRow>& rows, std::size_t seeds) {
  std::string s = std::string(kDoubleDescentHeader) + '\n';
  for (const auto& r : rows)
    s += std::to_string(r.data_size) + ',' + fmt17(r.test_loss.mean) + ',' + fmt17(r.test_loss.std) + ',' +
         fmt17(r.aofe_ratio.mean) + ',' + fmt17(r.aofe_ratio.std) + ',' + fmt17(r.aofe.mean) + ',' +
         fmt17(r.aofe.std) + ',' + std::to_string(seeds) + ',' + std::to_string(r.diverged) + ',' +
         std::to_string(r.degenerate) + '\n';
  return s;
}

struct SweepSummary {
  fs::path dir;
  std::size_t computed = 0;
  std::size_t reused = 0;
  /// One entry per failed trial; failed trials are not logged and rerun on resume.
  std::vector<std::string> failures;
};

struct DoubleDescentRun {
  SweepSummary summary;
  std::vector<DoubleDescentRow> rows;
  std::vector<ToyTrialResult> trials;
};

inline fs::path toy_agop_path(const fs::path& dir, std::size_t n, std::uint64_t seed) {
  return dir / "agop" / ("n" + std::to_string(n) + "_seed" + std::to_string(seed) + ".csv");
}

inline AgopMatrix leading_block(const AgopMatrix& g, std::size_t k) {
  const auto kk = static_cast<Eigen::Index>(std::min<std::size_t>(k, g.dim()));
  return {g.values.topLeftCorner(kk, kk), g.space, g.sample_count, g.estimator};
}

inline DoubleDescentRun run_double_descent(const RunConfig& cfg, const RunOptions& opt = {}) {
  DoubleDescentRun run;
  const fs::path dir = resolve_out_dir(cfg);
  run.summary.dir = dir;
  open_run_dir(dir, cfg, base_provenance(cfg, opt), opt);
  fs::create_directories(dir / "agop");

  const auto& sizes = cfg.toy.sizes;
  if (sizes.empty()) throw std::invalid_argument("double-descent needs at least one size");
  const auto heat = [&](std::size_t n) {
    return std::find(cfg.toy.heatmap_sizes.begin(), cfg.toy.heatmap_sizes.end(), n) != cfg.toy.heatmap_sizes.end();
  };

  TrialLog log(dir / "trials.csv", kToyTrialHeader, 2);
  struct Job {
    std::size_t n;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  std::map<std::pair<std::size_t, std::uint64_t>, ToyTrialResult> done;
  for (std::size_t n : sizes)
    for (std::uint64_t s = 0; s < cfg.toy.seeds; ++s) {
      const auto i = log.find({std::to_string(n), std::to_string(s)});
      if (i) {
        done[{n, s}] = parse_toy_trial(log.table(), log.table().rows[*i]);
        ++run.summary.reused;
      } else {
        jobs.push_back({n, s});
      }
    }
  if (opt.log && run.summary.reused) *opt.log << "resuming: " << run.summary.reused << " trials already complete\n";

  const SparseDataset test = jobs.empty() ? SparseDataset{} : toy_test_set(cfg.toy.train);
  std::mutex mu;
  const auto errors = run_pool(jobs.size(), cfg.workers, [&](std::size_t j) {
    const auto [n, s] = jobs[j];
    ToyTrainConfig tc = cfg.toy.train;
    tc.keep_agop = heat(n);
    ToyTrialResult r = train_toy(n, s, tc, &test).result;
    // The AGOP block lands before the row so a logged trial always has it.
    if (r.agop) write_agop_csv(toy_agop_path(dir, n, s), leading_block(*r.agop, cfg.toy.heatmap_dim));
    r.agop.reset();
    log.append(toy_trial_row(r));
    std::lock_guard lock(mu);
    if (opt.log)
      *opt.log << "n=" << n << " seed=" << s << " test_loss=" << fmt17(r.test_loss) << " AOFE_ratio=" << fmt17(r.aofe_ratio)
               << (r.diverged ? " diverged" : "") << '\n';
    done[{n, s}] = std::move(r);
    ++run.summary.computed;
  });
  for (std::size_t j = 0; j < jobs.size(); ++j)
    if (!errors[j].empty())
      run.summary.failures.push_back("n=" + std::to_string(jobs[j].n) + " seed=" + std::to_string(jobs[j].seed) + ": " +
                                     errors[j]);

  for (auto& [key, r] : done) {
    if (heat(r.n) && !r.diverged && fs::exists(toy_agop_path(dir, r.n, r.seed)))
      r.agop = read_agop_csv(toy_agop_path(dir, r.n, r.seed));
    run.trials.push_back(r);
  }
  run.rows = aggregate_double_descent(run.trials);
  write_text(dir / "double_descent.csv", double_descent_csv(run.rows, cfg.toy.seeds));

  for (const auto& row : run.rows) {
    if (!row.mean_agop) continue;
    std::ostringstream os;
    write_agop_csv(os, *row.mean_agop);
    write_text(dir / ("heatmap_n" + std::to_string(row.data_size) + ".csv"), os.str());
  }

  const auto series = [&](const char* name, auto field) {
    PlotSeries s{name, {}};
    for (const auto& row : run.rows) s.points.emplace_back(static_cast<double>(row.data_size), field(row));
    return s;
  };
  write_text(dir / "double_descent_loss.svg",
             scatter_svg({"Test loss vs training set size", "n", "test loss", true, false},
                         {series("test loss", [](const DoubleDescentRow& r) { return r.test_loss.mean; })}));
  write_text(dir / "double_descent_aofe.svg",
             scatter_svg({"AOFE vs training set size", "n", "AOFE", true, true},
                         {series("AOFE", [](const DoubleDescentRow& r) { return r.aofe.mean; })}));
  write_text(dir / "double_descent_ratio.svg",
             scatter_svg({"AOFE-ratio vs training set size", "n", "AOFE-ratio", true, false},
                         {series("AOFE-ratio", [](const DoubleDescentRow& r) { return r.aofe_ratio.mean; })}));
  return run;
}

// LM sweep

inline ByteCorpus sweep_corpus(const RunConfig& cfg, const fs::path& dir) {
  std::vector<fs::path> paths(cfg.lm.corpus.begin(), cfg.lm.corpus.end());
  if (paths.empty()) {
    const fs::path p = dir / "corpus" / "synthetic.txt";
    if (!fs::exists(p)) {
      fs::create_directories(p.parent_path());
      write_text(p, synthetic_corpus(cfg.lm.synthetic_bytes, cfg.lm.synthetic_seed));
    }
    paths.push_back(p);
  }
  return load_corpus(paths, cfg.lm.context);
}

struct ShapePlan {
  std::vector<ShapeConfig> shapes;
  std::vector<ShapeSkip> skipped;
};

inline ShapePlan plan_shapes(const LmSection& lm) {
  ShapePlan plan;
  for (std::uint64_t budget : lm.budgets) {
    const auto depths = lm.depths.empty() ? reference_depths_for(budget) : lm.depths;
    auto s = enumerate_shapes(budget, depths, &plan.skipped, lm.vocab, lm.context);
    plan.shapes.insert(plan.shapes.end(), s.begin(), s.end());
  }
  return plan;
}

inline TrialRecord parse_trial_record(const CsvTable& t, const CsvRow& row, std::size_t vocab) {
  const CsvRecord r(t, row);
  TrialRecord rec;
  rec.shape = make_shape(r.count("depth"), r.count("d_model"), r.count("target_N"), vocab, r.count("context"));
  if (rec.shape.n_heads != r.count("n_heads") || rec.shape.d_ff != r.count("d_ff") ||
      rec.shape.active_n != r.count("active_N"))
    throw CsvError(row.line, "shape columns disagree with the shape rule");
  rec.seed = r.count("seed");
  rec.train_loss = r.number("train_loss");
  rec.val_loss = r.number("val_loss");
  rec.test_loss = r.number("test_loss");
  rec.aofe = r.number("AOFE");
  rec.aofe_ratio = r.number("AOFE_ratio");
  rec.initial_train_loss = r.number("initial_train_loss");
  rec.steps = static_cast<long long>(r.count("steps"));
  rec.best_step = static_cast<long long>(r.count("best_step"));
  rec.diverged = r.count("diverged") != 0;
  rec.status = r.text("status");
  return rec;
}

inline std::string trial_table(std::vector<TrialRecord> records) {
  std::sort(records.begin(), records.end(), [](const TrialRecord& a, const TrialRecord& b) {
    return std::tie(a.shape.target_n, a.shape.layers, a.seed) < std::tie(b.shape.target_n, b.shape.layers, b.seed);
  });
  std::string s = std::string(kTrialHeader) + '\n';
  for (const auto& r : records) s += trial_row(r) + '\n';
  return s;
}

struct LmSweepRun {
  SweepSummary summary;
  ShapePlan plan;
  std::vector<TrialRecord> records;
  std::vector<TrialRecord> best;
  std::optional<EfficiencyInterval> interval;
  std::vector<std::string> warnings;
};

inline std::string checkpoint_stem(const TrialRecord& r) { return r.id() + "_seed" + std::to_string(r.seed); }

inline LmSweepRun run_lm_sweep(const RunConfig& cfg, const RunOptions& opt = {}, bool shapes_only = false) {
  LmSweepRun run;
  const fs::path dir = resolve_out_dir(cfg);
  run.summary.dir = dir;
  run.plan = plan_shapes(cfg.lm);

  fs::create_directories(dir);
  {
    std::ostringstream os;
    write_shape_csv(os, run.plan.shapes);
    write_text(dir / "shapes.csv", os.str());
  }
  for (const auto& s : run.plan.skipped)
    run.warnings.push_back("skipped depth " + std::to_string(s.layers) + " at " + budget_label(s.target_n) + ": " +
                           s.reason);
  if (shapes_only) return run;

  const ByteCorpus corpus = sweep_corpus(cfg, dir);
  auto prov = base_provenance(cfg, opt);
  prov.emplace_back("corpus", hex64(corpus.content_hash()));
  open_run_dir(dir, cfg, prov, opt);

  TrialLog log(dir / "trials.csv", kTrialHeader, 1);
  struct Job {
    ShapeConfig shape;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  std::map<std::tuple<std::uint64_t, std::size_t, std::uint64_t>, TrialRecord> done;
  std::map<std::string, std::vector<std::size_t>> rows_by_id;
  for (std::size_t i = 0; i < log.table().rows.size(); ++i) rows_by_id[log.table().rows[i].cells.at(0)].push_back(i);
  for (const auto& shape : run.plan.shapes)
    for (std::uint64_t s = 0; s < cfg.lm.seeds; ++s) {
      std::optional<TrialRecord> found;
      for (std::size_t i : rows_by_id[shape_id(shape)]) {
        TrialRecord r = parse_trial_record(log.table(), log.table().rows[i], cfg.lm.vocab);
        if (r.seed == s) found = std::move(r);
      }
      if (found) {
        done[{shape.target_n, shape.layers, s}] = std::move(*found);
        ++run.summary.reused;
      } else {
        jobs.push_back({shape, s});
      }
    }
  if (opt.log && run.summary.reused) *opt.log << "resuming: " << run.summary.reused << " trials already complete\n";

  const ProjectionMatrix projection = make_projection(cfg.lm.train.projection_dim, cfg.lm.vocab, cfg.lm.train.projection_seed);
  std::mutex mu;
  const auto errors = run_pool(jobs.size(), cfg.workers, [&](std::size_t j) {
    const auto& [shape, seed] = jobs[j];
    TrainBudget budget =
        TrainBudget::for_target(shape.target_n, cfg.lm.context, cfg.lm.batch, cfg.lm.tokens_per_param, cfg.lm.min_steps);
    budget.eval_every = cfg.lm.eval_every;
    LmTrainConfig tc = cfg.lm.train;
    auto outcome = train_lm(shape, corpus, budget, seed, tc);
    if (!outcome.record.diverged) {
      const LmAgopResult m = lm_agop_metrics(outcome.model, corpus, projection, tc.estimator,
                                             derive_seed("lm-agop", {seed}), tc.agop_workers);
      outcome.record.aofe = m.aofe;
      outcome.record.aofe_ratio = m.aofe_ratio;
    }
    if (cfg.lm.save_checkpoints)
      save_checkpoint(dir / "checkpoints" / checkpoint_stem(outcome.record), to_checkpoint(outcome.model));
    log.append(trial_row(outcome.record));
    std::lock_guard lock(mu);
    if (opt.log)
      *opt.log << outcome.record.id() << " seed=" << seed << " steps=" << outcome.record.steps
               << " test_loss=" << fmt17(outcome.record.test_loss) << " AOFE_ratio=" << fmt17(outcome.record.aofe_ratio)
               << " status=" << outcome.record.status << '\n';
    done[{shape.target_n, shape.layers, seed}] = std::move(outcome.record);
    ++run.summary.computed;
  });
  for (std::size_t j = 0; j < jobs.size(); ++j)
    if (!errors[j].empty())
      run.summary.failures.push_back(shape_id(jobs[j].shape) + " seed=" + std::to_string(jobs[j].seed) + ": " + errors[j]);

  for (auto& [key, r] : done) run.records.push_back(r);
  write_text(dir / "lm_trials.csv", trial_table(run.records));

  run.best = best_per_budget(run.records, &run.warnings);
  write_text(dir / "best.csv", trial_table(run.best));

  nlohmann::ordered_json summary;
  summary["trials"] = run.records.size();
  summary["best"] = nlohmann::ordered_json::array();
  for (const auto& b : run.best)
    summary["best"].push_back({{"id", b.id()}, {"target_N", b.shape.target_n}, {"depth_width_ratio", b.shape.alpha()},
                               {"test_loss", b.test_loss}, {"AOFE", b.aofe}, {"AOFE_ratio", b.aofe_ratio}});
  if (run.best.size() >= 2) {
    try {
      run.interval = interval_estimate(run.best, cfg.lm.interval_min_budget);
    } catch (const std::invalid_argument& e) {
      run.warnings.push_back(std::string("interval: ") + e.what() + "; using every budget");
      run.interval = interval_estimate(run.best, 0);
    }
    summary["interval"] = {{"lo", run.interval->lo}, {"hi", run.interval->hi}};
  } else {
    summary["interval"] = nullptr;
  }
  std::vector<double> loss, ratio;
  for (const auto& r : run.records)
    if (!r.diverged && std::isfinite(r.aofe_ratio)) {
      loss.push_back(r.test_loss);
      ratio.push_back(r.aofe_ratio);
    }
  try {
    summary["r_test_loss_aofe_ratio"] = pearson(loss, ratio);
  } catch (const std::exception&) {
    summary["r_test_loss_aofe_ratio"] = nullptr;
  }
  summary["warnings"] = run.warnings;
  write_text(dir / "summary.json", summary.dump(2) + "\n");

  std::map<std::uint64_t, PlotSeries> by_budget;
  for (const auto& r : run.records) {
    if (r.diverged) continue;
    auto& s = by_budget[r.shape.target_n];
    s.name = budget_label(r.shape.target_n);
    s.points.emplace_back(r.aofe_ratio, r.test_loss);
  }
  std::vector<PlotSeries> series;
  for (auto& [b, s] : by_budget) series.push_back(std::move(s));
  write_text(dir / "loss_vs_ratio.svg", scatter_svg({"Test loss vs AOFE-ratio", "AOFE-ratio", "test loss"}, series));
  for (auto& s : series) s.points.clear();
  std::size_t k = 0;
  for (auto& [b, unused] : by_budget) {
    for (const auto& r : run.records)
      if (!r.diverged && r.shape.target_n == b) series[k].points.emplace_back(r.shape.alpha(), r.test_loss);
    ++k;
  }
  write_text(dir / "loss_vs_alpha.svg",
             scatter_svg({"Test loss vs depth/width", "L / d_model", "test loss", true, false}, series));
  return run;
}

// External comparison

struct ExtCompareRun {
  IngestResult ingest;
  std::vector<TrendResult> trends;
  nlohmann::ordered_json report;
};

inline ExtCompareRun run_ext_compare(const fs::path& table, const fs::path& out_dir, const EfficiencyInterval& iv = {}) {
  ExtCompareRun run;
  run.ingest = ingest_model_table(table);
  run.trends = grouped_trend(run.ingest.rows, iv);
  auto& j = run.report;
  j["table"] = table.string();
  j["interval"] = {{"lo", iv.lo}, {"hi", iv.hi}};
  j["diagnostics"] = run.ingest.diagnostics;
  j["models"] = nlohmann::ordered_json::array();
  for (const auto& r : run.ingest.rows) {
    const double L = static_cast<double>(r.layers), d = static_cast<double>(r.d_model);
    j["models"].push_back({{"model", r.model},
                           {"param_group", r.param_group},
                           {"d_model", r.d_model},
                           {"layers", r.layers},
                           {"alpha", L / d},
                           {"delta_alpha", delta_alpha(L, d, iv)},
                           {"layer_gap", layer_gap(L, d, iv)},
                           {"mmlu_pro", r.mmlu_pro}});
  }
  j["groups"] = nlohmann::ordered_json::array();
  for (const auto& t : run.trends) {
    nlohmann::ordered_json g{{"group", t.group}, {"count", t.count}};
    g["r"] = t.r ? nlohmann::ordered_json(*t.r) : nlohmann::ordered_json(nullptr);
    if (t.fit)
      g["fit"] = {{"slope", t.fit->slope}, {"intercept", t.fit->intercept}};
    else
      g["fit"] = nullptr;
    j["groups"].push_back(std::move(g));
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(out_dir / "ext_compare.json", j.dump(2) + "\n");
    std::map<std::string, PlotSeries> groups;
    std::vector<std::string> order;
    for (const auto& r : run.ingest.rows) {
      if (!groups.count(r.param_group)) order.push_back(r.param_group);
      auto& s = groups[r.param_group];
      s.name = r.param_group;
      s.points.emplace_back(delta_alpha(static_cast<double>(r.layers), static_cast<double>(r.d_model), iv), r.mmlu_pro);
    }
    std::vector<PlotSeries> series;
    for (const auto& name : order) series.push_back(groups[name]);
    write_text(out_dir / "ext_compare.svg", scatter_svg({"MMLU-Pro vs distance to interval", "delta_alpha", "MMLU-Pro"}, series));
  }
  return run;
}

}  // namespace agop
