#pragma once

// Post-processing: best shape per budget, the efficiency interval, external
// model tables with grouped trends, and correlations recomputed from the
// bundled result tables.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "agop/csv.hpp"
#include "agop/hash.hpp"
#include "agop/lmshape.hpp"
#include "agop/lmtrain.hpp"
#include "agop/stats.hpp"

namespace agop {

/// Lowest test loss per budget among non-diverged records. Ties go to the
/// lower validation loss, then to the smaller alpha. Budgets with no usable
/// record are omitted and named in `warnings`.
inline std::vector<TrialRecord> best_per_budget(const std::vector<TrialRecord>& records,
                                                std::vector<std::string>* warnings = nullptr) {
  std::map<std::uint64_t, std::optional<TrialRecord>> best;
  for (const auto& r : records) {
    auto& slot = best[r.shape.target_n];
    if (r.diverged || !std::isfinite(r.test_loss)) continue;
    const auto key = [](const TrialRecord& t) { return std::make_tuple(t.test_loss, t.val_loss, t.shape.alpha()); };
    if (!slot || key(r) < key(*slot)) slot = r;
  }
  std::vector<TrialRecord> out;
  for (auto& [budget, rec] : best) {
    if (rec) out.push_back(*rec);
    else if (warnings) warnings->push_back("budget " + budget_label(budget) + " has only diverged records");
  }
  return out;
}

/// [min alpha, max alpha] over best points with target_N >= min_budget.
inline EfficiencyInterval interval_estimate(const std::vector<TrialRecord>& best, std::uint64_t min_budget) {
  std::optional<EfficiencyInterval> iv;
  for (const auto& r : best) {
    if (r.shape.target_n < min_budget) continue;
    const double a = r.shape.alpha();
    if (!iv) iv = EfficiencyInterval{a, a};
    iv->lo = std::min(iv->lo, a);
    iv->hi = std::max(iv->hi, a);
  }
  if (!iv) throw std::invalid_argument("no best point at or above budget " + budget_label(min_budget));
  return *iv;
}

// External model tables.

struct ExternalModelRow {
  std::string model;
  std::string family;
  double params_b = 0.0;
  std::size_t d_model = 0;
  std::size_t layers = 0;
  double mmlu_pro = 0.0;
  std::string param_group;
  std::size_t line = 0;

  double alpha() const { return static_cast<double>(layers) / static_cast<double>(d_model); }
};

struct IngestResult {
  std::vector<ExternalModelRow> rows;
  /// One message per rejected or dropped row, prefixed with its line number.
  std::vector<std::string> diagnostics;
};

inline bool truthy(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s == "1" || s == "true" || s == "yes" || s == "moe";
}

/// Required columns: model, family, params_B, d_model, layers, mmlu_pro,
/// param_group. Rows flagged in an optional `moe` column are rejected.
/// Variants of one model sharing (family, d_model, layers) keep the first row.
inline IngestResult ingest_model_table(std::istream& in) {
  const CsvTable t = read_csv(in);
  for (const char* col : {"model", "family", "params_B", "d_model", "layers", "mmlu_pro", "param_group"})
    if (!t.find(col)) throw CsvError(1, std::string("header lacks required column '") + col + "'");
  const auto moe = t.find("moe");
  IngestResult res;
  std::map<std::tuple<std::string, std::size_t, std::size_t>, std::size_t> seen;
  for (const auto& raw : t.rows) {
    try {
      const CsvRecord rec(t, raw);
      ExternalModelRow row;
      row.line = raw.line;
      row.model = rec.text("model");
      row.family = rec.text("family");
      row.param_group = rec.text("param_group");
      if (row.model.empty() || row.param_group.empty()) throw CsvError(raw.line, "model and param_group are required");
      row.params_b = rec.number("params_B");
      row.d_model = rec.count("d_model");
      row.layers = rec.count("layers");
      row.mmlu_pro = rec.number("mmlu_pro");
      if (!std::isfinite(row.mmlu_pro)) throw CsvError(raw.line, "mmlu_pro is not a finite score");
      if (row.d_model < 1 || row.layers < 1) throw CsvError(raw.line, "d_model and layers must be >= 1");
      if (moe && truthy(raw.cells[*moe]))
        throw CsvError(raw.line, "mixture-of-experts model '" + row.model + "' rejected: dense models only");
      const auto key = std::make_tuple(row.family, row.d_model, row.layers);
      if (auto it = seen.find(key); it != seen.end()) {
        res.diagnostics.push_back("line " + std::to_string(raw.line) + ": duplicate shape of line " +
                                  std::to_string(it->second) + " (" + row.family + ", d_model=" +
                                  std::to_string(row.d_model) + ", layers=" + std::to_string(row.layers) +
                                  ") dropped");
        continue;
      }
      seen.emplace(key, raw.line);
      res.rows.push_back(std::move(row));
    } catch (const CsvError& e) {
      res.diagnostics.push_back(e.what());
    }
  }
  return res;
}

inline IngestResult ingest_model_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return ingest_model_table(in);
}

struct TrendResult {
  std::string group;
  std::size_t count = 0;
  /// Empty when the group has fewer than two rows or no spread.
  std::optional<double> r;
  std::optional<LinearFit> fit;
};

/// Per param_group (in order of first appearance): correlation and
/// least-squares line of MMLU-Pro against delta_alpha.
inline std::vector<TrendResult> grouped_trend(const std::vector<ExternalModelRow>& rows,
                                              const EfficiencyInterval& iv = {}) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& row : rows) {
    if (!groups.count(row.param_group)) order.push_back(row.param_group);
    auto& g = groups[row.param_group];
    g.first.push_back(delta_alpha(static_cast<double>(row.layers), static_cast<double>(row.d_model), iv));
    g.second.push_back(row.mmlu_pro);
  }
  std::vector<TrendResult> out;
  for (const auto& name : order) {
    const auto& [xs, ys] = groups[name];
    TrendResult t;
    t.group = name;
    t.count = xs.size();
    if (xs.size() >= 2) {
      try {
        t.r = pearson(xs, ys);
        t.fit = least_squares(xs, ys);
      } catch (const DegenerateError&) {
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

// Bundled result tables.

/// Joins shape rows (ID, target_N, depth, d_model, ...) with metric rows
/// (ID, train_loss, val_loss, test_loss, AOFE, AOFE_ratio). Rows whose losses
/// are NaN come back flagged diverged.
inline std::vector<TrialRecord> load_trial_tables(const std::filesystem::path& configs,
                                                  const std::filesystem::path& metrics) {
  const CsvTable ct = read_csv(configs);
  const CsvTable mt = read_csv(metrics);
  std::map<std::string, ShapeConfig> shapes;
  for (const auto& raw : ct.rows) {
    const CsvRecord r(ct, raw);
    ShapeConfig s = make_shape(r.count("depth"), r.count("d_model"), r.count("target_N"));
    s.n_heads = r.count("n_heads");
    s.d_ff = r.count("d_ff");
    s.active_n = r.count("active_N");
    shapes[r.text("ID")] = s;
  }
  std::vector<TrialRecord> out;
  for (const auto& raw : mt.rows) {
    const CsvRecord r(mt, raw);
    const auto it = shapes.find(r.text("ID"));
    if (it == shapes.end()) throw CsvError(raw.line, "no shape row for ID " + r.text("ID"));
    TrialRecord t;
    t.shape = it->second;
    t.train_loss = r.number("train_loss");
    t.val_loss = r.number("val_loss");
    t.test_loss = r.number("test_loss");
    t.aofe = r.number("AOFE");
    t.aofe_ratio = r.number("AOFE_ratio");
    t.diverged = !std::isfinite(t.test_loss);
    t.status = t.diverged ? "diverged" : "ok";
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<double> column_values(const CsvTable& t, const std::string& name) {
  std::vector<double> v;
  const std::size_t c = t.column(name);
  for (const auto& row : t.rows) v.push_back(parse_double(row.cells.at(c), row.line, name));
  return v;
}

struct FixtureCheck {
  std::string metric;
  double paper = 0.0;
  double value = 0.0;
  /// Empty for informational variants that carry no pass/fail.
  std::optional<double> tolerance;

  double deviation() const { return value - paper; }
  bool pass() const { return !tolerance || std::abs(deviation()) <= *tolerance; }
};

/// Correlations quoted alongside the bundled tables, recomputed from them.
/// `tolerances` overrides the default tolerance per metric name.
inline std::vector<FixtureCheck> fixture_correlations(const std::filesystem::path& data_dir,
                                                      const std::map<std::string, double>& tolerances = {}) {
  std::vector<FixtureCheck> out;
  auto add = [&](std::string name, double paper, double value, std::optional<double> tol) {
    if (tol)
      if (auto it = tolerances.find(name); it != tolerances.end()) tol = it->second;
    out.push_back({std::move(name), paper, value, tol});
  };
  auto need = [&](const char* file) {
    const auto p = data_dir / file;
    if (!std::filesystem::exists(p)) throw std::runtime_error("fixture missing: " + p.string());
    return read_csv(p);
  };

  const std::pair<const char*, double> cross[] = {{"cross_cnn", -0.896}, {"cross_vit", -0.856}, {"cross_rnn", -0.718}};
  for (const auto& [name, paper] : cross) {
    const CsvTable t = need((std::string(name) + ".csv").c_str());
    add(std::string(name) + ".r_test_loss_aofe_ratio", paper,
        pearson(column_values(t, "test_loss"), column_values(t, "AOFE_ratio")), 0.01);
  }

  {
    const CsvTable t = need("double_descent.csv");
    const auto loss = column_values(t, "test_loss_mean");
    const auto energy = column_values(t, "AOFE");
    add("double_descent.r_test_loss_aofe", 0.94, pearson(loss, energy), 0.05);
    std::vector<double> log_energy;
    for (double e : energy) log_energy.push_back(std::log10(e));
    add("double_descent.r_test_loss_log_aofe", 0.94, pearson(loss, log_energy), std::nullopt);
  }

  {
    need("lm_configs.csv");
    need("lm_metrics.csv");
    const auto records = load_trial_tables(data_dir / "lm_configs.csv", data_dir / "lm_metrics.csv");
    const auto best = best_per_budget(records);
    auto corr = [](const std::vector<TrialRecord>& pts, bool ratio) {
      std::vector<double> loss, metric;
      for (const auto& r : pts) {
        loss.push_back(r.test_loss);
        metric.push_back(ratio ? r.aofe_ratio : r.aofe);
      }
      return pearson(loss, metric);
    };
    add("lm_best.r_test_loss_aofe", 0.883, corr(best, false), 0.01);
    add("lm_best.r_test_loss_aofe_ratio", -0.967, corr(best, true), 0.01);
    std::vector<TrialRecord> large;
    for (const auto& r : best)
      if (r.shape.target_n >= 1000000) large.push_back(r);
    add("lm_best_ge_1M.r_test_loss_aofe", 0.883, corr(large, false), std::nullopt);
    add("lm_best_ge_1M.r_test_loss_aofe_ratio", -0.967, corr(large, true), std::nullopt);
    const EfficiencyInterval iv = interval_estimate(best, 1000000);
    add("lm_best_ge_1M.interval_lo", 0.023, iv.lo, 0.0005);
    add("lm_best_ge_1M.interval_hi", 0.047, iv.hi, 0.0005);
  }
  return out;
}

// Fixture checksums: data/CHECKSUMS holds "<fnv1a64 hex>  <file name>" lines.

struct ChecksumResult {
  std::string file;
  std::string expected;
  std::string actual;
  bool ok() const { return expected == actual; }
};

inline std::vector<ChecksumResult> verify_fixture_checksums(const std::filesystem::path& data_dir) {
  std::ifstream in(data_dir / "CHECKSUMS");
  if (!in) throw std::runtime_error("cannot open " + (data_dir / "CHECKSUMS").string());
  std::vector<ChecksumResult> out;
  std::string hex, file;
  while (in >> hex >> file) {
    const auto p = data_dir / file;
    out.push_back({file, hex, std::filesystem::exists(p) ? hex64(file_checksum(p)) : std::string("missing")});
  }
  return out;
}

inline void write_fixture_checksums(const std::filesystem::path& data_dir, const std::vector<std::string>& files) {
  std::ofstream out(data_dir / "CHECKSUMS");
  for (const auto& f : files) out << hex64(file_checksum(data_dir / f)) << "  " << f << '\n';
}

inline std::vector<std::string> fixture_files() {
  return {"cross_cnn.csv",  "cross_rnn.csv",  "cross_vit.csv",  "double_descent.csv",
          "external_models.csv", "lm_configs.csv", "lm_metrics.csv"};
}

}  // namespace agop
