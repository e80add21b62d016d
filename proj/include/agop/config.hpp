#pragma once

// Run configuration: a flat INI file with one section per experiment. Every
// field has a default equal to the reference recipe; the desk profile shrinks
// the grids so a run fits on one CPU.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "agop/lmshape.hpp"
#include "agop/lmtrain.hpp"
#include "agop/toymodel.hpp"

namespace agop {

enum class Profile { desk, full };

inline std::string to_string(Profile p) { return p == Profile::full ? "full" : "desk"; }
inline Profile parse_profile(const std::string& s) {
  if (s == "desk") return Profile::desk;
  if (s == "full") return Profile::full;
  throw std::invalid_argument("profile must be 'desk' or 'full', got '" + s + "'");
}

struct ToySection {
  ToyTrainConfig train;
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> heatmap_sizes;
  /// Heatmaps keep the leading k x k block of each AGOP.
  std::size_t heatmap_dim = 50;
  std::size_t seeds = 5;
};

struct LmSection {
  std::vector<std::uint64_t> budgets;
  /// Empty: the reference depth list for each budget.
  std::vector<std::size_t> depths;
  std::size_t context = 256;
  std::size_t vocab = 256;
  std::size_t seeds = 1;
  std::size_t batch = 64;
  double tokens_per_param = 60.0;
  long long min_steps = 200;
  long long eval_every = 200;
  LmTrainConfig train;
  /// One file (auto split) or three (train, valid, test); empty generates a synthetic corpus.
  std::vector<std::string> corpus;
  std::size_t synthetic_bytes = 4000000;
  std::uint64_t synthetic_seed = 7;
  std::uint64_t interval_min_budget = 1000000;
  bool save_checkpoints = true;
};

struct RunConfig {
  std::string experiment = "double-descent";
  Profile profile = Profile::desk;
  std::string out;
  std::size_t workers = 1;
  ToySection toy;
  LmSection lm;
  std::string ext_table = "data/external_models.csv";
  std::string data_dir = "data";
};

/// Depths scanned per budget by the reference sweep.
inline std::vector<std::size_t> reference_depths_for(std::uint64_t budget) {
  if (budget >= 10000000) return {4, 5, 6, 8, 10, 12, 14};
  if (budget >= 5000000) return {1, 2, 3, 4, 5, 6, 8, 10, 12};
  return reference_depths();
}

inline std::vector<std::uint64_t> reference_budgets() {
  return {300000,  600000,  1000000, 1300000, 1600000, 2000000,
          2300000, 2700000, 3000000, 5000000, 10000000};
}

inline RunConfig default_config(Profile profile) {
  RunConfig c;
  c.profile = profile;
  if (profile == Profile::full) {
    c.toy.sizes = default_toy_sizes();
    c.toy.heatmap_sizes = {3, 500, 10278};
    c.toy.seeds = 5;
    c.toy.train.batch_cap = 2048;
    c.lm.budgets = reference_budgets();
    c.lm.context = 256;
    c.lm.seeds = 1;
  } else {
    c.toy.sizes = {3, 30, 100, 200, 500, 1000, 2714, 10278};
    c.toy.heatmap_sizes = {3, 500, 10278};
    c.toy.seeds = 3;
    c.toy.train.batch_cap = 512;
    c.lm.budgets = {100000};
    c.lm.depths = {1, 2, 4, 8, 12};
    c.lm.context = 64;
    c.lm.seeds = 1;
  }
  return c;
}

namespace detail {

inline std::string format_value(const std::string& v) { return v; }
inline std::string format_value(bool v) { return v ? "true" : "false"; }
inline std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
template <class T>
  requires std::is_integral_v<T>
std::string format_value(T v) {
  return std::to_string(v);
}
inline std::string format_value(Profile p) { return to_string(p); }
template <class T>
std::string format_value(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_value(v[i]);
  return s;
}

inline void parse_value(const std::string& s, std::string& v) { v = s; }
inline void parse_value(const std::string& s, bool& v) {
  if (s == "true" || s == "1" || s == "yes") v = true;
  else if (s == "false" || s == "0" || s == "no") v = false;
  else throw std::invalid_argument("'" + s + "' is not a boolean");
}
inline void parse_value(const std::string& s, double& v) {
  std::size_t used = 0;
  v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("'" + s + "' is not a number");
}
template <class T>
  requires std::is_integral_v<T>
void parse_value(const std::string& s, T& v) {
  std::size_t used = 0;
  const long long x = std::stoll(s, &used);
  if (used != s.size()) throw std::invalid_argument("'" + s + "' is not an integer");
  if (std::is_unsigned_v<T> && x < 0) throw std::invalid_argument("'" + s + "' must be non-negative");
  v = static_cast<T>(x);
}
inline void parse_value(const std::string& s, Profile& v) { v = parse_profile(s); }
template <class T>
void parse_value(const std::string& s, std::vector<T>& v) {
  v.clear();
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    T x{};
    parse_value(item.substr(b, e - b + 1), x);
    v.push_back(x);
  }
}

/// Calls f(key, field) for every configurable field, in file order.
template <class F>
void visit_fields(RunConfig& c, F&& f) {
  f("general.experiment", c.experiment);
  f("general.profile", c.profile);
  f("general.out", c.out);
  f("general.workers", c.workers);
  f("general.data_dir", c.data_dir);

  auto& t = c.toy.train;
  f("toy.d", t.d);
  f("toy.m", t.m);
  f("toy.p_zero", t.p_zero);
  f("toy.steps", t.steps);
  f("toy.lr", t.lr);
  f("toy.weight_decay", t.weight_decay);
  f("toy.warmup_fraction", t.warmup_fraction);
  f("toy.batch_cap", t.batch_cap);
  f("toy.test_size", t.test_size);
  f("toy.init_std", t.init_std);
  f("toy.agop_chunk", t.agop_chunk);
  f("toy.sizes", c.toy.sizes);
  f("toy.heatmap_sizes", c.toy.heatmap_sizes);
  f("toy.heatmap_dim", c.toy.heatmap_dim);
  f("toy.seeds", c.toy.seeds);

  auto& l = c.lm;
  f("lm.budgets", l.budgets);
  f("lm.depths", l.depths);
  f("lm.context", l.context);
  f("lm.vocab", l.vocab);
  f("lm.seeds", l.seeds);
  f("lm.batch", l.batch);
  f("lm.tokens_per_param", l.tokens_per_param);
  f("lm.min_steps", l.min_steps);
  f("lm.eval_every", l.eval_every);
  f("lm.lr", l.train.lr);
  f("lm.weight_decay", l.train.weight_decay);
  f("lm.clip_norm", l.train.clip_norm);
  f("lm.warmup", l.train.warmup);
  f("lm.patience", l.train.patience);
  f("lm.max_eval_windows", l.train.max_eval_windows);
  f("lm.train_eval_windows", l.train.train_eval_windows);
  f("lm.corpus", l.corpus);
  f("lm.synthetic_bytes", l.synthetic_bytes);
  f("lm.synthetic_seed", l.synthetic_seed);
  f("lm.interval_min_budget", l.interval_min_budget);
  f("lm.save_checkpoints", l.save_checkpoints);

  auto& e = l.train.estimator;
  f("estimator.n_batches", e.n_batches);
  f("estimator.batch_size", e.batch_size);
  f("estimator.n_probes", e.n_probes);
  f("estimator.center_logits", e.center_logits);
  f("estimator.rms_normalize_logits", e.rms_normalize_logits);
  f("estimator.projection_dim", l.train.projection_dim);
  f("estimator.projection_seed", l.train.projection_seed);
  f("estimator.workers", l.train.agop_workers);

  f("ext.table", c.ext_table);
}

}  // namespace detail

using ConfigTree = boost::property_tree::ptree;

inline ConfigTree to_tree(const RunConfig& cfg) {
  RunConfig c = cfg;
  ConfigTree t;
  detail::visit_fields(c, [&](const char* key, auto& field) { t.put(key, detail::format_value(field)); });
  return t;
}

inline std::string to_ini(const RunConfig& cfg) {
  std::ostringstream os;
  boost::property_tree::write_ini(os, to_tree(cfg));
  return os.str();
}

/// Applies every known key present in `t` over `c`. Unknown keys in the
/// config sections are an error so that typos cannot pass silently; names of
/// the keys that were set are appended to `applied`.
inline void apply_tree(RunConfig& c, const ConfigTree& t, std::vector<std::string>* applied = nullptr) {
  std::vector<std::string> known;
  detail::visit_fields(c, [&](const char* key, auto& field) {
    known.emplace_back(key);
    if (auto v = t.get_optional<std::string>(key)) {
      try {
        detail::parse_value(*v, field);
      } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("config key ") + key + ": " + e.what());
      }
      if (applied) applied->push_back(std::string(key) + "=" + *v);
    }
  });
  for (const auto& [section, body] : t) {
    if (section == "provenance") continue;
    for (const auto& [name, value] : body) {
      const std::string key = section + "." + name;
      if (std::find(known.begin(), known.end(), key) == known.end())
        throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
}

/// Defaults for the profile named in the tree (or `fallback`), then the tree.
inline RunConfig config_from_tree(const ConfigTree& t, Profile fallback = Profile::desk,
                                  std::vector<std::string>* applied = nullptr) {
  const auto p = t.get_optional<std::string>("general.profile");
  RunConfig c = default_config(p ? parse_profile(*p) : fallback);
  apply_tree(c, t, applied);
  return c;
}

inline ConfigTree read_config_file(const std::filesystem::path& path) {
  ConfigTree t;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  boost::property_tree::read_ini(in, t);
  return t;
}

inline ConfigTree parse_ini(const std::string& text) {
  ConfigTree t;
  std::istringstream in(text);
  boost::property_tree::read_ini(in, t);
  return t;
}

inline bool same_config(const RunConfig& a, const RunConfig& b) { return to_ini(a) == to_ini(b); }

/// --out when given; otherwise $AGOP_OUT_ROOT/<experiment>, else runs/<experiment>.
inline std::filesystem::path resolve_out_dir(const RunConfig& c) {
  if (!c.out.empty()) return c.out;
  const char* root = std::getenv("AGOP_OUT_ROOT");
  return std::filesystem::path(root && *root ? root : "runs") / c.experiment;
}

}  // namespace agop
