#pragma once

// Parameter arithmetic for the byte-level decoder and the fixed-budget
// depth-width solver.
//
// param_count(L, d) = V d          token embedding
//                   + T d          learned positions
//                   + V d          untied output head
//                   + L (12 d^2 + 4 d)   Q,K,V,O (4 d^2) + MLP (8 d^2) + two affine norms (4 d)
//                   + 2 d          final norm

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

namespace agop {

inline constexpr std::size_t kHeadDim = 4;

inline std::uint64_t param_count(std::uint64_t layers, std::uint64_t d, std::uint64_t vocab = 256,
                                 std::uint64_t context = 256) {
  return vocab * d + context * d + vocab * d + layers * (12 * d * d + 4 * d) + 2 * d;
}

struct ShapeConfig {
  std::size_t layers = 0;
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  std::size_t d_head = kHeadDim;
  std::size_t d_ff = 0;
  std::uint64_t active_n = 0;
  std::uint64_t target_n = 0;
  std::size_t vocab = 256;
  std::size_t context = 256;

  double alpha() const { return static_cast<double>(layers) / static_cast<double>(d_model); }
  double padding() const {
    return static_cast<double>(target_n - active_n) / static_cast<double>(target_n);
  }
};

/// Budget label as printed in shape tables: 300000 -> "0.3M", 1e7 -> "10M".
inline std::string budget_label(std::uint64_t target_n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", static_cast<double>(target_n) / 1e6);
  return std::string(buf) + "M";
}

inline std::string shape_id(const ShapeConfig& s) {
  return budget_label(s.target_n) + "-" + std::to_string(s.layers);
}

/// Builds the config for an explicit (L, d) pair.
inline ShapeConfig make_shape(std::size_t layers, std::size_t d_model, std::uint64_t target_n,
                              std::size_t vocab = 256, std::size_t context = 256) {
  return {layers,   d_model, d_model / kHeadDim, kHeadDim, 4 * d_model, param_count(layers, d_model, vocab, context),
          target_n, vocab,   context};
}

struct ShapeSkip {
  std::size_t layers = 0;
  std::uint64_t target_n = 0;
  std::string reason;
};

inline constexpr double kMaxPadding = 0.20;

/// Largest width that is a multiple of the head size and fits the budget.
inline std::variant<ShapeConfig, ShapeSkip> solve_shape(std::uint64_t target_n, std::size_t layers,
                                                        std::size_t vocab = 256, std::size_t context = 256) {
  if (layers < 1) return ShapeSkip{layers, target_n, "depth must be >= 1"};
  if (param_count(layers, kHeadDim, vocab, context) > target_n)
    return ShapeSkip{layers, target_n, "no width >= 4 fits the budget"};
  std::size_t d = kHeadDim;
  while (param_count(layers, d + kHeadDim, vocab, context) <= target_n) d += kHeadDim;
  ShapeConfig s = make_shape(layers, d, target_n, vocab, context);
  if (s.padding() > kMaxPadding) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "padding %.4f exceeds %.2f at d_model=%zu", s.padding(), kMaxPadding, d);
    return ShapeSkip{layers, target_n, buf};
  }
  return s;
}

/// Solves each depth in order; skipped depths are reported through `skipped`.
inline std::vector<ShapeConfig> enumerate_shapes(std::uint64_t target_n, const std::vector<std::size_t>& depths,
                                                 std::vector<ShapeSkip>* skipped = nullptr,
                                                 std::size_t vocab = 256, std::size_t context = 256) {
  std::vector<ShapeConfig> out;
  for (std::size_t layers : depths) {
    auto r = solve_shape(target_n, layers, vocab, context);
    if (auto* s = std::get_if<ShapeConfig>(&r)) out.push_back(*s);
    else if (skipped) skipped->push_back(std::get<ShapeSkip>(r));
  }
  return out;
}

inline std::vector<std::size_t> reference_depths() { return {1, 2, 3, 4, 5, 6, 8, 10, 12, 16, 20, 24}; }

struct EfficiencyInterval {
  double lo = 0.023;
  double hi = 0.047;
};

/// Distance of L/d to the interval; zero inside it.
inline double delta_alpha(double layers, double d, const EfficiencyInterval& iv = {}) {
  const double a = layers / d;
  return std::max({a - iv.hi, iv.lo - a, 0.0});
}

/// delta_alpha expressed in layers.
inline double layer_gap(double layers, double d, const EfficiencyInterval& iv = {}) {
  return delta_alpha(layers, d, iv) * d;
}

// Shape tables as CSV: ID,target_N,depth,d_model,n_heads,d_ff,active_N,depth_width_ratio

inline std::string format_ratio(double alpha) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", alpha);
  return buf;
}

inline void write_shape_csv(std::ostream& os, const std::vector<ShapeConfig>& shapes) {
  os << "ID,target_N,depth,d_model,n_heads,d_ff,active_N,depth_width_ratio\n";
  for (const auto& s : shapes)
    os << shape_id(s) << ',' << s.target_n << ',' << s.layers << ',' << s.d_model << ',' << s.n_heads << ','
       << s.d_ff << ',' << s.active_n << ',' << format_ratio(s.alpha()) << '\n';
}

}  // namespace agop
