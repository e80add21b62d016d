#pragma once

// Interaction metrics on AGOP matrices.
//
//   aofe(G)        = sum_{i != j} G_ij^2             off-diagonal energy
//   aofe_ratio(G)  = aofe(G) / ||G||_F^2            share of total energy
//   superposed     = max_{i != j} |G_ij| > tau
//   nfa_alignment  = corr(vec(W^T W), vec(G^alpha))

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "agop/stats.hpp"
#include "agop/tensor.hpp"

namespace agop {

enum class AgopSpace { input, output, projected };

inline std::string_view to_string(AgopSpace s) {
  switch (s) {
    case AgopSpace::input: return "input";
    case AgopSpace::output: return "output";
    case AgopSpace::projected: return "projected";
  }
  return "input";
}

inline AgopSpace parse_space(std::string_view s) {
  if (s == "input") return AgopSpace::input;
  if (s == "output") return AgopSpace::output;
  if (s == "projected") return AgopSpace::projected;
  throw std::invalid_argument("unknown AGOP space '" + std::string(s) + "'");
}

/// Symmetric co-sensitivity matrix plus where it came from.
struct AgopMatrix {
  Matrix values;
  AgopSpace space = AgopSpace::input;
  std::size_t sample_count = 0;
  std::string estimator;

  std::size_t dim() const { return static_cast<std::size_t>(values.rows()); }
};

/// (M + M^T) / 2
inline AgopMatrix symmetrize(const Eigen::Ref<const Matrix>& m, AgopSpace space = AgopSpace::input,
                             std::size_t samples = 0, std::string estimator = "symmetrize") {
  if (m.rows() != m.cols())
    throw std::invalid_argument("symmetrize needs a square matrix, got " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()));
  Matrix s = 0.5 * (m + m.transpose());
  return {std::move(s), space, samples, std::move(estimator)};
}

inline double diagonal_energy(const AgopMatrix& g) { return g.values.diagonal().squaredNorm(); }
inline double total_energy(const AgopMatrix& g) { return g.values.squaredNorm(); }

inline double aofe(const AgopMatrix& g) {
  if (g.values.rows() != g.values.cols()) throw std::invalid_argument("aofe needs a square matrix");
  const Eigen::Index n = g.values.rows();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) sum += g.values(i, j) * g.values(i, j);
  return sum;
}

inline double aofe_ratio(const AgopMatrix& g) {
  const double total = total_energy(g);
  if (!(total > 0.0)) throw DegenerateError("undefined ratio: AGOP has zero total energy");
  return std::clamp(aofe(g) / total, 0.0, 1.0);
}

/// 1e-8 times the largest diagonal entry.
inline double default_superposition_threshold(const AgopMatrix& g) {
  if (g.values.size() == 0) return 0.0;
  return 1e-8 * std::max(0.0, g.values.diagonal().maxCoeff());
}

inline bool is_gradient_superposed(const AgopMatrix& g, double tau) {
  if (tau < 0.0) throw std::invalid_argument("superposition threshold must be non-negative");
  const Eigen::Index n = g.values.rows();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) worst = std::max(worst, std::abs(g.values(i, j)));
  return worst > tau;
}

struct InteractionReport {
  double aofe = 0.0;
  double aofe_ratio = 0.0;
  bool superposed = false;
  double threshold_used = 0.0;
};

inline InteractionReport interaction_report(const AgopMatrix& g, std::optional<double> tau = std::nullopt) {
  InteractionReport r;
  r.threshold_used = tau.value_or(default_superposition_threshold(g));
  r.aofe = aofe(g);
  r.aofe_ratio = aofe_ratio(g);
  r.superposed = is_gradient_superposed(g, r.threshold_used);
  return r;
}

/// G^alpha through the symmetric eigendecomposition, with negative
/// eigenvalues (round-off on a PSD matrix) clamped to zero.
inline Matrix psd_power(const Eigen::Ref<const Matrix>& g, double alpha) {
  const Matrix sym = 0.5 * (g + g.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  const Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(0.0).array().pow(alpha).matrix();
  const Eigen::MatrixXd& q = eig.eigenvectors();
  return q * lambda.asDiagonal() * q.transpose();
}

/// Pearson correlation between the entries of W^T W and of G^alpha.
inline double nfa_alignment(const Eigen::Ref<const Matrix>& w, const AgopMatrix& g, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("NFA exponent must be positive");
  const Matrix gram = w.transpose() * w;
  if (gram.rows() != g.values.rows() || gram.cols() != g.values.cols())
    throw std::invalid_argument("W^T W is " + std::to_string(gram.rows()) + "x" + std::to_string(gram.cols()) +
                                " but the AGOP is " + std::to_string(g.dim()) + "x" + std::to_string(g.dim()));
  const Matrix powered = psd_power(g.values, alpha);
  try {
    return pearson(std::span<const double>(gram.data(), static_cast<std::size_t>(gram.size())),
                   std::span<const double>(powered.data(), static_cast<std::size_t>(powered.size())));
  } catch (const DegenerateError&) {
    throw DegenerateError("degenerate alignment input");
  }
}

// CSV form: header "agop,dim=N,space=S", then N rows of N values.

inline void write_agop_csv(std::ostream& os, const AgopMatrix& g) {
  os << "agop,dim=" << g.dim() << ",space=" << to_string(g.space) << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < g.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < g.values.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", g.values(i, j));
      if (j) os << ',';
      os << buf;
    }
    os << '\n';
  }
}

inline void write_agop_csv(const std::filesystem::path& path, const AgopMatrix& g) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_agop_csv(out, g);
}

inline AgopMatrix read_agop_csv(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("empty AGOP csv");
  std::size_t dim = 0;
  std::string space = "input";
  {
    std::istringstream hs(header);
    std::string field;
    std::getline(hs, field, ',');
    if (field != "agop") throw std::runtime_error("AGOP csv header must start with 'agop'");
    while (std::getline(hs, field, ',')) {
      if (field.rfind("dim=", 0) == 0) dim = std::stoul(field.substr(4));
      else if (field.rfind("space=", 0) == 0) space = field.substr(6);
    }
  }
  AgopMatrix g;
  g.space = parse_space(space);
  g.estimator = "csv";
  g.values.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  std::string line;
  for (std::size_t i = 0; i < dim; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("AGOP csv truncated at row " + std::to_string(i));
    std::istringstream ls(line);
    std::string cell;
    for (std::size_t j = 0; j < dim; ++j) {
      if (!std::getline(ls, cell, ',')) throw std::runtime_error("AGOP csv row " + std::to_string(i) + " too short");
      g.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::stod(cell);
    }
  }
  return g;
}

inline AgopMatrix read_agop_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_agop_csv(in);
}

}  // namespace agop
