#include "catch_amalgamated.hpp"

#include <sstream>

#include "agop/metrics.hpp"
#include "agop/rng.hpp"

using namespace agop;
using Catch::Approx;

namespace {

AgopMatrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  Matrix m(n, n);
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return {m, AgopSpace::input, 1, "test"};
}

AgopMatrix random_psd(std::size_t d, std::uint64_t seed) {
  RandomStream rng(seed);
  Matrix b(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
  return {b.transpose() * b, AgopSpace::input, 1, "test"};
}

}  // namespace

TEST_CASE("aofe and aofe_ratio examples", "[metrics]") {
  const auto g = mat({{1, 2}, {2, 3}});
  CHECK(aofe(g) == 8.0);
  CHECK(aofe_ratio(g) == Approx(8.0 / 18.0).epsilon(1e-15));
  CHECK(aofe(mat({{4, 0}, {0, 5}})) == 0.0);
  CHECK(aofe_ratio(mat({{4, 0}, {0, 5}})) == 0.0);
  CHECK(aofe_ratio(mat({{0, 1, 2}, {1, 0, 3}, {2, 3, 0}})) == 1.0);
  CHECK(aofe(mat({{7}})) == 0.0);
  CHECK(aofe(AgopMatrix{Matrix(0, 0), AgopSpace::input, 0, ""}) == 0.0);

  // Swap rows and columns together.
  CHECK(aofe(mat({{3, 2}, {2, 1}})) == 8.0);
}

TEST_CASE("ratio of the zero matrix is an error", "[metrics]") {
  const auto z = mat({{0, 0}, {0, 0}});
  CHECK_THROWS_AS(aofe_ratio(z), DegenerateError);
  CHECK_THROWS_WITH(aofe_ratio(z), Catch::Matchers::ContainsSubstring("undefined ratio"));
}

TEST_CASE("superposition predicate", "[metrics]") {
  CHECK_FALSE(is_gradient_superposed(mat({{1, 0}, {0, 2}}), 0.0));
  CHECK_FALSE(is_gradient_superposed(mat({{1, 1e-6}, {1e-6, 1}}), 1e-3));
  CHECK(is_gradient_superposed(mat({{1, 2}, {2, 3}}), 1.0));
  CHECK(default_superposition_threshold(mat({{1, 0}, {0, 4}})) == Approx(4e-8));
  const auto r = interaction_report(mat({{1, 2}, {2, 3}}));
  CHECK(r.superposed);
  CHECK(r.aofe == 8.0);
}

TEST_CASE("metric invariants on random PSD matrices", "[metrics]") {
  for (std::size_t d = 1; d <= 12; ++d) {
    const auto g = random_psd(d, d);
    // Energy decomposition.
    CHECK(aofe(g) + diagonal_energy(g) == Approx(total_energy(g)).epsilon(1e-13));
    // Scale law.
    for (double s : {-3.0, 0.5, 10.0}) {
      AgopMatrix sg{s * g.values, g.space, 1, ""};
      CHECK(aofe(sg) == Approx(s * s * aofe(g)).epsilon(1e-13));
      CHECK(aofe_ratio(sg) == Approx(aofe_ratio(g)).epsilon(1e-13).margin(1e-15));
    }
    // Simultaneous permutation.
    Eigen::PermutationMatrix<Eigen::Dynamic> p(static_cast<Eigen::Index>(d));
    p.setIdentity();
    RandomStream rng(d + 100);
    for (Eigen::Index i = static_cast<Eigen::Index>(d) - 1; i > 0; --i)
      std::swap(p.indices()[i], p.indices()[static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(i) + 1))]);
    AgopMatrix pg{p * g.values * p.transpose(), g.space, 1, ""};
    CHECK(aofe(pg) == Approx(aofe(g)).epsilon(1e-13).margin(1e-15));
    CHECK(aofe_ratio(pg) == Approx(aofe_ratio(g)).epsilon(1e-13).margin(1e-15));
    // Zero threshold flags exactly the non-diagonal matrices.
    CHECK(is_gradient_superposed(g, 0.0) == (aofe(g) > 0.0));
  }
}

TEST_CASE("nfa alignment", "[metrics]") {
  RandomStream rng(8);
  Matrix w(3, 5);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  const Matrix gram = w.transpose() * w;
  CHECK(nfa_alignment(w, {gram, AgopSpace::input, 1, ""}, 1.0) == Approx(1.0).epsilon(1e-12));
  CHECK(nfa_alignment(w, {gram * gram, AgopSpace::input, 1, ""}, 0.5) == Approx(1.0).margin(1e-8));
  for (std::uint64_t s = 0; s < 10; ++s) {
    const double r = nfa_alignment(w, random_psd(5, 500 + s), 1.0);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
  }
  CHECK_THROWS_WITH(nfa_alignment(Matrix::Zero(3, 5), {gram, AgopSpace::input, 1, ""}, 1.0),
                    Catch::Matchers::ContainsSubstring("degenerate alignment input"));
  CHECK_THROWS_AS(nfa_alignment(w, random_psd(4, 1), 1.0), std::invalid_argument);
}

TEST_CASE("symmetrize", "[metrics]") {
  Matrix a(2, 2), b(2, 2);
  a << 0, 2, 0, 0;
  b << 1, 3, 1, 1;
  Matrix ea(2, 2), eb(2, 2);
  ea << 0, 1, 1, 0;
  eb << 1, 2, 2, 1;
  CHECK(symmetrize(a).values == ea);
  CHECK(symmetrize(b).values == eb);
  CHECK(symmetrize(eb).values == eb);
  CHECK_THROWS_AS(symmetrize(Matrix::Zero(2, 3)), std::invalid_argument);
}

TEST_CASE("AGOP CSV round trip is exact", "[metrics]") {
  auto g = random_psd(6, 3);
  g.space = AgopSpace::projected;
  std::stringstream ss;
  write_agop_csv(ss, g);
  std::string header;
  std::getline(std::istringstream(ss.str()), header);
  CHECK(header == "agop,dim=6,space=projected");
  const auto back = read_agop_csv(ss);
  CHECK(back.space == AgopSpace::projected);
  CHECK(back.values == g.values);
  std::istringstream bad("agop,dim=3,space=input\n1,2,3\n");
  CHECK_THROWS(read_agop_csv(bad));
}
