#include "catch_amalgamated.hpp"

#include <algorithm>
#include <cmath>

#include "agop/estimators.hpp"
#include "agop/models.hpp"

using namespace agop;
using Catch::Approx;

namespace {

Dataset gaussian_inputs(std::size_t n, std::size_t d, std::uint64_t seed) {
  RandomStream rng(seed);
  std::vector<Tensor> xs;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t({d});
    for (double& v : t.data()) v = rng.normal();
    xs.push_back(std::move(t));
  }
  return Dataset(std::move(xs));
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  RandomStream rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

double frob_rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

/// Zero map on R^d.
class ZeroModel final : public DiffModel {
 public:
  explicit ZeroModel(std::size_t d) : d_(d) {}
  Shape input_shape() const override { return {d_}; }
  std::size_t output_dim() const override { return d_; }
  Vector evaluate(const Vector&) const override { return Vector::Zero(static_cast<Eigen::Index>(d_)); }
  Vector vjp(const Vector&, const Vector&) const override { return Vector::Zero(static_cast<Eigen::Index>(d_)); }
  Vector jvp(const Vector&, const Vector&) const override { return Vector::Zero(static_cast<Eigen::Index>(d_)); }

 private:
  std::size_t d_;
};

}  // namespace

TEST_CASE("exact estimators on linear maps", "[estimators]") {
  const Matrix a = random_matrix(3, 5, 1);
  const LinearModel lin(a);
  const auto data = gaussian_inputs(7, 5, 2);
  CHECK((exact_agop_input(lin, data).values - a.transpose() * a).norm() < 1e-12);
  CHECK((exact_gram_output(lin, data).values - a * a.transpose()).norm() < 1e-12);
  CHECK(exact_agop_input(lin, data).space == AgopSpace::input);
  CHECK(exact_gram_output(lin, data).dim() == 3);

  const auto id = identity_model(4);
  CHECK(exact_agop_input(id, gaussian_inputs(3, 4, 3)).values == Matrix::Identity(4, 4));

  const Matrix q = Eigen::HouseholderQR<Matrix>(random_matrix(4, 4, 4)).householderQ();
  CHECK((exact_gram_output(LinearModel(q), gaussian_inputs(3, 4, 5)).values - Matrix::Identity(4, 4)).norm() < 1e-12);

  CHECK_THROWS_AS(exact_agop_input(lin, Dataset{}), std::invalid_argument);
  CHECK_THROWS_AS(exact_gram_output(lin, Dataset{}), std::invalid_argument);
}

TEST_CASE("exact input AGOP matches a brute-force gradient average", "[estimators]") {
  const auto mlp = MlpModel::random(6, 9, 4, 12);
  const auto data = gaussian_inputs(16, 6, 13);
  Matrix brute = Matrix::Zero(6, 6);
  for (std::size_t n = 0; n < data.size(); ++n)
    for (std::size_t i = 0; i < 4; ++i) {
      const Vector g = input_gradient(mlp, data.at(n), i).to_vector();
      brute += g * g.transpose();
    }
  brute /= 16.0;
  CHECK((exact_agop_input(mlp, data).values - brute).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("exact estimators coincide for symmetric Jacobians", "[estimators]") {
  const Matrix b = random_matrix(5, 5, 21);
  const LinearModel sym(b + b.transpose());
  const auto data = gaussian_inputs(4, 5, 22);
  CHECK((exact_agop_input(sym, data).values - exact_gram_output(sym, data).values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("exact estimators ignore order and duplication", "[estimators]") {
  const auto mlp = MlpModel::random(4, 6, 3, 31);
  std::vector<Tensor> xs;
  const auto base = gaussian_inputs(10, 4, 32);
  for (std::size_t i = 0; i < base.size(); ++i) xs.push_back(base.at(i));
  auto reversed = xs;
  std::reverse(reversed.begin(), reversed.end());
  auto doubled = xs;
  doubled.insert(doubled.end(), xs.begin(), xs.end());

  const auto ref_in = exact_agop_input(mlp, Dataset(xs)).values;
  const auto ref_out = exact_gram_output(mlp, Dataset(xs)).values;
  for (const auto& variant : {reversed, doubled}) {
    CHECK((exact_agop_input(mlp, Dataset(variant)).values - ref_in).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((exact_gram_output(mlp, Dataset(variant)).values - ref_out).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("jvp estimator converges to the output Gram", "[estimators]") {
  SECTION("identity model, identity projection") {
    const auto id = identity_model(4);
    EstimatorConfig cfg{4, 25, 1000};
    const auto g = jvp_agop(id, gaussian_inputs(5, 4, 40), identity_projection(4), cfg, 7);
    CHECK(frob_rel(g.values, Matrix::Identity(4, 4)) < 0.05);
    CHECK(g.space == AgopSpace::projected);
  }
  SECTION("linear model across probe seeds") {
    const Matrix a = random_matrix(4, 10, 41);
    const LinearModel lin(a);
    const auto data = gaussian_inputs(8, 10, 42);
    const Matrix exact = exact_gram_output(lin, data).values;
    EstimatorConfig cfg{4, 25, 10};  // 1000 probes per seed
    const double bound = 3.0 * std::sqrt(2.0 / 1000.0);
    int within = 0;
    Matrix mean = Matrix::Zero(4, 4);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Matrix est = jvp_agop(lin, data, identity_projection(4), cfg, seed).values;
      within += frob_rel(est, exact) <= bound;
      mean += est / 20.0;
    }
    CHECK(within >= 19);
    CHECK(frob_rel(mean, exact) < frob_rel(jvp_agop(lin, data, identity_projection(4), cfg, 0).values, exact) + 0.05);
  }
}

TEST_CASE("jvp estimator edge cases", "[estimators]") {
  const ZeroModel zero(3);
  const auto data = gaussian_inputs(4, 3, 50);
  CHECK(jvp_agop(zero, data, identity_projection(3), {}, 1).values == Matrix::Zero(3, 3));

  const auto mlp = MlpModel::random(5, 7, 6, 51);
  const auto p = make_projection(3, 6, 52);
  const EstimatorConfig cfg{6, 8, 4};
  const auto serial = jvp_agop(mlp, gaussian_inputs(9, 5, 53), p, cfg, 9, 1);
  const auto parallel = jvp_agop(mlp, gaussian_inputs(9, 5, 53), p, cfg, 9, 4);
  CHECK(serial.values == parallel.values);
  CHECK(make_projection(3, 6, 52).values == p.values);
  CHECK(make_projection(3, 6, 53).values != p.values);

  CHECK_THROWS_AS(jvp_agop(mlp, Dataset{}, p, cfg, 1), std::invalid_argument);
  CHECK_THROWS_AS(jvp_agop(mlp, data, p, cfg, 1), std::invalid_argument);  // wrong input width
  CHECK_THROWS_AS(jvp_agop(mlp, gaussian_inputs(3, 5, 1), make_projection(3, 4, 1), cfg, 1), std::invalid_argument);
  CHECK_THROWS_AS(jvp_agop(mlp, gaussian_inputs(3, 5, 1), p, EstimatorConfig{0, 1, 1}, 1), std::invalid_argument);
}

TEST_CASE("logit preprocessing", "[estimators]") {
  EstimatorConfig center{};
  center.center_logits = true;
  CHECK(logit_preprocess(Tensor::vector({1, 2, 3}), center) == Tensor::vector({-1, 0, 1}));

  EstimatorConfig rms{};
  rms.rms_normalize_logits = true;
  const Tensor r = logit_preprocess(Tensor::vector({-1, 0, 1}), rms);
  CHECK(r[0] == Approx(-std::sqrt(1.5)));
  CHECK(r[1] == 0.0);
  CHECK(r[2] == Approx(std::sqrt(1.5)));

  EstimatorConfig both = center;
  both.rms_normalize_logits = true;
  CHECK_THROWS_WITH(logit_preprocess(Tensor::vector({2, 2, 2}), both),
                    Catch::Matchers::ContainsSubstring("degenerate logits"));
}

TEST_CASE("preprocessed model derivatives match finite differences", "[estimators]") {
  const auto mlp = MlpModel::random(4, 6, 5, 60);
  const PreprocessedModel pre(mlp, true, true);
  RandomStream rng(61);
  for (int t = 0; t < 10; ++t) {
    Vector x(4), u(4);
    for (Eigen::Index i = 0; i < 4; ++i) {
      x[i] = rng.normal();
      u[i] = rng.normal();
    }
    const double h = 1e-5;
    const Vector fd = (pre.evaluate(x + h * u) - pre.evaluate(x - h * u)) / (2 * h);
    const Vector jv = pre.jvp(x, u);
    CHECK((jv - fd).norm() <= 1e-4 * std::max(1.0, fd.norm()));
    const Matrix jac = jacobian(pre, x);
    for (Eigen::Index i = 0; i < 5; ++i) {
      Vector e = Vector::Zero(5);
      e[i] = 1.0;
      CHECK((pre.vjp(x, e) - jac.row(i).transpose()).norm() < 1e-12);
    }
  }
}
