#include "catch_amalgamated.hpp"

#include <cmath>
#include <vector>

#include "agop/diff_model.hpp"
#include "agop/models.hpp"
#include "agop/optim.hpp"
#include "agop/rng.hpp"
#include "agop/toymodel.hpp"

using namespace agop;
using Catch::Approx;

namespace {

Vector random_vector(RandomStream& rng, Eigen::Index n, double scale = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(1e-12, std::max(a.norm(), b.norm()));
}

}  // namespace

TEST_CASE("Philox matches the Random123 known-answer vectors", "[numkernel]") {
  using C = Philox4x32::Counter;
  CHECK(Philox4x32::generate({0, 0, 0, 0}, {0, 0}) == C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  const auto ones = 0xffffffffu;
  CHECK(Philox4x32::generate({ones, ones, ones, ones}, {ones, ones}) ==
        C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
}

TEST_CASE("random streams are reproducible and independent", "[numkernel]") {
  RandomStream a(42, 7), b(42, 7), c(42, 8);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
  CHECK(derive_seed("train", {3}) == derive_seed("train", {3}));
  CHECK(derive_seed("train", {3}) != derive_seed("train", {4}));
  CHECK(derive_seed("train") != derive_seed("test"));

  RandomStream n(1);
  double sum = 0.0, sq = 0.0;
  const int count = 200000;
  for (int i = 0; i < count; ++i) {
    const double z = n.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / count) < 0.01);
  CHECK(sq / count == Approx(1.0).margin(0.01));
}

TEST_CASE("forward on reference models", "[numkernel]") {
  Matrix a(2, 2);
  a << 2, 0, 0, 3;
  const LinearModel lin(a);
  CHECK(forward(lin, Tensor::vector({1, 1})) == Tensor::vector({2, 3}));

  const auto id = identity_model(3);
  const Tensor x = Tensor::vector({0.5, -2, 7});
  CHECK(forward(id, x) == x);

  const TiedAutoencoder zero(2, 5);
  const Tensor y = forward(zero, Tensor::vector({1, 2, 3, 4, 5}));
  for (double v : y.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(forward(lin, Tensor::vector({1, 2, 3})), std::invalid_argument);
}

TEST_CASE("input_gradient on reference models", "[numkernel]") {
  Matrix a(2, 3);
  a << 1, 2, 3, 4, 5, 6;
  const LinearModel lin(a);
  const Tensor x = Tensor::vector({0.3, -1, 2});
  for (std::size_t i = 0; i < 2; ++i) {
    const Tensor g = input_gradient(lin, x, i);
    for (std::size_t j = 0; j < 3; ++j) CHECK(g[j] == a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
  }
  CHECK_THROWS_AS(input_gradient(lin, x, 2), std::out_of_range);

  const ReluModel relu(2);
  CHECK(input_gradient(relu, Tensor::vector({1, -1}), 0) == Tensor::vector({1, 0}));
  // Strict gate: the kink contributes zero.
  CHECK(input_gradient(relu, Tensor::vector({0, 1}), 0) == Tensor::vector({0, 0}));
}

TEST_CASE("MLP gradients match central finite differences", "[numkernel]") {
  const auto mlp = MlpModel::random(6, 10, 4, 11);
  RandomStream rng(99);
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const Vector x = random_vector(rng, 6);
    const Vector u = random_vector(rng, 6);
    // Reverse mode, coordinate by coordinate.
    for (std::size_t i = 0; i < 4; ++i) {
      const Tensor g = input_gradient(mlp, Tensor::from(x), i);
      Vector fd(6);
      for (Eigen::Index j = 0; j < 6; ++j) {
        Vector xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        fd[j] = (mlp.evaluate(xp)[static_cast<Eigen::Index>(i)] - mlp.evaluate(xm)[static_cast<Eigen::Index>(i)]) /
                (2 * h);
      }
      CHECK(rel_err(g.to_vector(), fd) < 1e-4);
    }
    // Forward mode.
    const Tensor jv = directional_derivative(mlp, Tensor::from(x), Tensor::from(u));
    const Vector fd = (mlp.evaluate(x + h * u) - mlp.evaluate(x - h * u)) / (2 * h);
    CHECK(rel_err(jv.to_vector(), fd) < 1e-4);
  }
}

TEST_CASE("directional derivative agrees with stacked input gradients", "[numkernel]") {
  const auto mlp = MlpModel::random(5, 8, 3, 2);
  const auto toy = TiedAutoencoder::initialized(2, 7, 0.5, 3);
  RandomStream rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    for (const DiffModel* m : {static_cast<const DiffModel*>(&mlp), static_cast<const DiffModel*>(&toy)}) {
      const auto d = static_cast<Eigen::Index>(m->input_dim());
      const Vector x = random_vector(rng, d);
      const Vector u = random_vector(rng, d);
      const Tensor jv = directional_derivative(*m, Tensor::from(x), Tensor::from(u));
      for (std::size_t i = 0; i < m->output_dim(); ++i) {
        const double contraction = input_gradient(*m, Tensor::from(x), i).to_vector().dot(u);
        CHECK(std::abs(jv[i] - contraction) <= 1e-10 * std::max(1.0, std::abs(contraction)));
      }
    }
  }
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  const LinearModel lin(a);
  CHECK(directional_derivative(lin, Tensor::vector({1, 1}), Tensor::vector({0, 0})) == Tensor::vector({0, 0}));
  CHECK(directional_derivative(lin, Tensor::vector({1, 1}), Tensor::vector({1, -1})) == Tensor::vector({-1, -1}));
}

namespace {

double one_step(double param, double grad, double lr, double wd) {
  std::vector<double> value{param}, g{grad};
  std::vector<ParamRef> params{{"p", value, g}};
  AdamWConfig cfg;
  cfg.weight_decay = wd;
  OptimState state(cfg, params);
  REQUIRE(adamw_step(params, state, lr) == StepStatus::ok);
  return value[0];
}

}  // namespace

TEST_CASE("first AdamW step", "[numkernel]") {
  CHECK(one_step(1.0, 1.0, 0.1, 0.0) == Approx(0.9).margin(1e-7));
  CHECK(one_step(1.0, 1.0, 0.1, 0.01) == Approx(0.899).margin(1e-7));
  CHECK(one_step(1.0, 0.0, 0.1, 0.0) == 1.0);
}

TEST_CASE("AdamW with zero gradients and no decay is the identity", "[numkernel]") {
  std::vector<double> value{1.5, -2.0, 0.0, 3.25}, g(4, 0.0);
  const auto before = value;
  std::vector<ParamRef> params{{"p", value, g}};
  OptimState state(AdamWConfig{}, params);
  for (int i = 0; i < 10; ++i) REQUIRE(adamw_step(params, state, 0.01) == StepStatus::ok);
  CHECK(value == before);
}

TEST_CASE("AdamW reports divergence on a non-finite gradient", "[numkernel]") {
  std::vector<double> value{1.0, 2.0}, g{NAN, 0.0};
  std::vector<ParamRef> params{{"p", value, g}};
  OptimState state(AdamWConfig{}, params);
  CHECK(adamw_step(params, state, 0.1) == StepStatus::diverged);
  CHECK(value == std::vector<double>{1.0, 2.0});
  CHECK(state.step == 0);
}

TEST_CASE("gradient clipping bounds the global norm", "[numkernel]") {
  std::vector<double> v1{0, 0}, g1{3, 0}, v2{0}, g2{4};
  std::vector<ParamRef> params{{"a", v1, g1}, {"b", v2, g2}};
  CHECK(clip_grad_norm(params, 1.0) == Approx(5.0));
  CHECK(global_grad_norm(params) == Approx(1.0).margin(1e-6));
}

TEST_CASE("warmup-cosine learning rate", "[numkernel]") {
  const LrSchedule s(3e-4, 300, 1300);
  CHECK(lr_at(s, 0) == 0.0);
  CHECK(lr_at(s, 150) == Approx(1.5e-4));
  CHECK(lr_at(s, 300) == Approx(3e-4));
  CHECK(lr_at(s, 800) == Approx(1.5e-4));
  CHECK(lr_at(s, 1300) == Approx(0.0).margin(1e-18));
  CHECK(lr_at(s, 5000) == lr_at(s, 1300));
  CHECK(std::abs(lr_at(s, 299) - lr_at(s, 300)) <= 3e-4 / 300 * (1 + 1e-12));
  for (long long t = 300; t < 1300; ++t) CHECK(lr_at(s, t + 1) <= lr_at(s, t));
  CHECK_THROWS(LrSchedule(1e-3, 10, 5));
}
