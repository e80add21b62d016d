#include "catch_amalgamated.hpp"

#include <sstream>
#include <variant>

#include "agop/lmshape.hpp"
#include "agop/rng.hpp"

using namespace agop;
using Catch::Approx;

TEST_CASE("parameter count examples", "[lmshape]") {
  CHECK(param_count(1, 128) == 295680);
  CHECK(param_count(2, 96) == 295872);
  CHECK(param_count(24, 28) == 250040);
  for (std::uint64_t l = 1; l < 30; ++l)
    for (std::uint64_t d = 4; d < 400; d += 4) {
      CHECK(param_count(l, d + 4) > param_count(l, d));
      CHECK(param_count(l + 1, d) > param_count(l, d));
    }
}

TEST_CASE("shape solver examples", "[lmshape]") {
  auto a = solve_shape(300000, 4);
  REQUIRE(std::holds_alternative<ShapeConfig>(a));
  CHECK(std::get<ShapeConfig>(a).d_model == 68);
  CHECK(std::get<ShapeConfig>(a).active_n == 275400);
  CHECK(shape_id(std::get<ShapeConfig>(a)) == "0.3M-4");

  auto b = solve_shape(1000000, 24);
  REQUIRE(std::holds_alternative<ShapeConfig>(b));
  CHECK(std::get<ShapeConfig>(b).d_model == 56);
  CHECK(std::get<ShapeConfig>(b).active_n == 951664);

  CHECK(std::holds_alternative<ShapeSkip>(solve_shape(300000, 1000)));
  CHECK(std::holds_alternative<ShapeSkip>(solve_shape(300000, 0)));
}

TEST_CASE("enumerated shapes satisfy their invariants", "[lmshape]") {
  CHECK(enumerate_shapes(300000, reference_depths()).size() == 12);
  CHECK(enumerate_shapes(300000, {}).empty());
  CHECK(enumerate_shapes(10000000, {4, 5, 6, 8, 10, 12, 14}).size() == 7);

  for (std::uint64_t target : {100000ull, 300000ull, 1000000ull, 2300000ull, 10000000ull}) {
    std::vector<ShapeSkip> skipped;
    const auto shapes = enumerate_shapes(target, reference_depths(), &skipped);
    CHECK(shapes.size() + skipped.size() == reference_depths().size());
    for (const auto& s : shapes) {
      CHECK(s.d_model % s.d_head == 0);
      CHECK(s.n_heads == s.d_model / 4);
      CHECK(s.d_ff == 4 * s.d_model);
      CHECK(s.active_n <= target);
      CHECK(s.padding() <= kMaxPadding);
      CHECK(s.alpha() > 0.0);
      CHECK(param_count(s.layers, s.d_model + 4) > target);
    }
  }
}

TEST_CASE("shape CSV layout", "[lmshape]") {
  std::ostringstream os;
  write_shape_csv(os, enumerate_shapes(300000, {1}));
  CHECK(os.str() ==
        "ID,target_N,depth,d_model,n_heads,d_ff,active_N,depth_width_ratio\n"
        "0.3M-1,300000,1,128,32,512,295680,0.0078\n");
}

TEST_CASE("distance to the efficiency interval", "[lmshape]") {
  CHECK(delta_alpha(24, 896) == 0.0);
  CHECK(delta_alpha(16, 2048) == Approx(0.0151875).epsilon(1e-12));
  CHECK(delta_alpha(0.06, 1) == Approx(0.013).epsilon(1e-12));
  CHECK(layer_gap(16, 2048) == Approx(31.104).epsilon(1e-12));
  CHECK(layer_gap(26, 1152) == Approx(0.496).epsilon(1e-9));
  CHECK(layer_gap(30, 1000) == 0.0);

  const EfficiencyInterval iv;
  RandomStream rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double a = 0.1 * rng.uniform();
    const double b = 0.1 * rng.uniform();
    CHECK((delta_alpha(a, 1) == 0.0) == (a >= iv.lo && a <= iv.hi));
    CHECK(std::abs(delta_alpha(a, 1) - delta_alpha(b, 1)) <= std::abs(a - b) + 1e-15);
  }
}
