#include "catch_amalgamated.hpp"

#include <algorithm>
#include <sstream>

#include "agop/analysis.hpp"

using namespace agop;
using Catch::Approx;

namespace {

const std::filesystem::path kData = AGOP_DATA_DIR;

std::vector<double> v(std::initializer_list<double> xs) { return xs; }

TrialRecord record(std::size_t layers, std::size_t d, std::uint64_t target, double test, double val = 1.0) {
  TrialRecord r;
  r.shape = make_shape(layers, d, target);
  r.test_loss = test;
  r.val_loss = val;
  return r;
}

std::vector<TrialRecord> bundled() { return load_trial_tables(kData / "lm_configs.csv", kData / "lm_metrics.csv"); }

}  // namespace

TEST_CASE("pearson examples and properties", "[analysis]") {
  CHECK(pearson(v({1, 2, 3}), v({2, 4, 6})) == Approx(1.0));
  CHECK(pearson(v({1, 2, 3}), v({3, 2, 1})) == Approx(-1.0));
  CHECK(pearson(v({1, 2, 3, 4}), v({1, 3, 2, 4})) == Approx(0.8));
  CHECK_THROWS_WITH(pearson(v({1, 1, 1}), v({1, 2, 3})), Catch::Matchers::ContainsSubstring("degenerate series"));
  CHECK_THROWS_AS(pearson(v({1, 2}), v({1, 2, 3})), std::invalid_argument);

  RandomStream rng(4);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> x(12), y(12);
    for (std::size_t i = 0; i < 12; ++i) {
      x[i] = rng.normal();
      y[i] = rng.normal();
    }
    const double r = pearson(x, y);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
    CHECK(pearson(y, x) == r);
    std::vector<double> sx = x;
    for (double& e : sx) e = 3.0 * e + 7.0;
    CHECK(pearson(sx, y) == Approx(r).margin(1e-12));
  }
  const auto fit = least_squares(v({0, 1, 2}), v({1, 3, 5}));
  CHECK(fit.slope == Approx(2.0));
  CHECK(fit.intercept == Approx(1.0));
  const auto ms = mean_std(v({1, 3}));
  CHECK(ms.mean == 2.0);
  CHECK(ms.std == 1.0);
}

TEST_CASE("best shape per budget", "[analysis]") {
  const auto best = best_per_budget(bundled());
  auto find = [&](std::uint64_t target) {
    return std::find_if(best.begin(), best.end(), [&](const TrialRecord& r) { return r.shape.target_n == target; });
  };
  REQUIRE(find(300000) != best.end());
  CHECK(find(300000)->id() == "0.3M-1");
  CHECK(find(300000)->test_loss == Approx(2.2186));
  REQUIRE(find(2300000) != best.end());
  CHECK(find(2300000)->id() == "2.3M-6");
  CHECK(find(2300000)->test_loss == Approx(1.2138));
  for (const auto& r : best) CHECK_FALSE(r.diverged);

  const auto one = best_per_budget({record(2, 96, 300000, 2.5)});
  REQUIRE(one.size() == 1);
  CHECK(one[0].id() == "0.3M-2");

  // Tie on loss and validation goes to the smaller alpha.
  const auto tie = best_per_budget({record(4, 68, 300000, 2.0), record(2, 96, 300000, 2.0)});
  CHECK(tie[0].shape.layers == 2);

  auto dead = record(1, 128, 600000, NAN);
  dead.diverged = true;
  std::vector<std::string> warnings;
  const auto partial = best_per_budget({record(1, 128, 300000, 2.0), dead}, &warnings);
  CHECK(partial.size() == 1);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("0.6M") != std::string::npos);
}

TEST_CASE("efficiency interval", "[analysis]") {
  const auto iv = interval_estimate(best_per_budget(bundled()), 1000000);
  CHECK(iv.lo == Approx(0.023).margin(5e-4));
  CHECK(iv.hi == Approx(0.047).margin(5e-4));

  const auto single = interval_estimate({record(3, 100, 2000000, 1.0)}, 1000000);
  CHECK(single.lo == Approx(0.03));
  CHECK(single.hi == Approx(0.03));
  CHECK_THROWS(interval_estimate({record(3, 100, 2000000, 1.0)}, 5000000));
}

TEST_CASE("external table ingestion", "[analysis]") {
  const auto bundled_rows = ingest_model_table(kData / "external_models.csv");
  CHECK(bundled_rows.rows.size() == 18);
  CHECK(bundled_rows.diagnostics.empty());

  std::istringstream dup(
      "model,family,params_B,d_model,layers,mmlu_pro,param_group\n"
      "A,Llama,1.2,2048,16,7.5,0.5-1B\n"
      "A-Instruct,Llama,1.2,2048,16,9.0,0.5-1B\n"
      "B,Qwen,1.5,1536,28,,1-2.5B\n");
  const auto d = ingest_model_table(dup);
  REQUIRE(d.rows.size() == 1);
  CHECK(d.rows[0].model == "A");
  REQUIRE(d.diagnostics.size() == 2);
  CHECK(d.diagnostics[0].find("line 3") != std::string::npos);
  CHECK(d.diagnostics[1].find("line 4") != std::string::npos);

  std::istringstream moe(
      "model,family,params_B,d_model,layers,mmlu_pro,param_group,moe\n"
      "Dense,X,1,1024,24,20,1-2.5B,0\n"
      "Sparse,Y,1,1024,16,30,1-2.5B,yes\n");
  const auto m = ingest_model_table(moe);
  CHECK(m.rows.size() == 1);
  REQUIRE(m.diagnostics.size() == 1);
  CHECK(m.diagnostics[0].find("mixture-of-experts") != std::string::npos);

  std::istringstream bad_header("model,family\nA,B\n");
  CHECK_THROWS_AS(ingest_model_table(bad_header), CsvError);
}

TEST_CASE("grouped trends", "[analysis]") {
  auto rows = ingest_model_table(kData / "external_models.csv").rows;
  const auto trends = grouped_trend(rows);
  REQUIRE(trends.size() == 4);
  std::map<std::string, double> r;
  for (const auto& t : trends) {
    REQUIRE(t.r);
    r[t.group] = *t.r;
  }
  CHECK(r["1-2.5B"] == Approx(-0.84).margin(0.02));
  CHECK(r["3-4.5B"] == Approx(-0.42).margin(0.02));
  CHECK(r["7-9B"] == Approx(-0.18).margin(0.03));

  std::reverse(rows.begin(), rows.end());
  for (const auto& t : grouped_trend(rows)) CHECK(*t.r == Approx(r[t.group]).margin(1e-12));

  const auto lonely = grouped_trend({rows[0]});
  REQUIRE(lonely.size() == 1);
  CHECK_FALSE(lonely[0].r);
}

TEST_CASE("bundled fixture correlations", "[analysis]") {
  for (const auto& c : fixture_correlations(kData)) {
    INFO(c.metric << " = " << c.value << " vs " << c.paper);
    CHECK(c.pass());
  }
  for (const auto& c : verify_fixture_checksums(kData)) {
    INFO(c.file);
    CHECK(c.ok());
  }
}
