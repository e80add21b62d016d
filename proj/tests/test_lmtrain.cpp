#include "catch_amalgamated.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "agop/checkpoint.hpp"
#include "agop/corpus.hpp"
#include "agop/lmtrain.hpp"

using namespace agop;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("agop_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

ByteCorpus tiny_corpus() {
  const std::string text = synthetic_corpus(60000, 1);
  ByteCorpus c;
  c.train.assign(text.begin(), text.begin() + 50000);
  c.valid.assign(text.begin() + 50000, text.begin() + 55000);
  c.test.assign(text.begin() + 55000, text.end());
  return c;
}

}  // namespace

TEST_CASE("corpus loading", "[lmtrain]") {
  const auto dir = scratch("corpus");
  write_file(dir / "one.txt", std::string(1000000, 'a'));
  const auto one = load_corpus({dir / "one.txt"});
  CHECK(one.train.size() == 980000);
  CHECK(one.valid.size() == 10000);
  CHECK(one.test.size() == 10000);

  write_file(dir / "tr.txt", std::string(600, 't'));
  write_file(dir / "va.txt", "vv");
  write_file(dir / "te.txt", "eee");
  const auto three = load_corpus({dir / "tr.txt", dir / "va.txt", dir / "te.txt"});
  CHECK(three.train.size() == 600);
  CHECK(three.valid == std::vector<std::uint8_t>{'v', 'v'});
  CHECK(three.test.size() == 3);

  write_file(dir / "empty.txt", "");
  CHECK_THROWS(load_corpus({dir / "empty.txt"}));
  CHECK_THROWS(load_corpus({dir / "missing.txt"}));
  CHECK_THROWS(load_corpus({dir / "va.txt", dir / "va.txt", dir / "te.txt"}));
  fs::remove_all(dir);
}

TEST_CASE("training windows", "[lmtrain]") {
  ByteCorpus exact;
  exact.train.resize(257);
  std::iota(exact.train.begin(), exact.train.end(), std::uint8_t{0});
  const auto w = sample_train_window(exact, 256, 3, 17);
  CHECK(w.data() == exact.train.data());
  CHECK(w.size() == 257);

  const auto c = tiny_corpus();
  const auto a = sample_train_window(c, 64, 5, 99);
  const auto b = sample_train_window(c, 64, 5, 99);
  CHECK(a.data() == b.data());

  // Chi-square over 20 equal bins of start offsets; 43.82 is the 0.999 quantile at 19 dof.
  const std::size_t starts = c.train.size() - 64;
  std::vector<double> bins(20, 0.0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto s = static_cast<std::size_t>(sample_train_window(c, 64, 8, static_cast<std::uint64_t>(i)).data() -
                                            c.train.data());
    REQUIRE(s < starts);
    bins[s * 20 / starts] += 1.0;
  }
  double chi2 = 0.0;
  for (double n : bins) chi2 += (n - draws / 20.0) * (n - draws / 20.0) / (draws / 20.0);
  CHECK(chi2 < 43.82);
}

TEST_CASE("evaluation windows", "[lmtrain]") {
  std::vector<std::uint8_t> split(513);
  CHECK(eval_windows(split, 256).size() == 2);
  split.resize(511);
  CHECK(eval_windows(split, 256).size() == 1);
  const auto a = eval_windows(split, 100);
  const auto b = eval_windows(split, 100);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].data() == b[i].data());
  CHECK(a[1].data() - a[0].data() == 100);
}

TEST_CASE("training budget arithmetic", "[lmtrain]") {
  const auto b = TrainBudget::for_target(300000, 256);
  CHECK(b.tokens == 18000000);
  CHECK(b.base_steps == 1098);
  CHECK(b.max_steps == 1647);
  CHECK(TrainBudget::for_target(10000, 256).base_steps == 200);
}

TEST_CASE("zero-step training scores the untrained baseline", "[lmtrain]") {
  const auto c = tiny_corpus();
  TrainBudget budget;
  budget.max_steps = 0;
  budget.base_steps = 0;
  LmTrainConfig cfg;
  cfg.max_eval_windows = 16;
  cfg.estimator = {1, 4, 4};
  cfg.projection_dim = 8;
  const auto out = train_lm(make_shape(1, 16, 0, 256, 32), c, budget, 0, cfg);
  CHECK(out.record.steps == 0);
  CHECK(out.record.test_loss == Approx(std::log(256.0)).margin(0.2));
  CHECK(out.record.status == "ok");
  CHECK(out.record.aofe_ratio >= 0.0);
  CHECK(out.record.aofe_ratio <= 1.0);
}

TEST_CASE("short training run is deterministic and learns", "[lmtrain]") {
  const auto c = tiny_corpus();
  TrainBudget budget;
  budget.batch = 8;
  budget.base_steps = 60;
  budget.max_steps = 60;
  budget.eval_every = 20;
  LmTrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.warmup = 10;
  cfg.max_eval_windows = 16;
  cfg.estimator = {1, 4, 4};
  cfg.projection_dim = 8;
  const auto shape = make_shape(1, 16, 0, 256, 32);
  const auto a = train_lm(shape, c, budget, 2, cfg);
  const auto b = train_lm(shape, c, budget, 2, cfg);
  CHECK(trial_row(a.record) == trial_row(b.record));
  CHECK(a.record.steps == 60);
  CHECK(a.val_history.size() == 3);
  CHECK(a.record.train_loss < a.record.initial_train_loss);
  CHECK(a.model.parameters() == b.model.parameters());
}

TEST_CASE("agop metrics on a zero head are degenerate", "[lmtrain]") {
  const auto c = tiny_corpus();
  auto m = TinyTransformer::initialized(make_shape(1, 8, 0, 256, 16), 1);
  m.tensor("head").setZero();
  const auto p = make_projection(8, 256, 1);
  CHECK_THROWS_AS(lm_agop_metrics(m, c, p, {1, 4, 4}, 1), DegenerateError);

  auto live = TinyTransformer::initialized(make_shape(1, 8, 0, 256, 16), 1);
  const auto r1 = lm_agop_metrics(live, c, p, {2, 8, 4}, 5, 1);
  const auto r2 = lm_agop_metrics(live, c, p, {2, 8, 4}, 5, 2);
  CHECK(r1.agop.values == r2.agop.values);
  CHECK(r1.agop.dim() == 8);
}

TEST_CASE("checkpoint round trip", "[lmtrain]") {
  const auto dir = scratch("ckpt");
  const auto m = TinyTransformer::initialized(make_shape(2, 8, 12345, 256, 16), 4);
  save_checkpoint(dir / "model", to_checkpoint(m));
  const auto back = transformer_from_checkpoint(load_checkpoint(dir / "model"));
  CHECK(back.parameters() == m.parameters());
  CHECK(back.shape().target_n == 12345);
  CHECK(back.context() == 16);

  const auto toy = TiedAutoencoder::initialized(2, 9, 0.3, 1);
  save_checkpoint(dir / "toy", to_checkpoint(toy));
  const auto toy_back = autoencoder_from_checkpoint(load_checkpoint(dir / "toy"));
  CHECK(toy_back.w == toy.w);
  CHECK(toy_back.b == toy.b);
  fs::remove_all(dir);
}
