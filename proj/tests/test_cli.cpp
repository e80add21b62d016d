#include "catch_amalgamated.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "agop/acceptance.hpp"
#include "agop/config.hpp"
#include "agop/runner.hpp"

using namespace agop;
namespace fs = std::filesystem;

namespace {

const fs::path kData = AGOP_DATA_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("agop_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

RunConfig tiny_double_descent(const fs::path& out) {
  RunConfig c = default_config(Profile::desk);
  c.out = out.string();
  c.data_dir = kData.string();
  c.toy.sizes = {5, 12};
  c.toy.heatmap_sizes = {12};
  c.toy.heatmap_dim = 8;
  c.toy.seeds = 2;
  c.toy.train.d = 30;
  c.toy.train.p_zero = 0.8;
  c.toy.train.steps = 40;
  c.toy.train.test_size = 100;
  return c;
}

}  // namespace

TEST_CASE("config survives an INI round trip", "[cli]") {
  for (auto p : {Profile::desk, Profile::full}) {
    const RunConfig c = default_config(p);
    CHECK(same_config(config_from_tree(parse_ini(to_ini(c))), c));
  }
  RunConfig c = default_config(Profile::desk);
  c.toy.sizes = {7, 9};
  c.lm.train.lr = 1.25e-3;
  c.lm.train.estimator.center_logits = true;
  c.lm.corpus = {"a.txt", "b.txt", "c.txt"};
  const RunConfig back = config_from_tree(parse_ini(to_ini(c)));
  CHECK(same_config(back, c));
  CHECK(back.toy.sizes == std::vector<std::size_t>{7, 9});
  CHECK(back.lm.train.lr == c.lm.train.lr);
}

TEST_CASE("config errors are explicit", "[cli]") {
  CHECK_THROWS_WITH(config_from_tree(parse_ini("[toy]\nbogus=1\n")),
                    Catch::Matchers::ContainsSubstring("unknown config key 'toy.bogus'"));
  CHECK_THROWS_AS(config_from_tree(parse_ini("[toy]\nseeds=three\n")), std::invalid_argument);
  CHECK_THROWS(config_from_tree(parse_ini("[general]\nprofile=huge\n")));
  const RunConfig full = config_from_tree(parse_ini("[general]\nprofile=full\n"));
  CHECK(full.toy.sizes.size() == 22);
  CHECK(default_config(Profile::desk).toy.sizes.size() == 8);
}

TEST_CASE("double-descent runs resume and reproduce", "[cli]") {
  const fs::path root = scratch("dd");
  const RunConfig cfg = tiny_double_descent(root / "a");
  const auto first = run_double_descent(cfg);
  CHECK(first.summary.computed == 4);
  CHECK(first.summary.failures.empty());
  REQUIRE(first.rows.size() == 2);
  CHECK(fs::exists(root / "a" / "heatmap_n12.csv"));
  CHECK(read_agop_csv(root / "a" / "heatmap_n12.csv").dim() == 8);
  CHECK(fs::exists(root / "a" / "double_descent_loss.svg"));

  const std::string csv = slurp(root / "a" / "double_descent.csv");
  const std::string trials = slurp(root / "a" / "trials.csv");
  std::istringstream lines(csv);
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) ++count;
  CHECK(count == 3);

  // A populated directory needs --resume.
  CHECK_THROWS_WITH(run_double_descent(cfg), Catch::Matchers::ContainsSubstring("--resume"));
  const auto again = run_double_descent(cfg, {true, {}, nullptr});
  CHECK(again.summary.computed == 0);
  CHECK(again.summary.reused == 4);
  CHECK(slurp(root / "a" / "double_descent.csv") == csv);
  CHECK(slurp(root / "a" / "trials.csv") == trials);

  // Resume refuses a different config.
  RunConfig other = cfg;
  other.toy.train.steps = 41;
  CHECK_THROWS_WITH(run_double_descent(other, {true, {}, nullptr}),
                    Catch::Matchers::ContainsSubstring("different config"));

  // Same config in a fresh directory gives identical bytes.
  run_double_descent(tiny_double_descent(root / "b"));
  CHECK(slurp(root / "b" / "double_descent.csv") == csv);
  CHECK(slurp(root / "b" / "heatmap_n12.csv") == slurp(root / "a" / "heatmap_n12.csv"));

  // The manifest reproduces the resolved config.
  const RunConfig parsed = config_from_tree(read_config_file(root / "a" / "run.ini"));
  CHECK(same_config(parsed, cfg));
  CHECK(slurp(root / "a" / "run.ini").find("source_hash=") != std::string::npos);
  fs::remove_all(root);
}

TEST_CASE("interrupted sweeps only rerun missing trials", "[cli]") {
  const fs::path root = scratch("partial");
  const RunConfig cfg = tiny_double_descent(root / "run");
  run_double_descent(cfg);
  const std::string full = slurp(root / "run" / "double_descent.csv");
  // Drop the last completed trial, as if the process died before logging it.
  std::string trials = slurp(root / "run" / "trials.csv");
  trials.pop_back();
  trials.erase(trials.rfind('\n') + 1);
  std::ofstream(root / "run" / "trials.csv", std::ios::binary) << trials;
  const auto resumed = run_double_descent(cfg, {true, {}, nullptr});
  CHECK(resumed.summary.computed == 1);
  CHECK(resumed.summary.reused == 3);
  CHECK(slurp(root / "run" / "double_descent.csv") == full);
  fs::remove_all(root);
}

TEST_CASE("shapes-only sweep writes the shape table", "[cli]") {
  const fs::path root = scratch("shapes");
  RunConfig cfg = default_config(Profile::full);
  cfg.out = (root / "lm").string();
  const auto run = run_lm_sweep(cfg, {}, true);
  CHECK(run.plan.shapes.size() >= 100);
  const std::string csv = slurp(root / "lm" / "shapes.csv");
  CHECK(csv.find("0.3M-1,300000,1,128,32,512,295680,0.0078\n") != std::string::npos);
  CHECK(csv.find("1M-24,1000000,24,56,14,224,951664,") != std::string::npos);
  CHECK_FALSE(fs::exists(root / "lm" / "trials.csv"));
  fs::remove_all(root);
}

TEST_CASE("external comparison report", "[cli]") {
  const fs::path root = scratch("ext");
  const auto run = run_ext_compare(kData / "external_models.csv", root);
  CHECK(run.trends.size() == 4);
  CHECK(fs::exists(root / "ext_compare.json"));
  CHECK(fs::exists(root / "ext_compare.svg"));
  const auto j = nlohmann::json::parse(slurp(root / "ext_compare.json"));
  CHECK(j["models"].size() == 18);

  const fs::path custom = root / "custom.csv";
  std::ofstream(custom) << "model,family,params_B,d_model,layers,mmlu_pro,param_group,moe\n"
                           "A,F,1,1024,24,20,g,0\n"
                           "B,G,1,2048,16,10,g,0\n"
                           "C,H,1,4096,32,40,g,1\n";
  const auto one = run_ext_compare(custom, root / "custom");
  CHECK(one.trends.size() == 1);
  CHECK(one.ingest.rows.size() == 2);
  REQUIRE(one.ingest.diagnostics.size() == 1);
  CHECK(one.ingest.diagnostics[0].find("line 4") != std::string::npos);
  fs::remove_all(root);
}

TEST_CASE("acceptance tolerances and fixture checksums", "[cli]") {
  AcceptanceContext ctx;
  ctx.data_dir = kData;
  CHECK(criterion_external(ctx).pass);
  ctx.tol.set("ext.r=1e-9");
  CHECK_FALSE(criterion_external(ctx).pass);
  CHECK_THROWS_AS(ctx.tol.set("no.such=1"), std::invalid_argument);

  const fs::path copy = scratch("fixtures");
  for (const auto& e : fs::directory_iterator(kData)) fs::copy_file(e.path(), copy / e.path().filename());
  AcceptanceContext bad;
  bad.data_dir = copy;
  CHECK(criterion_fixtures(bad).pass);
  std::ofstream(copy / "cross_vit.csv", std::ios::app) << "tampered\n";
  const auto r = criterion_fixtures(bad);
  CHECK_FALSE(r.pass);
  CHECK(r.measured.find("cross_vit.csv") != std::string::npos);
  fs::remove_all(copy);
}
