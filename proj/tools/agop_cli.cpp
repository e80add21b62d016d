// agop: command-line front end for the experiments and checks.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "agop/agop.hpp"

namespace fs = std::filesystem;
using namespace agop;

namespace {

#ifndef AGOP_DATA_DIR
#define AGOP_DATA_DIR "data"
#endif

struct CommonFlags {
  std::string config;
  std::string out;
  std::string profile;
  std::optional<std::size_t> seeds;
  std::optional<std::size_t> workers;
  bool resume = false;
  std::vector<std::string> corpus;
  std::vector<std::string> set;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "INI config file");
  cmd->add_option("--out", f.out, "output directory (default $AGOP_OUT_ROOT/<experiment> or runs/<experiment>)");
  cmd->add_option("--profile", f.profile, "scale profile: desk (default) or full")->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--seeds", f.seeds, "number of seeds per grid point");
  cmd->add_option("--workers", f.workers, "concurrent trials");
  cmd->add_flag("--resume", f.resume, "continue a run in an existing output directory");
  cmd->add_option("--set", f.set, "extra config override, section.key=value (repeatable)");
}

/// Profile defaults, then the config file, then flags; every non-default
/// key ends up in `overrides`.
RunConfig resolve(const CommonFlags& f, const std::string& experiment, std::vector<std::string>& overrides) {
  ConfigTree tree;
  if (!f.config.empty()) tree = read_config_file(f.config);
  if (!f.profile.empty()) tree.put("general.profile", f.profile);
  tree.put("general.experiment", experiment);
  if (!f.out.empty()) tree.put("general.out", f.out);
  if (f.workers) tree.put("general.workers", std::to_string(*f.workers));
  if (f.seeds) tree.put(experiment == "lm-sweep" ? "lm.seeds" : "toy.seeds", std::to_string(*f.seeds));
  if (!f.corpus.empty()) tree.put("lm.corpus", detail::format_value(f.corpus));
  for (const auto& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects section.key=value, got '" + kv + "'");
    tree.put(kv.substr(0, eq), kv.substr(eq + 1));
  }
  std::vector<std::string> applied;
  RunConfig cfg = config_from_tree(tree, Profile::desk, &applied);
  const ConfigTree defaults = to_tree(default_config(cfg.profile));
  for (const auto& a : applied) {
    const auto key = a.substr(0, a.find('='));
    if (key == "general.experiment" || key == "general.profile") continue;
    if (defaults.get<std::string>(key) != to_tree(cfg).get<std::string>(key)) overrides.push_back(a);
  }
  return cfg;
}

int report_failures(const SweepSummary& s) {
  std::cerr << s.computed << " trials computed, " << s.reused << " reused, " << s.failures.size() << " failed\n";
  for (const auto& f : s.failures) std::cerr << "  failed: " << f << '\n';
  std::cerr << "results in " << s.dir.string() << '\n';
  return s.failures.empty() ? 0 : 2;
}

int cmd_double_descent(const CommonFlags& f) {
  std::vector<std::string> overrides;
  const RunConfig cfg = resolve(f, "double-descent", overrides);
  const auto run = run_double_descent(cfg, {f.resume, overrides, &std::cerr});
  for (const auto& r : run.rows)
    std::cout << r.data_size << ": test_loss " << fmt17(r.test_loss.mean) << ", AOFE " << fmt17(r.aofe.mean)
              << ", AOFE_ratio " << fmt17(r.aofe_ratio.mean) << '\n';
  return report_failures(run.summary);
}

int cmd_lm_sweep(const CommonFlags& f, bool shapes_only) {
  std::vector<std::string> overrides;
  const RunConfig cfg = resolve(f, "lm-sweep", overrides);
  const auto run = run_lm_sweep(cfg, {f.resume, overrides, &std::cerr}, shapes_only);
  for (const auto& w : run.warnings) std::cerr << "warning: " << w << '\n';
  if (shapes_only) {
    write_shape_csv(std::cout, run.plan.shapes);
    return 0;
  }
  for (const auto& b : run.best)
    std::cout << "best " << budget_label(b.shape.target_n) << ": " << b.id() << " alpha " << format_ratio(b.shape.alpha())
              << " test_loss " << fmt17(b.test_loss) << '\n';
  if (run.interval) std::cout << "interval [" << run.interval->lo << ", " << run.interval->hi << "]\n";
  return report_failures(run.summary);
}

int cmd_shapes(const std::vector<std::uint64_t>& budgets, const std::vector<std::size_t>& depths, std::size_t context,
               std::size_t vocab) {
  std::vector<ShapeConfig> all;
  for (std::uint64_t b : budgets.empty() ? reference_budgets() : budgets) {
    std::vector<ShapeSkip> skipped;
    auto s = enumerate_shapes(b, depths.empty() ? reference_depths_for(b) : depths, &skipped, vocab, context);
    all.insert(all.end(), s.begin(), s.end());
    for (const auto& k : skipped)
      std::cerr << "skipped depth " << k.layers << " at " << budget_label(k.target_n) << ": " << k.reason << '\n';
  }
  write_shape_csv(std::cout, all);
  return 0;
}

int cmd_ext_compare(const std::string& table, const std::string& out) {
  const auto run = run_ext_compare(table, out);
  for (const auto& d : run.ingest.diagnostics) std::cerr << d << '\n';
  std::cout << run.report.dump(2) << '\n';
  return 0;
}

/// Input-side AGOP of a checkpoint against the Gram of one of its weights.
int cmd_agop_check(const std::string& stem, std::string tensor, double alpha, std::size_t samples,
                   const std::vector<std::string>& corpus_paths, std::uint64_t seed) {
  const Checkpoint ck = load_checkpoint(stem);
  AgopMatrix g;
  Matrix w;
  if (ck.meta.at("kind") == "tied_autoencoder") {
    const TiedAutoencoder model = autoencoder_from_checkpoint(ck);
    const SparseDataset data = generate_sparse_data({samples, model.dim(), 0.99, seed});
    const Matrix c = coactivation(
        model, data.size(), [&](std::size_t f, std::size_t k) { return data.dense_rows(f, k); }, 1024);
    // J = diag(gate) W^T W, so E[J^T J] = G diag(E gate) G.
    const Matrix gm = model.interaction();
    g = symmetrize(gm * c.diagonal().asDiagonal() * gm, AgopSpace::input, data.size(), "closed_form_input");
    w = model.w;
  } else {
    const TinyTransformer model = transformer_from_checkpoint(ck);
    if (tensor.empty()) tensor = "block0.attn.wq";
    const ByteCorpus corpus = corpus_paths.empty()
                                  ? [&] {
                                      ByteCorpus c;
                                      const std::string s = synthetic_corpus(1 << 20, 7);
                                      c.test.assign(s.begin(), s.end());
                                      return c;
                                    }()
                                  : load_corpus({corpus_paths.begin(), corpus_paths.end()}, model.context());
    const std::size_t len = model.context();
    if (corpus.test.size() < len) throw std::runtime_error("test split shorter than one context window");
    const LastLogitsModel last(model, len);
    const auto d = static_cast<Eigen::Index>(model.d_model());
    // Tangents touch only the last position's embedding.
    Matrix tangents = Matrix::Zero(static_cast<Eigen::Index>(len) * d, d);
    tangents.bottomRows(d).setIdentity();
    Matrix sum = Matrix::Zero(d, d);
    RandomStream rng(seed, derive_seed("agop-check"));
    for (std::size_t i = 0; i < samples; ++i) {
      const std::size_t start = rng.uniform_index(corpus.test.size() - len + 1);
      const Tensor x = last.embed(std::span<const std::uint8_t>(corpus.test).subspan(start, len));
      const Matrix jac = last.jvp_block(x.to_vector(), tangents);
      sum.noalias() += jac.transpose() * jac;
    }
    g = symmetrize(sum / static_cast<double>(samples), AgopSpace::input, samples, "exact_last_position");
    // Weights act on the right (x W), so the input-side Gram of W is W W^T.
    w = ck.matrix(tensor).transpose();
  }
  nlohmann::ordered_json j{{"checkpoint", stem},
                           {"kind", ck.meta.at("kind")},
                           {"tensor", tensor.empty() ? "W" : tensor},
                           {"alpha", alpha},
                           {"samples", samples},
                           {"AOFE", aofe(g)},
                           {"AOFE_ratio", aofe_ratio(g)},
                           {"nfa_alignment", nfa_alignment(w, g, alpha)}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_verify(const std::string& data, const std::vector<std::string>& tolerances, bool experiments,
               const std::string& scratch, const std::string& json_path) {
  AcceptanceContext ctx;
  ctx.data_dir = data;
  ctx.scratch = scratch;
  ctx.out = &std::cout;
  ctx.log = &std::cerr;
  for (const auto& t : tolerances) ctx.tol.set(t);
  auto results = fast_criteria(ctx);
  if (experiments) {
    for (auto& r : double_descent_criteria(ctx)) results.push_back(std::move(r));
    for (auto& r : lm_criteria(ctx)) results.push_back(std::move(r));
  }
  bool ok = true;
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    ok = ok && r.pass;
    j.push_back({{"id", r.id}, {"name", r.name}, {"pass", r.pass}, {"measured", r.measured}, {"seconds", r.seconds}});
  }
  if (!json_path.empty()) std::ofstream(json_path) << j.dump(2) << '\n';
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AGOP interaction metrics: toy double descent, byte-level LM shape sweeps, external comparisons"};
  app.require_subcommand(1);

  CommonFlags dd_flags, lm_flags;
  auto* dd = app.add_subcommand("double-descent", "toy autoencoder sweep over training-set sizes");
  add_common(dd, dd_flags);

  bool shapes_only = false;
  auto* lm = app.add_subcommand("lm-sweep", "train one byte-level decoder per (budget, depth, seed)");
  add_common(lm, lm_flags);
  lm->add_option("--corpus", lm_flags.corpus, "one byte file (split 98/1/1) or three: train valid test");
  lm->add_flag("--shapes-only", shapes_only, "solve and print the shapes without training");

  std::vector<std::uint64_t> budgets;
  std::vector<std::size_t> depths;
  std::size_t context = 256, vocab = 256;
  auto* shapes = app.add_subcommand("shapes", "print the solved shape table");
  shapes->add_option("--budget", budgets, "target parameter counts (default: the reference budgets)");
  shapes->add_option("--depths", depths, "depths to solve (default: the reference list per budget)");
  shapes->add_option("--context", context, "context length");
  shapes->add_option("--vocab", vocab, "vocabulary size");

  std::string table = std::string(AGOP_DATA_DIR) + "/external_models.csv", ext_out;
  auto* ext = app.add_subcommand("ext-compare", "distance to the efficient interval vs benchmark score, per size group");
  ext->add_option("--table", table, "model table CSV");
  ext->add_option("--out", ext_out, "directory for ext_compare.json and ext_compare.svg");

  std::string ckpt, tensor;
  double alpha = 0.5;
  std::size_t samples = 256;
  std::uint64_t seed = 0;
  std::vector<std::string> check_corpus;
  auto* check = app.add_subcommand("agop-check", "AGOP of a checkpoint and its alignment with a weight Gram");
  check->add_option("--checkpoint", ckpt, "checkpoint stem (without .bin/.manifest)")->required();
  check->add_option("--tensor", tensor, "transformer weight to compare (default block0.attn.wq)");
  check->add_option("--alpha", alpha, "power applied to the AGOP");
  check->add_option("--samples", samples, "inputs averaged over");
  check->add_option("--seed", seed, "sampling seed");
  check->add_option("--corpus", check_corpus, "corpus for transformer inputs (default: synthetic)");

  std::string data = AGOP_DATA_DIR, scratch = "acceptance_runs", json_out;
  std::vector<std::string> tolerances;
  bool experiments = false;
  auto* verify = app.add_subcommand("verify", "run the acceptance criteria");
  verify->add_option("--data", data, "fixture directory");
  verify->add_option("--tolerance", tolerances, "override a threshold, name=value (repeatable)");
  verify->add_flag("--experiments", experiments, "also run the desk double-descent and LM sweeps (hours)");
  verify->add_option("--scratch", scratch, "directory for experiment runs");
  verify->add_option("--json", json_out, "write the results as JSON");

  std::size_t bytes = 4000000;
  std::uint64_t corpus_seed = 7;
  std::string corpus_out;
  auto* gen = app.add_subcommand("gen-corpus", "write the synthetic byte corpus");
  gen->add_option("--bytes", bytes, "corpus size");
  gen->add_option("--seed", corpus_seed, "generator seed");
  gen->add_option("--out", corpus_out, "output file")->required();

  auto* sums = app.add_subcommand("checksums", "rewrite the fixture checksum list");
  sums->add_option("--data", data, "fixture directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*dd) return cmd_double_descent(dd_flags);
    if (*lm) return cmd_lm_sweep(lm_flags, shapes_only);
    if (*shapes) return cmd_shapes(budgets, depths, context, vocab);
    if (*ext) return cmd_ext_compare(table, ext_out);
    if (*check) return cmd_agop_check(ckpt, tensor, alpha, samples, check_corpus, seed);
    if (*verify) return cmd_verify(data, tolerances, experiments, scratch, json_out);
    if (*gen) {
      write_text(corpus_out, synthetic_corpus(bytes, corpus_seed));
      return 0;
    }
    if (*sums) {
      write_fixture_checksums(data, fixture_files());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
