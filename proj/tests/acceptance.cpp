// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//
//   agop_acceptance --group fast|double-descent|lm|all [--scratch DIR]
//                   [--data DIR] [--tolerance name=value]...

#include <cstring>
#include <iostream>
#include <string>
#include <vector>

#include "agop/acceptance.hpp"

int main(int argc, char** argv) {
  agop::AcceptanceContext ctx;
  ctx.data_dir = AGOP_DATA_DIR;
  ctx.out = &std::cout;
  ctx.log = &std::cerr;
  std::string group = "fast";
  try {
    for (int i = 1; i < argc; ++i) {
      const std::string a = argv[i];
      auto value = [&]() -> std::string {
        if (i + 1 >= argc) throw std::invalid_argument(a + " needs a value");
        return argv[++i];
      };
      if (a == "--group") group = value();
      else if (a == "--scratch") ctx.scratch = value();
      else if (a == "--data") ctx.data_dir = value();
      else if (a == "--tolerance") ctx.tol.set(value());
      else throw std::invalid_argument("unknown argument " + a);
    }
    std::vector<agop::CriterionResult> results;
    auto take = [&](std::vector<agop::CriterionResult> r) { results.insert(results.end(), r.begin(), r.end()); };
    if (group == "fast" || group == "all") take(agop::fast_criteria(ctx));
    if (group == "double-descent" || group == "all") take(agop::double_descent_criteria(ctx));
    if (group == "lm" || group == "all") take(agop::lm_criteria(ctx));
    if (results.empty()) throw std::invalid_argument("unknown group " + group);
    for (const auto& r : results)
      if (!r.pass) return 1;
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
