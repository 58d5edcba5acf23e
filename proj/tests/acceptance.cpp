#include <cstdio>
#include <fstream>

#include "entlab/verify.hpp"

int main(int argc, char** argv) {
  const entlab::VerifyReport report = entlab::verify_suite(false);
  for (const entlab::CheckResult& c : report.checks) {
    std::printf("%s check %s (%s)\n", c.passed ? "[PASS]" : "[FAIL]", c.id.c_str(), c.module.c_str());
  }
  std::size_t passed = 0;
  for (const entlab::CriterionResult& r : report.criteria) {
    std::printf("%s\n", entlab::format_criterion_line(r).c_str());
    passed += r.passed ? 1 : 0;
  }
  std::printf("%zu/%zu criteria passed in %.1f s\n", passed, report.criteria.size(), report.seconds);
  if (argc > 1) std::ofstream(argv[1]) << report.to_json().dump(2) << '\n';
  return report.passed ? 0 : 1;
}
