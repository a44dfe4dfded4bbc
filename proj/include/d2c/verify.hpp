#pragma once

// Oracle verify suite: every check compares a main-library computation with
// an independent brute-force route from the oracle library.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "d2c/oracle/oracle.hpp"

namespace d2c {

/// Replaceable candidate implementations, so tests can inject faults.
struct VerifyHooks {
  /// (p1, p2) -> merged probabilities.
  std::function<std::vector<double>(const std::vector<double>&, const std::vector<double>&)>
      merge;
  /// (p1, p2) -> CDF reported by the merged distribution.
  std::function<std::vector<double>(const std::vector<double>&, const std::vector<double>&)>
      merge_cdf;
  /// (probs, reward, gamma, v_min, v_max) -> projected probabilities.
  std::function<std::vector<double>(const std::vector<double>&, double, double, double, double)>
      project;
};

/// The main-library implementations.
VerifyHooks default_hooks();

/// Names of the registered checks, in report order.
std::vector<std::string> verify_check_names();

std::vector<oracle::OracleReport> run_verify(const VerifyHooks& hooks, std::uint64_t seed = 7);

/// CSV table: name,pass,max_abs_deviation,max_rel_deviation,tolerance,mode.
void write_reports(std::ostream& out, const std::vector<oracle::OracleReport>& reports);

}  // namespace d2c
