#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace imix {

struct VerifyCheck {
  std::string name;
  bool passed = true;
  std::size_t cases = 0;
  double worst = 0.0;  // largest observed error, in the check's own metric
  std::string detail;  // first failure, if any
  double seconds = 0.0;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  std::size_t passed() const;
  std::size_t failed() const;
  bool ok() const { return failed() == 0; }
};

struct VerifyOptions {
  std::uint64_t seed = 20201;
  std::size_t linearity_instances = 100;
  std::size_t gradient_instances = 50;
  // Harness self-test: added to every mixed-label loss value before the
  // linearity comparison.
  double linearity_perturbation = 0.0;
  // Restrict to these check names; empty runs everything.
  std::vector<std::string> only;
};

// Check names, in run order.
std::vector<std::string> verify_check_names();
VerifyReport run_verify(const VerifyOptions& opts = {});

// max_i |a_i - n_i| / max(max_i |n_i|, max_i |a_i|, floor, 1e-6): the
// relative error used by every gradient check. floor lets a caller compare a
// tensor whose exact gradient is zero against the scale of the objective.
double gradient_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                          double floor = 0.0);

}  // namespace imix
