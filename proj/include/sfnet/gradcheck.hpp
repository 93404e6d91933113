#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sfnet/tensor.hpp"

namespace sfnet {

struct GradcheckOptions {
  double h = 1e-5;
  // Entries probed per tensor; 0 probes every entry.
  int samples_per_tensor = 5;
  std::uint64_t seed = 0;
  // |analytic - numeric| / max(|analytic|, |numeric|, denominator_floor)
  double denominator_floor = 1e-6;
};

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::size_t probes = 0;
  std::size_t skipped = 0;  // probes whose +-h evaluations crossed a kink
  std::string worst;        // "<tensor>[<index>]"
};

using NamedTensor = std::pair<std::string, Tensor>;

// Compares the reverse-mode gradient of the scalar `loss` with central
// differences for each listed leaf tensor. The leaves are perturbed in
// place and restored. Probes where the kink fingerprint at x +- h differs
// from the one at x are skipped and counted.
GradcheckReport gradcheck(const std::function<Tensor()>& loss,
                          const std::vector<NamedTensor>& leaves,
                          const GradcheckOptions& options = {});

struct SuiteResult {
  std::string name;
  GradcheckReport report;
  int seeds = 0;
  double seconds = 0.0;
};

// Named finite-difference suites: "sampler", "conv", "group_norm", "ppm",
// "fam", "model". Each runs over seeds 0 .. seeds-1 and keeps the worst
// report.
std::vector<std::string> gradcheck_suite_names();
SuiteResult run_gradcheck_suite(const std::string& name, int seeds);

}  // namespace sfnet
