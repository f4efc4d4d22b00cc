#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hcam/gradcheck.hpp"

namespace hcam {

struct GradcheckEntry {
  std::string name;
  GradCheckResult result;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool all_passed() const;
  double worst_relative_error() const;
};

/// Finite-difference checks of every differentiable op, the composed
/// hierarchical block and the memory stack (hcam, trxl, trxl-topk, lstm),
/// on random 64-bit inputs in [-1, 1].
GradcheckReport run_gradcheck_suite(std::uint64_t seed = 7, const GradCheckOptions& options = {});

/// Checks an op whose backward is deliberately wrong by 10%; a working
/// harness reports it as failed.
GradcheckEntry run_mutation_selftest(std::uint64_t seed = 7, const GradCheckOptions& options = {});

struct StopGradientProbe {
  double max_analytic = 0.0;  // |d loss / d x| through stop_gradient
  double max_numeric = 0.0;   // central difference with the stopped value held fixed
};
StopGradientProbe probe_stop_gradient(std::uint64_t seed = 7, double step = 1e-5);

}  // namespace hcam
