#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rsnet/eval.hpp"
#include "rsnet/gradcheck.hpp"
#include "rsnet/rng.hpp"
#include "rsnet/wavelet.hpp"

namespace rsnet {

struct CheckResult {
  std::string name;
  bool ok = false;
  std::string detail;
};

struct CheckOptions {
  // Test hook: run the wavelet checks against a bank with one perturbed tap.
  bool corrupt_filter = false;
  int gradient_shapes = 5;
  std::uint64_t seed = 1;
  std::string scratch_dir;  // checkpoint round trip; defaults to the temp dir
};

// The invariant suite behind `rsnet check`.
std::vector<CheckResult> run_checks(const CheckOptions& options,
                                    const std::function<void(const CheckResult&)>& on_result = {});

// Haar bank with LL[0] nudged by 2^-20.
WaveletFilterBank corrupted_haar();

// Named finite-difference cases covering every op and block; each call draws
// a random shape from the rng.
struct GradCase {
  std::string name;
  std::function<GradCheckResult(Rng&)> run;
};
std::vector<GradCase> gradient_cases();

struct ReconstructionStats {
  double max_rel_error = 0;     // synthesis(analysis(x)) vs x
  double max_energy_error = 0;  // |sum x^2 - sum bands^2| / sum x^2
};
// Runs `trials` random tensors with even or odd extents.
template <typename T>
ReconstructionStats wavelet_reconstruction(const WaveletFilterBank& bank, int trials, std::uint64_t seed);

}  // namespace rsnet
