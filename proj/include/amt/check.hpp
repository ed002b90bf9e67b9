#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "amt/config.hpp"
#include "amt/encoder_config.hpp"
#include "amt/model.hpp"
#include "amt/tape.hpp"

namespace amt {

/// One randomly drawn (configuration, hard toggles) pair.
struct EquivalenceCase {
  EncoderConfig config;
  ToggleSet toggles;
  Array features;
  std::size_t window = kNoWindow;
  std::uint64_t param_seed = 0;
};

/// small: random shapes up to d=32 and 24 frames. desk: the desk-scale
/// encoder with 40 to 120 frames.
enum class CaseScale { small, desk };

EquivalenceCase random_case(std::uint64_t seed, std::size_t index,
                            CaseScale scale = CaseScale::small);

struct EquivalenceResult {
  std::size_t cases = 0;
  double max_abs_diff = 0.0;  // dense masked path vs streaming path
  std::size_t ledger_mismatches = 0;   // streaming ledger != toggled_flops
  std::size_t expected_mismatches = 0;  // compute_loss != toggled_flops block total
  std::vector<std::string> failures;

  bool outputs_match(double tolerance = 1e-8) const { return max_abs_diff <= tolerance; }
  bool ledgers_match() const { return ledger_mismatches == 0 && expected_mismatches == 0; }
};

/// Runs both forward paths and all three MAC counts on `cases` random pairs.
EquivalenceResult run_equivalence_suite(std::uint64_t seed, std::size_t cases,
                                        CaseScale scale = CaseScale::small);

void write_equivalence_summary(std::ostream& out, const EquivalenceResult& result);

struct GradientCheckResult {
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  std::string worst;  // parameter name and index of the largest error
};

/// Compares tape gradients of task + beta * normalised compute loss with
/// central differences over every parameter entry. Relative errors use
/// max(|a|, |b|, floor) as the denominator.
GradientCheckResult gradient_check(const ModelSpec& spec, const ParamStore& params,
                                   const Array& features, const std::vector<int>& labels,
                                   const SamplerSettings& sampler, double beta,
                                   double step = 1e-6, double floor = 1e-6);

}  // namespace amt
