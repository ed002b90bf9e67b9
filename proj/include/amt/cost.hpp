#pragma once

#include <cstdint>
#include <istream>
#include <optional>

#include "amt/encoder_config.hpp"
#include "amt/ledger.hpp"
#include "amt/tape.hpp"

namespace amt {

struct CostParams {
  /// MACs charged per attention cell. Unset means 2 * d / H: one score dot
  /// product plus one value-weighting term.
  std::optional<std::uint64_t> per_cell_macs;
  /// Adds exp and divide per cell when set.
  bool include_softmax = false;
  /// Counts projections and the arbitrator in ccr(); by default only the
  /// transformer blocks are compared.
  bool include_overhead = false;

  std::uint64_t cell_cost(const EncoderConfig& config) const;
};

inline constexpr std::uint64_t kSoftmaxOpsPerCell = 2;

FlopLedger dense_flops(const EncoderConfig& config, std::size_t frames,
                       const CostParams& params = {}, std::size_t window = kNoWindow);

/// Exact MACs performed under hard toggles. Throws ContractError on soft values.
FlopLedger toggled_flops(const ToggleSet& toggles, const EncoderConfig& config,
                         const CostParams& params = {}, std::size_t window = kNoWindow);

/// Expected transformer-block MACs when every toggle is an independent
/// Bernoulli with the given probability. At {0,1} inputs this equals
/// toggled_flops(...).encoder_total() exactly.
double compute_loss(const ToggleSet& soft, const EncoderConfig& config,
                    const CostParams& params = {}, std::size_t window = kNoWindow);

/// Differentiable version of compute_loss.
Var compute_loss(const Var& ff, const Var& query, const Var& key, const EncoderConfig& config,
                 const CostParams& params = {}, std::size_t window = kNoWindow);

/// Fraction of dense compute eliminated.
double ccr(const FlopLedger& dense, const FlopLedger& actual, bool include_overhead = false);

/// Inverse of write_ledger_csv.
FlopLedger read_ledger_csv(std::istream& in);

}  // namespace amt
