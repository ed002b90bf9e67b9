#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

namespace amt {

struct HeadMacs {
  std::uint64_t q_proj = 0;
  std::uint64_t k_proj = 0;
  std::uint64_t v_proj = 0;
  std::uint64_t o_proj = 0;
  std::uint64_t cells = 0;

  std::uint64_t total() const { return q_proj + k_proj + v_proj + o_proj + cells; }
  bool operator==(const HeadMacs&) const = default;
};

struct BlockMacs {
  std::vector<HeadMacs> heads;
  std::uint64_t ff1 = 0;
  std::uint64_t ff2 = 0;

  std::uint64_t total() const;
  bool operator==(const BlockMacs&) const = default;
};

/// Multiply-accumulate counts for one utterance (or a pool of utterances).
struct FlopLedger {
  std::vector<BlockMacs> blocks;
  std::uint64_t input_proj = 0;
  std::uint64_t output_proj = 0;
  std::uint64_t arbitrator = 0;

  static FlopLedger zeros(std::size_t blocks, std::size_t heads);

  /// Transformer blocks only: attention projections, cells and FF.
  std::uint64_t encoder_total() const;
  /// Everything, including projections and the arbitrator.
  std::uint64_t total() const;

  FlopLedger& operator+=(const FlopLedger& other);
  bool operator==(const FlopLedger&) const = default;
};

/// One row per (block, component, head) then overhead rows and a totals row.
void write_ledger_csv(std::ostream& out, const FlopLedger& ledger);

}  // namespace amt
