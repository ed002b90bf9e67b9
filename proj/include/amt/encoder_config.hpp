#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "amt/array.hpp"

namespace amt {

struct EncoderConfig {
  std::size_t input_dim = 516;
  std::size_t d = 512;
  std::size_t heads = 4;
  std::size_t blocks = 12;
  std::size_t ff_dim = 1024;
  std::size_t output_dim = 512;
  /// Length of the learned positional table; streams may not run longer.
  std::size_t max_len = 2048;
  /// Attention logit scale. Unset means 1/sqrt(d).
  std::optional<double> alpha;

  std::size_t head_dim() const { return d / heads; }
  double attention_scale() const;
  void validate() const;
};

/// Toggle values for every frame of one utterance. Columns of `query` and
/// `key` are block-major, head-minor (index b * heads + h).
struct ToggleSet {
  std::size_t frames = 0;
  std::size_t blocks = 0;
  std::size_t heads = 0;
  Array ff;     // frames x blocks
  Array query;  // frames x (blocks * heads)
  Array key;    // frames x (blocks * heads)
  bool hard = false;

  static ToggleSet filled(std::size_t frames, std::size_t blocks, std::size_t heads, double value);
  static ToggleSet ones(std::size_t frames, std::size_t blocks, std::size_t heads) {
    return filled(frames, blocks, heads, 1.0);
  }

  /// Throws ContractError when shapes disagree with `config` or values leave
  /// [0,1] (or {0,1} when `hard` is set).
  void validate(const EncoderConfig& config) const;
  bool all_binary() const;
};

/// Hard decisions for one frame, in the same column layout as ToggleSet.
struct FrameToggles {
  std::vector<double> ff;
  std::vector<double> query;
  std::vector<double> key;

  static FrameToggles ones(std::size_t blocks, std::size_t heads);
  static FrameToggles from(const ToggleSet& set, std::size_t frame);
};

}  // namespace amt
