#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "amt/array.hpp"
#include "amt/checkpoint.hpp"
#include "amt/encoder.hpp"

namespace amt {

enum class ArbitratorKind { feedforward, recurrent };
enum class ArbitratorLayout { single, dual };

struct ArbitratorConfig {
  ArbitratorKind kind = ArbitratorKind::feedforward;
  ArbitratorLayout layout = ArbitratorLayout::single;
  std::size_t hidden = 128;
  /// Hidden tanh layers (feedforward) or stacked LSTM layers (recurrent),
  /// not counting the sigmoid output projection.
  std::size_t layers = 2;
  /// First block driven by the top arbitrator (dual only). 0 means blocks / 2.
  std::size_t split_block = 0;
  /// Initial output-projection bias; sigmoid(2) ~ 0.88 starts near dense.
  double bias_init = 2.0;

  /// Sizes used for the reference parameter counts: one hidden layer for
  /// feedforward arbitrators, two LSTM layers for recurrent ones.
  static ArbitratorConfig reference(ArbitratorKind kind, ArbitratorLayout layout,
                                    std::size_t hidden = 128);

  std::size_t split(std::size_t blocks) const;
  void validate(std::size_t blocks) const;
};

/// Toggle probabilities for a contiguous range of blocks at one frame.
/// query/key are block-major, head-minor.
struct Decision {
  std::size_t first_block = 0;
  std::size_t blocks = 0;
  std::size_t heads = 0;
  std::vector<double> ff;
  std::vector<double> query;
  std::vector<double> key;
};

/// Concatenates the bottom and top decisions along the block axis.
Decision dual_route(const Decision& bottom, const Decision& top, std::size_t split_block);

/// Thresholds a full-width decision (ties go to compute-on).
FrameToggles harden(const Decision& decision);

/// Per-group recurrent state; empty for feedforward arbitrators.
struct ArbitratorState {
  std::vector<std::vector<std::pair<Array, Array>>> lstm;  // [group][layer] -> (h, c)
};

class Arbitrator {
 public:
  /// `model_dim` is the width of the encoder activations fed to a dual top.
  Arbitrator(ArbitratorConfig config, std::size_t blocks, std::size_t heads,
             std::size_t input_dim, std::size_t model_dim, ParamStore params);

  static ParamStore init_params(const ArbitratorConfig& config, std::size_t blocks,
                                std::size_t heads, std::size_t input_dim, std::size_t model_dim,
                                std::mt19937_64& rng);
  static std::size_t param_count(const ArbitratorConfig& config, std::size_t blocks,
                                 std::size_t heads, std::size_t input_dim, std::size_t model_dim);
  static std::uint64_t macs_per_frame(const ArbitratorConfig& config, std::size_t blocks,
                                      std::size_t heads, std::size_t input_dim,
                                      std::size_t model_dim);

  const ArbitratorConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }
  std::size_t groups() const { return config_.layout == ArbitratorLayout::dual ? 2 : 1; }
  std::size_t group_begin(std::size_t group) const;
  std::size_t group_end(std::size_t group) const;
  std::size_t group_input_dim(std::size_t group) const;
  std::size_t group_output_dim(std::size_t group) const;
  static std::string prefix(std::size_t group, std::size_t groups);

  /// Probabilities for every frame: T x (n + 2 n H) for the group's n blocks,
  /// laid out [ff | query | key].
  Var forward(const VarMap& p, std::size_t group, Var inputs) const;

  ArbitratorState start() const;
  /// One frame. `macs` (optional) accumulates the multiply-accumulates spent.
  Decision decide(std::size_t group, const Array& input, ArbitratorState& state,
                  std::uint64_t* macs = nullptr) const;

 private:
  ArbitratorConfig config_;
  std::size_t blocks_, heads_, input_dim_, model_dim_;
  ParamStore params_;
};

}  // namespace amt
