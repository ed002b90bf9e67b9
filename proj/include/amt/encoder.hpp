#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "amt/array.hpp"
#include "amt/checkpoint.hpp"
#include "amt/encoder_config.hpp"
#include "amt/ledger.hpp"
#include "amt/tape.hpp"

namespace amt {

using VarMap = std::map<std::string, Var>;

/// Records every entry of `params` on `tape`, as trainable leaves or as
/// constants.
VarMap bind(Tape& tape, const ParamStore& params, bool trainable);

/// Toggles of one block: ff is T x 1, query and key are T x H.
struct BlockToggles {
  Var ff;
  Var query;
  Var key;
};

/// Differentiable view of a ToggleSet.
struct ToggleVars {
  Var ff;     // T x B
  Var query;  // T x BH
  Var key;    // T x BH

  static ToggleVars constant(Tape& tape, const ToggleSet& set);
  BlockToggles block(std::size_t b, std::size_t heads) const;
};

Array build_key_mask(const std::vector<double>& key_toggles, std::size_t window = kNoWindow);
Array sliding_window_mask(std::size_t frames, std::size_t window);

/// Softmax(alpha * Q K^T + M) (s_k * V), value rows scaled by the key toggles.
Var attention_head(Var q, Var k, Var v, Var mask, Var key_toggles, double alpha);
Var apply_query_toggle(Var head_output, Var query_toggles);

/// Retained keys and values of one head.
struct HeadCache {
  Array keys;    // n x head_dim
  Array values;  // n x head_dim
  std::vector<std::size_t> frames;

  std::size_t size() const { return frames.size(); }
};

/// Streaming state: one cache per (block, head), block-major.
struct StreamState {
  std::size_t next_frame = 0;
  std::size_t window = kNoWindow;
  std::vector<HeadCache> caches;
  std::vector<std::size_t> block_frames;
};

class Encoder {
 public:
  Encoder(EncoderConfig config, ParamStore params);

  static ParamStore init_params(const EncoderConfig& config, std::mt19937_64& rng);
  static std::size_t param_count(const EncoderConfig& config);

  const EncoderConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }

  static std::string name(std::size_t block, const char* leaf);

  // Dense masked path.
  Var embed(const VarMap& p, Var features) const;
  Var block(const VarMap& p, std::size_t b, Var x, const BlockToggles& toggles,
            std::size_t window = kNoWindow) const;
  Var ff_module(const VarMap& p, std::size_t b, Var x, Var ff_toggles) const;
  Var project_output(const VarMap& p, Var x) const;
  Var forward_train(const VarMap& p, Var features, const ToggleVars& toggles,
                    std::size_t window = kNoWindow) const;

  /// Constant-tape convenience wrapper around forward_train.
  Array forward(const Array& features, const ToggleSet& toggles,
                std::size_t window = kNoWindow) const;

  Array input_projection(const Array& frame) const;

  // Sparse streaming path. Only hard toggles are accepted; every skipped
  // component is genuinely not computed, and `ledger` receives the MACs
  // actually performed.
  StreamState start_stream(std::size_t window = kNoWindow) const;
  Array stream_embed(const StreamState& state, const Array& frame, FlopLedger& ledger) const;
  Array stream_block(StreamState& state, std::size_t b, const Array& x,
                     const FrameToggles& toggles, FlopLedger& ledger) const;
  Array stream_output(const Array& x, FlopLedger& ledger) const;
  void finish_frame(StreamState& state) const { ++state.next_frame; }

  Array stream_step(StreamState& state, const Array& frame, const FrameToggles& toggles,
                    FlopLedger& ledger) const;

 private:
  struct HeadWeights {
    Array wq, wk, wv;  // d x head_dim
    Array wo;          // head_dim x d
  };

  EncoderConfig config_;
  ParamStore params_;
  std::vector<std::vector<HeadWeights>> head_weights_;
};

void check_hard(const FrameToggles& toggles, std::size_t blocks, std::size_t heads);

}  // namespace amt
