#pragma once

#include <cstdint>
#include <vector>

#include "amt/arbitrator.hpp"
#include "amt/config.hpp"
#include "amt/cost.hpp"
#include "amt/encoder.hpp"
#include "amt/sampler.hpp"

namespace amt {

struct ModelSpec {
  EncoderConfig encoder;
  ArbitratorConfig arbitrator;
  ToggleKinds toggles;

  static ModelSpec from(const ExperimentConfig& config) {
    return {config.encoder, config.arbitrator, config.toggles};
  }
};

/// How arbitrator probabilities become encoder toggles on the training path.
struct SamplerSettings {
  double tau = 1.0;
  /// 0 feeds probabilities straight through; 1 uses the Gumbel sample alone.
  double lambda = 0.0;
  bool straight_through = false;
  /// seed/epoch/utterance of the noise key; frame and index are filled in.
  NoiseKey noise;
};

struct TrainForward {
  Var logits;        // T x output_dim
  Var compute;       // expected block MACs (1 x 1)
  ToggleVars toggles;  // effective toggles fed to the encoder
  ToggleVars probabilities;  // arbitrator outputs, disabled kinds forced to 1
};

struct StreamOutput {
  Array logits;     // T x output_dim
  ToggleSet soft;   // arbitrator probabilities (or the forced toggles)
  ToggleSet hard;   // decisions actually executed
  FlopLedger ledger;
};

class AmortizedModel {
 public:
  AmortizedModel(ModelSpec spec, const ParamStore& params);

  static ParamStore init_params(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  const Encoder& encoder() const { return encoder_; }
  const Arbitrator& arbitrator() const { return arbitrator_; }
  ParamStore params() const;

  TrainForward forward_train(const VarMap& p, const Array& features,
                             const SamplerSettings& sampler, const CostParams& cost = {}) const;

  /// Frame-by-frame sparse inference. With `forced` set the arbitrator is not
  /// consulted and those hard toggles are executed instead.
  StreamOutput stream(const Array& features, const ToggleSet* forced = nullptr,
                      std::size_t window = kNoWindow) const;

 private:
  ModelSpec spec_;
  Encoder encoder_;
  Arbitrator arbitrator_;
};

}  // namespace amt
