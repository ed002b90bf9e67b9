#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <string>

#include "amt/arbitrator.hpp"
#include "amt/cost.hpp"
#include "amt/encoder_config.hpp"
#include "amt/sampler.hpp"

namespace amt {

/// Flat `key = value` file. `#` starts a comment; blank lines are ignored.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in);
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& at(const std::string& key) const;
  void merge(const KeyValueConfig& overrides);
  void write(std::ostream& out) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct SyntheticTaskConfig {
  /// Class 0 is the blank label of silence frames.
  std::size_t n_classes = 8;
  std::size_t frame_dim = 16;
  std::size_t active_min = 6;
  std::size_t active_max = 16;
  std::size_t silence_min = 8;
  std::size_t silence_max = 20;
  double silence_noise_std = 0.05;
  double active_noise_std = 1.0;
  std::size_t utt_min = 40;
  std::size_t utt_max = 120;
  std::size_t n_train = 2000;
  std::size_t n_test = 200;

  void validate() const;
};

/// Which toggle types the arbitrator may switch off; disabled ones stay at 1.
struct ToggleKinds {
  bool ff = true;
  bool query = true;
  bool key = true;
};

struct TrainConfig {
  double learning_rate = 2e-3;
  std::size_t warmup_steps = 100;
  std::size_t batch = 16;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Divide the compute penalty by the utterance's dense block MACs.
  bool normalize_compute = true;
  bool straight_through = false;
};

struct EvalConfig {
  std::size_t window = 10;
  /// Pool MACs over the dataset for CCR (otherwise average per-utterance ratios).
  bool pool_ccr = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  EncoderConfig encoder;
  ArbitratorConfig arbitrator;
  ToggleKinds toggles;
  SyntheticTaskConfig data;
  AnnealSchedule schedule;
  TrainConfig train;
  CostParams cost;
  EvalConfig eval;

  /// Desk-scale defaults for the synthetic task.
  static ExperimentConfig desk();
  /// Unknown keys are rejected.
  static ExperimentConfig from(const KeyValueConfig& kv);
  KeyValueConfig to_kv() const;
};

std::string to_string(ArbitratorKind kind);
std::string to_string(ArbitratorLayout layout);

}  // namespace amt
