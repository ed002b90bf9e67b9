#pragma once

#include <cstddef>
#include <cstdint>

#include "amt/array.hpp"
#include "amt/tape.hpp"

namespace amt {

/// Two-phase annealing. Defaults are the full-scale values; desk runs
/// override them from the run configuration.
struct AnnealSchedule {
  double beta_start = 1e-8;
  double beta_end = 5e-8;
  double temp_start = 1.0;
  double temp_end = 1e-5;
  double lambda_start = 0.0;
  double lambda_end = 1.0;
  std::size_t pretrain_epochs = 120;
  std::size_t finetune_epochs = 80;
  /// Extra epochs trained at the end values after fine-tuning.
  std::size_t settle_epochs = 0;

  std::size_t total_epochs() const { return pretrain_epochs + finetune_epochs + settle_epochs; }

  void validate() const;
};

struct ScheduleValues {
  double beta;
  double tau;
  double lambda;
};

/// beta = 0, tau = temp_start, lambda = 0 while pre-training; linear from the
/// start to the end values across fine-tuning; clamped afterwards.
ScheduleValues schedule_at(const AnnealSchedule& schedule, std::size_t epoch);

enum class SampleMode { soft, gumbel_soft, hard_eval };

/// Keyed uniform noise: the same key always yields the same value, with no
/// generator state to thread through the computation.
struct NoiseKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t utterance = 0;
  std::uint64_t frame = 0;
  std::uint64_t index = 0;
};

/// Uniform in the open interval (0, 1).
double keyed_uniform(const NoiseKey& key, std::uint64_t stream = 0);

/// g1 - g2 for two independent standard Gumbel draws under `key`.
double logistic_noise(const NoiseKey& key);

inline constexpr double kProbabilityClamp = 1e-7;

/// Number of probabilities clamped into [1e-7, 1 - 1e-7] so far (process-wide).
std::uint64_t gumbel_clamp_count();

/// sigmoid((logit(p) + noise) / tau), where noise = g1 - g2.
double gumbel_sigmoid(double p, double tau, double noise);
double gumbel_sigmoid(double p, double tau, const NoiseKey& key);

/// Elementwise differentiable Gumbel-sigmoid with pre-drawn noise.
Var gumbel_sigmoid(Var p, const Array& noise, double tau);

double blend(double p, double sample, double lambda);
Var blend(Var p, Var sample, double lambda);

/// 1 when p >= 0.5.
double harden(double p);

}  // namespace amt
