#include "amt/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace amt {

void AnnealSchedule::validate() const {
  if (!(temp_end > 0.0) || !(temp_start >= temp_end)) {
    throw ContractError("temperatures must satisfy temp_start >= temp_end > 0");
  }
  if (!(beta_start >= 0.0) || !(beta_end >= beta_start)) {
    throw ContractError("beta must satisfy 0 <= beta_start <= beta_end");
  }
  if (!(lambda_start >= 0.0) || !(lambda_end <= 1.0) || !(lambda_end >= lambda_start)) {
    throw ContractError("lambda must satisfy 0 <= lambda_start <= lambda_end <= 1");
  }
}

ScheduleValues schedule_at(const AnnealSchedule& s, std::size_t epoch) {
  if (epoch < s.pretrain_epochs) return {0.0, s.temp_start, 0.0};
  const double u =
      s.finetune_epochs == 0
          ? 1.0
          : std::min(1.0, static_cast<double>(epoch - s.pretrain_epochs) /
                              static_cast<double>(s.finetune_epochs));
  auto lerp = [u](double a, double b) { return a + (b - a) * u; };
  return {lerp(s.beta_start, s.beta_end), lerp(s.temp_start, s.temp_end),
          lerp(s.lambda_start, s.lambda_end)};
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::atomic<std::uint64_t> clamp_events{0};

double clamp_probability(double p) {
  if (p < kProbabilityClamp || p > 1.0 - kProbabilityClamp) {
    clamp_events.fetch_add(1, std::memory_order_relaxed);
    return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  }
  return p;
}

}  // namespace

double keyed_uniform(const NoiseKey& key, std::uint64_t stream) {
  std::uint64_t h = mix(key.seed);
  for (std::uint64_t part : {key.epoch, key.utterance, key.frame, key.index, stream}) {
    h = mix(h ^ part);
  }
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

double logistic_noise(const NoiseKey& key) {
  const double g1 = -std::log(-std::log(keyed_uniform(key, 1)));
  const double g2 = -std::log(-std::log(keyed_uniform(key, 2)));
  return g1 - g2;
}

std::uint64_t gumbel_clamp_count() { return clamp_events.load(std::memory_order_relaxed); }

double gumbel_sigmoid(double p, double tau, double noise) {
  if (!(tau > 0.0)) throw ContractError("gumbel temperature must be positive");
  p = clamp_probability(p);
  return sigmoid((std::log(p) - std::log1p(-p) + noise) / tau);
}

double gumbel_sigmoid(double p, double tau, const NoiseKey& key) {
  return gumbel_sigmoid(p, tau, logistic_noise(key));
}

Var gumbel_sigmoid(Var p, const Array& noise, double tau) {
  if (!(tau > 0.0)) throw ContractError("gumbel temperature must be positive");
  const Array& pv = p.value();
  if (noise.size() != pv.size()) throw DimensionError("gumbel noise shape mismatch");
  Array out({pv.rows(), pv.cols()});
  Array slope({pv.rows(), pv.cols()});
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double clamped = clamp_probability(pv[i]);
    const double s = sigmoid((std::log(clamped) - std::log1p(-clamped) + noise[i]) / tau);
    out[i] = s;
    // ds/dp = s (1 - s) / (tau p (1 - p)); zero where the clamp is active.
    slope[i] = clamped == pv[i] ? s * (1.0 - s) / (tau * clamped * (1.0 - clamped)) : 0.0;
  }
  const std::size_t ip = p.id;
  return p.tape->record(std::move(out), {ip},
                        [ip, slope = std::move(slope)](Tape& t, std::size_t self) {
                          const Array& g = t.grad(self);
                          Array& gp = t.grad_ref(ip);
                          for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * slope[i];
                        });
}

double blend(double p, double sample, double lambda) {
  return (1.0 - lambda) * p + lambda * sample;
}

Var blend(Var p, Var sample, double lambda) {
  if (lambda == 0.0) return scale(p, 1.0);
  if (lambda == 1.0) return scale(sample, 1.0);
  return add(scale(p, 1.0 - lambda), scale(sample, lambda));
}

double harden(double p) { return p >= 0.5 ? 1.0 : 0.0; }

}  // namespace amt
