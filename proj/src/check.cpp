#include "amt/check.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "amt/cost.hpp"
#include "amt/encoder.hpp"

namespace amt {

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

EquivalenceCase random_case(std::uint64_t seed, std::size_t index, CaseScale scale) {
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + index * 0xbf58476d1ce4e5b9ULL + 3);
  EquivalenceCase c;
  EncoderConfig& e = c.config;
  std::size_t T = 0;
  if (scale == CaseScale::desk) {
    e = ExperimentConfig::desk().encoder;
    T = pick(rng, 40, 120);
    if (pick(rng, 0, 2) == 0) c.window = pick(rng, 1, 20);
  } else {
    const std::size_t heads_options[] = {1, 2, 4};
    e.heads = heads_options[pick(rng, 0, 2)];
    e.d = e.heads * pick(rng, 2, 8);
    e.blocks = pick(rng, 1, 3);
    e.ff_dim = pick(rng, 4, 24);
    e.input_dim = pick(rng, 2, 10);
    e.output_dim = pick(rng, 2, 6);
    T = pick(rng, 1, 24);
    e.max_len = T + pick(rng, 0, 8);
    if (pick(rng, 0, 2) == 0) c.window = pick(rng, 1, 6);
  }
  e.validate();

  const double rate = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  std::bernoulli_distribution on(rate);
  c.toggles = ToggleSet::ones(T, e.blocks, e.heads);
  c.toggles.hard = true;
  for (double& v : c.toggles.ff.data) v = on(rng) ? 1.0 : 0.0;
  for (double& v : c.toggles.query.data) v = on(rng) ? 1.0 : 0.0;
  for (double& v : c.toggles.key.data) v = on(rng) ? 1.0 : 0.0;
  c.features = random_normal({T, e.input_dim}, 1.0, rng);
  c.param_seed = rng();
  return c;
}

EquivalenceResult run_equivalence_suite(std::uint64_t seed, std::size_t cases, CaseScale scale) {
  EquivalenceResult result;
  for (std::size_t i = 0; i < cases; ++i) {
    const EquivalenceCase c = random_case(seed, i, scale);
    std::mt19937_64 rng(c.param_seed);
    const Encoder encoder(c.config, Encoder::init_params(c.config, rng));
    const std::size_t T = c.toggles.frames, B = c.config.blocks, H = c.config.heads;

    const Array dense = encoder.forward(c.features, c.toggles, c.window);
    StreamState state = encoder.start_stream(c.window);
    FlopLedger ledger = FlopLedger::zeros(B, H);
    double diff = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const auto row = c.features.row(t);
      const Array frame({c.config.input_dim}, std::vector<double>(row.begin(), row.end()));
      const Array y = encoder.stream_step(state, frame, FrameToggles::from(c.toggles, t), ledger);
      for (std::size_t j = 0; j < y.size(); ++j) {
        diff = std::max(diff, std::abs(y.data[j] - dense(t, j)));
      }
    }
    const FlopLedger analytic = toggled_flops(c.toggles, c.config, {}, c.window);
    const double expected = compute_loss(c.toggles, c.config, {}, c.window);

    ++result.cases;
    result.max_abs_diff = std::max(result.max_abs_diff, diff);
    char msg[160];
    if (!(diff <= 1e-8)) {
      std::snprintf(msg, sizeof msg, "case %zu: outputs differ by %.3g", i, diff);
      result.failures.emplace_back(msg);
    }
    if (!(ledger == analytic)) {
      ++result.ledger_mismatches;
      std::snprintf(msg, sizeof msg, "case %zu: streamed %llu MACs, analytic %llu", i,
                    static_cast<unsigned long long>(ledger.total()),
                    static_cast<unsigned long long>(analytic.total()));
      result.failures.emplace_back(msg);
    }
    if (expected != static_cast<double>(analytic.encoder_total())) {
      ++result.expected_mismatches;
      std::snprintf(msg, sizeof msg, "case %zu: compute_loss %.17g vs %llu", i, expected,
                    static_cast<unsigned long long>(analytic.encoder_total()));
      result.failures.emplace_back(msg);
    }
  }
  return result;
}

void write_equivalence_summary(std::ostream& out, const EquivalenceResult& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "cases: %zu\nmax |dense - stream|: %.3g\n", r.cases,
                r.max_abs_diff);
  out << buf;
  out << "ledger mismatches: " << r.ledger_mismatches << '\n';
  out << "compute_loss mismatches: " << r.expected_mismatches << '\n';
  for (const std::string& f : r.failures) out << "  " << f << '\n';
}

GradientCheckResult gradient_check(const ModelSpec& spec, const ParamStore& params,
                                   const Array& features, const std::vector<int>& labels,
                                   const SamplerSettings& sampler, double beta, double step,
                                   double floor) {
  const AmortizedModel model(spec, params);
  const double dense =
      static_cast<double>(dense_flops(spec.encoder, features.rows()).encoder_total());
  const auto loss = [&](const VarMap& p) {
    const TrainForward f = model.forward_train(p, features, sampler);
    return add(cross_entropy(f.logits, labels), scale(f.compute, beta / dense));
  };

  Tape tape;
  const VarMap vars = bind(tape, params, true);
  tape.backward(loss(vars));

  GradientCheckResult result;
  ParamStore probe = params;
  const auto eval = [&] {
    Tape t;
    return loss(bind(t, probe, false)).value().data[0];
  };
  for (auto& [name, value] : probe) {
    const Array& grad = vars.at(name).grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double keep = value.data[i];
      value.data[i] = keep + step;
      const double up = eval();
      value.data[i] = keep - step;
      const double down = eval();
      value.data[i] = keep;
      const double numeric = (up - down) / (2 * step);
      const double analytic = grad.data.empty() ? 0.0 : grad.data[i];
      const double err =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++result.entries;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace amt
