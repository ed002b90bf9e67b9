#include "amt/model.hpp"

#include <random>

namespace amt {

namespace {

// Keeps noise indices of the two dual groups disjoint.
constexpr std::uint64_t kGroupStride = 1u << 20;

}  // namespace

AmortizedModel::AmortizedModel(ModelSpec spec, const ParamStore& params)
    : spec_(std::move(spec)),
      encoder_(spec_.encoder, params.with_prefix("enc/")),
      arbitrator_(spec_.arbitrator, spec_.encoder.blocks, spec_.encoder.heads,
                  spec_.encoder.input_dim, spec_.encoder.d, params.with_prefix("arb/")) {}

ParamStore AmortizedModel::init_params(const ModelSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore params = Encoder::init_params(spec.encoder, rng);
  params.merge(Arbitrator::init_params(spec.arbitrator, spec.encoder.blocks, spec.encoder.heads,
                                       spec.encoder.input_dim, spec.encoder.d, rng));
  return params;
}

ParamStore AmortizedModel::params() const {
  ParamStore all = encoder_.params();
  all.merge(arbitrator_.params());
  return all;
}

TrainForward AmortizedModel::forward_train(const VarMap& p, const Array& features,
                                           const SamplerSettings& sampler,
                                           const CostParams& cost) const {
  if (p.empty()) throw ContractError("no parameters bound");
  Tape& tape = *p.begin()->second.tape;
  const std::size_t T = features.rows(), H = spec_.encoder.heads;
  Var inputs = tape.constant(features);
  Var x = encoder_.embed(p, inputs);

  std::vector<Var> ff_parts, q_parts, k_parts, pf_parts, pq_parts, pk_parts;
  for (std::size_t g = 0; g < arbitrator_.groups(); ++g) {
    const std::size_t begin = arbitrator_.group_begin(g), end = arbitrator_.group_end(g);
    const std::size_t n = end - begin, nh = n * H;
    Var probs = arbitrator_.forward(p, g, g == 0 ? inputs : x);
    Var sample = probs;
    if (sampler.lambda > 0.0) {
      Array noise = Array::matrix(T, probs.cols());
      NoiseKey key = sampler.noise;
      for (std::size_t t = 0; t < T; ++t) {
        key.frame = t;
        for (std::size_t i = 0; i < probs.cols(); ++i) {
          key.index = g * kGroupStride + i;
          noise(t, i) = logistic_noise(key);
        }
      }
      sample = blend(probs, gumbel_sigmoid(probs, noise, sampler.tau), sampler.lambda);
    }
    if (sampler.straight_through) sample = straight_through(sample);

    auto pick = [&](Var v, bool enabled, std::size_t c0, std::size_t c1) {
      return enabled ? slice_cols(v, c0, c1) : tape.constant(Array::matrix(T, c1 - c0, 1.0));
    };
    const ToggleKinds& kinds = spec_.toggles;
    Var ff = pick(sample, kinds.ff, 0, n);
    Var q = pick(sample, kinds.query, n, n + nh);
    Var k = pick(sample, kinds.key, n + nh, n + 2 * nh);
    pf_parts.push_back(pick(probs, kinds.ff, 0, n));
    pq_parts.push_back(pick(probs, kinds.query, n, n + nh));
    pk_parts.push_back(pick(probs, kinds.key, n + nh, n + 2 * nh));

    for (std::size_t b = begin; b < end; ++b) {
      const std::size_t local = b - begin;
      BlockToggles bt{slice_cols(ff, local, local + 1), slice_cols(q, local * H, (local + 1) * H),
                      slice_cols(k, local * H, (local + 1) * H)};
      x = encoder_.block(p, b, x, bt);
    }
    ff_parts.push_back(ff);
    q_parts.push_back(q);
    k_parts.push_back(k);
  }

  TrainForward out;
  out.logits = encoder_.project_output(p, x);
  out.toggles = {concat_cols(ff_parts), concat_cols(q_parts), concat_cols(k_parts)};
  out.probabilities = {concat_cols(pf_parts), concat_cols(pq_parts), concat_cols(pk_parts)};
  out.compute = compute_loss(out.toggles.ff, out.toggles.query, out.toggles.key, spec_.encoder,
                             cost);
  return out;
}

StreamOutput AmortizedModel::stream(const Array& features, const ToggleSet* forced,
                                    std::size_t window) const {
  const EncoderConfig& ec = spec_.encoder;
  const std::size_t T = features.rows(), B = ec.blocks, H = ec.heads;
  if (features.cols() != ec.input_dim) throw DimensionError("feature width != input_dim");
  if (forced != nullptr) {
    forced->validate(ec);
    if (forced->frames != T) throw ContractError("forced toggles cover a different length");
    if (!forced->all_binary()) throw ContractError("forced toggles must be hard");
  }

  StreamOutput out;
  out.logits = Array::matrix(T, ec.output_dim);
  out.soft = ToggleSet::filled(T, B, H, 1.0);
  out.soft.hard = false;
  out.hard = ToggleSet::ones(T, B, H);
  out.ledger = FlopLedger::zeros(B, H);

  StreamState state = encoder_.start_stream(window);
  ArbitratorState arb_state = arbitrator_.start();
  const std::size_t groups = forced != nullptr ? 1 : arbitrator_.groups();
  const ToggleKinds& kinds = spec_.toggles;

  for (std::size_t t = 0; t < T; ++t) {
    const auto row = features.row(t);
    const Array frame({ec.input_dim}, std::vector<double>(row.begin(), row.end()));
    Array x = encoder_.stream_embed(state, frame, out.ledger);
    FrameToggles toggles =
        forced != nullptr ? FrameToggles::from(*forced, t) : FrameToggles::ones(B, H);
    FrameToggles soft = toggles;

    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t begin = forced != nullptr ? 0 : arbitrator_.group_begin(g);
      const std::size_t end = forced != nullptr ? B : arbitrator_.group_end(g);
      if (forced == nullptr) {
        Decision d = arbitrator_.decide(g, g == 0 ? frame : x, arb_state, &out.ledger.arbitrator);
        if (!kinds.ff) std::fill(d.ff.begin(), d.ff.end(), 1.0);
        if (!kinds.query) std::fill(d.query.begin(), d.query.end(), 1.0);
        if (!kinds.key) std::fill(d.key.begin(), d.key.end(), 1.0);
        const FrameToggles hard = harden(d);
        for (std::size_t i = 0; i < d.blocks; ++i) {
          toggles.ff[begin + i] = hard.ff[i];
          soft.ff[begin + i] = d.ff[i];
        }
        for (std::size_t i = 0; i < d.blocks * H; ++i) {
          toggles.query[begin * H + i] = hard.query[i];
          toggles.key[begin * H + i] = hard.key[i];
          soft.query[begin * H + i] = d.query[i];
          soft.key[begin * H + i] = d.key[i];
        }
      }
      for (std::size_t b = begin; b < end; ++b) {
        x = encoder_.stream_block(state, b, x, toggles, out.ledger);
      }
    }

    const Array y = encoder_.stream_output(x, out.ledger);
    std::copy(y.data.begin(), y.data.end(), out.logits.row(t).begin());
    for (std::size_t b = 0; b < B; ++b) {
      out.hard.ff(t, b) = toggles.ff[b];
      out.soft.ff(t, b) = soft.ff[b];
    }
    for (std::size_t i = 0; i < B * H; ++i) {
      out.hard.query(t, i) = toggles.query[i];
      out.hard.key(t, i) = toggles.key[i];
      out.soft.query(t, i) = soft.query[i];
      out.soft.key(t, i) = soft.key[i];
    }
    encoder_.finish_frame(state);
  }
  return out;
}

}  // namespace amt
