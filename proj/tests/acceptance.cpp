// Acceptance checks. Each criterion prints one "PASS cN ..." or "FAIL cN ..."
// line. Usage: acceptance [cN ...] [--config-dir DIR]; no criteria runs all.

#include <algorithm>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "amt/check.hpp"
#include "amt/checkpoint.hpp"
#include "amt/config.hpp"
#include "amt/cost.hpp"
#include "amt/evaluate.hpp"
#include "amt/train.hpp"

#ifndef AMT_CONFIG_DIR
#define AMT_CONFIG_DIR "configs"
#endif

using namespace amt;

namespace {

std::string config_dir = AMT_CONFIG_DIR;

bool report(const char* id, bool ok, const std::string& detail) {
  std::printf("%s %s %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  return ok;
}

std::string fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

ExperimentConfig load(const std::string& name) {
  return ExperimentConfig::from(KeyValueConfig::load(config_dir + "/" + name));
}

bool within(double value, double target, double tolerance) {
  return std::abs(value / target - 1.0) <= tolerance;
}

bool c1() {
  const EquivalenceResult r = run_equivalence_suite(101, 100, CaseScale::desk);
  return report("c1", r.cases >= 100 && r.outputs_match(1e-8),
                fmt("sparse stream vs masked dense: %zu desk-scale cases, max |diff| %.3g (limit 1e-8)",
                    r.cases, r.max_abs_diff));
}

bool c2() {
  const EquivalenceResult r = run_equivalence_suite(101, 100, CaseScale::desk);
  return report("c2", r.cases >= 100 && r.ledgers_match(),
                fmt("ledger honesty: %zu cases, %zu stream/analytic mismatches, %zu expected-cost "
                    "mismatches",
                    r.cases, r.ledger_mismatches, r.expected_mismatches));
}

bool c3() {
  const ExperimentConfig full = load("fullsize.cfg");
  const EncoderConfig& e = full.encoder;
  const FlopLedger frame = dense_flops(e, 1, full.cost);
  const double per_frame = static_cast<double>(frame.total());
  const double enc_params = static_cast<double>(Encoder::param_count(e));
  struct Row {
    const char* name;
    ArbitratorKind kind;
    ArbitratorLayout layout;
    double target;
  };
  const Row rows[] = {{"ff-single", ArbitratorKind::feedforward, ArbitratorLayout::single, 0.08e6},
                      {"ff-dual", ArbitratorKind::feedforward, ArbitratorLayout::dual, 0.16e6},
                      {"rnn-single", ArbitratorKind::recurrent, ArbitratorLayout::single, 0.5e6},
                      {"rnn-dual", ArbitratorKind::recurrent, ArbitratorLayout::dual, 1.0e6}};
  bool ok = within(per_frame, 34e6, 0.15) && within(enc_params, 35e6, 0.15);
  std::string detail = fmt("per-frame dense MACs %.3fM (target 34M +-15%%: %s), encoder params %.3fM "
                           "(target 35M +-15%%: %s)",
                           per_frame / 1e6, within(per_frame, 34e6, 0.15) ? "ok" : "out",
                           enc_params / 1e6, within(enc_params, 35e6, 0.15) ? "ok" : "out");
  for (const Row& r : rows) {
    const ArbitratorConfig a = ArbitratorConfig::reference(r.kind, r.layout);
    const double n = static_cast<double>(
        Arbitrator::param_count(a, e.blocks, e.heads, e.input_dim, e.d));
    const bool hit = within(n, r.target, 0.15);
    ok = ok && hit;
    detail += fmt(", %s %.3fM (target %.2fM: %s)", r.name, n / 1e6, r.target / 1e6, hit ? "ok" : "out");
  }
  return report("c3", ok, detail);
}

bool c4() {
  ModelSpec spec;
  spec.encoder.input_dim = 5;
  spec.encoder.d = 8;
  spec.encoder.heads = 2;
  spec.encoder.blocks = 2;
  spec.encoder.ff_dim = 16;
  spec.encoder.output_dim = 3;
  spec.encoder.max_len = 8;
  spec.arbitrator.hidden = 4;
  spec.arbitrator.split_block = 1;
  spec.arbitrator.bias_init = 0.5;
  std::mt19937_64 rng(4);
  Array features({4, 5});
  for (double& v : features.data) v = std::normal_distribution<double>(0.0, 1.0)(rng);
  const std::vector<int> labels = {0, 2, 1, 2};
  SamplerSettings sampler;
  sampler.tau = 0.8;
  sampler.lambda = 1.0;
  sampler.noise = NoiseKey{4, 0, 0, 0, 0};

  double worst = 0.0;
  std::size_t entries = 0;
  std::string where;
  for (auto kind : {ArbitratorKind::feedforward, ArbitratorKind::recurrent}) {
    for (auto layout : {ArbitratorLayout::single, ArbitratorLayout::dual}) {
      spec.arbitrator.kind = kind;
      spec.arbitrator.layout = layout;
      const GradientCheckResult r = gradient_check(
          spec, AmortizedModel::init_params(spec, 4), features, labels, sampler, 0.5, 1e-5);
      entries += r.entries;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        where = to_string(kind) + "/" + to_string(layout) + " " + r.worst;
      }
    }
  }
  return report("c4", worst <= 1e-3,
                fmt("full-loss gradients vs central differences (step 1e-5), %zu parameter entries "
                    "over 4 arbitrator variants, max relative error %.3g at %s (limit 1e-3)",
                    entries, worst, where.c_str()));
}

bool c5() {
  EncoderConfig e = ExperimentConfig::desk().encoder;
  const std::size_t T = 64;
  const CostParams cost;
  const std::uint64_t cell = cost.cell_cost(e);
  const std::uint64_t proj2 = 2 * e.d * e.head_dim();
  const std::uint64_t dense = dense_flops(e, T, cost).total();
  auto ones = [&] {
    ToggleSet s = ToggleSet::ones(T, e.blocks, e.heads);
    s.hard = true;
    return s;
  };
  bool monotone = true, exact = true;
  std::uint64_t prev_q = 0, prev_k = ~std::uint64_t{0};
  for (std::size_t t = 0; t < T; ++t) {
    ToggleSet q = ones(), k = ones();
    q.query(t, 5) = 0.0;
    k.key(t, 5) = 0.0;
    const std::uint64_t save_q = dense - toggled_flops(q, e, cost).total();
    const std::uint64_t save_k = dense - toggled_flops(k, e, cost).total();
    monotone = monotone && save_q >= prev_q && save_k <= prev_k;
    // Query: its own row of t + 1 cells. Key: T - 1 - t future cells plus the self cell.
    exact = exact && save_q == proj2 + (t + 1) * cell &&
            save_k == proj2 + ((T - 1 - t) + 1) * cell;
    prev_q = save_q;
    prev_k = save_k;
  }
  ToggleSet first = ones(), last = ones();
  first.key(0, 0) = 0.0;
  last.key(T - 1, 0) = 0.0;
  const std::uint64_t spread = toggled_flops(last, e, cost).total() - toggled_flops(first, e, cost).total();
  const bool endpoints = spread == (T - 1) * cell;
  return report("c5", monotone && exact && endpoints,
                fmt("T=64: query savings non-decreasing and key savings non-increasing in t: %s; "
                    "deltas 2d^2/H + (t+1) cells (query) and 2d^2/H + (T-1-t) future + 1 self cell "
                    "(key): %s; key t=0 minus t=T-1 = (T-1) cells: %s",
                    monotone ? "yes" : "no", exact ? "yes" : "no", endpoints ? "yes" : "no"));
}

bool c6() {
  const EncoderConfig e = ExperimentConfig::desk().encoder;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ToggleSet probs = ToggleSet::filled(60, e.blocks, e.heads, 0.5);
  for (Array* a : {&probs.ff, &probs.query, &probs.key})
    for (double& v : a->data) v = u(rng);
  const double expected = compute_loss(probs, e);
  const int draws = 10000;
  double total = 0.0;
  ToggleSet s = probs;
  s.hard = true;
  for (int i = 0; i < draws; ++i) {
    for (int k = 0; k < 3; ++k) {
      const Array& p = k == 0 ? probs.ff : k == 1 ? probs.query : probs.key;
      Array& h = k == 0 ? s.ff : k == 1 ? s.query : s.key;
      for (std::size_t j = 0; j < p.size(); ++j) h.data[j] = u(rng) < p.data[j] ? 1.0 : 0.0;
    }
    total += static_cast<double>(toggled_flops(s, e).encoder_total());
  }
  const double mean = total / draws;
  const double rel = std::abs(mean / expected - 1.0);
  return report("c6", rel <= 0.01,
                fmt("expected cost %.6g vs mean of %d Bernoulli hardenings %.6g, relative gap %.3g "
                    "(limit 0.01)",
                    expected, draws, mean, rel));
}

struct TrendRun {
  double fer = 0.0, ccr = 0.0, silence = 0.0, active = 0.0;
};

bool c7() {
  const ExperimentConfig base = load("trend.cfg");
  const std::vector<double> betas = {0.0, 0.1, 0.15};
  const std::size_t operating = 2;  // index into betas used for (a), (c), (d)
  const std::vector<std::uint64_t> seeds = {1, 2, 3};

  std::vector<TrendRun> mean(betas.size());
  TrendRun random_mean;
  for (std::uint64_t seed : seeds) {
    ExperimentConfig cfg = base;
    cfg.seed = seed;
    const Dataset train_set = gen_synthetic(cfg.data, seed, 0, cfg.data.n_train);
    const Dataset test_set = gen_synthetic(cfg.data, seed, 1, cfg.data.n_test);
    ExperimentConfig pre_cfg = cfg;
    pre_cfg.schedule.finetune_epochs = 0;
    pre_cfg.schedule.settle_epochs = 0;
    const TrainResult pre = train(pre_cfg, train_set);
    EvalOptions options;
    options.cost = cfg.cost;
    options.seed = seed;
    for (std::size_t i = 0; i < betas.size(); ++i) {
      ExperimentConfig ft = cfg;
      ft.schedule.beta_start = betas[i];
      ft.schedule.beta_end = betas[i];
      TrainOptions opts;
      opts.initial = &pre.params;
      opts.start_epoch = cfg.schedule.pretrain_epochs;
      const TrainResult tuned = train(ft, train_set, opts);
      const AmortizedModel model(ModelSpec::from(ft), tuned.params);
      const EvalReport r = evaluate(model, test_set, EvalMode{}, options);
      std::printf("  seed %llu beta %.3g: FER %.4f CCR %.4f on-rate silence %.3f active %.3f\n",
                  static_cast<unsigned long long>(seed), betas[i], r.frame_error_rate, r.ccr,
                  r.silence_on_rate, r.active_on_rate);
      mean[i].fer += r.frame_error_rate / seeds.size();
      mean[i].ccr += r.ccr / seeds.size();
      mean[i].silence += r.silence_on_rate / seeds.size();
      mean[i].active += r.active_on_rate / seeds.size();
      if (i == operating) {
        EvalMode random{EvalKind::random_toggling, 10,
                        match_random_rate(model.spec(), test_set, r.ccr, options)};
        const EvalReport rr = evaluate(model, test_set, random, options);
        std::printf("  seed %llu random toggling at rate %.3f: FER %.4f CCR %.4f\n",
                    static_cast<unsigned long long>(seed), random.rate, rr.frame_error_rate, rr.ccr);
        random_mean.fer += rr.frame_error_rate / seeds.size();
        random_mean.ccr += rr.ccr / seeds.size();
      }
      std::fflush(stdout);
    }
  }
  const TrendRun& op = mean[operating];
  const double increase = op.fer / mean[0].fer - 1.0;
  const bool a = op.ccr >= 0.30 && increase <= 0.25;
  bool b = true;
  for (std::size_t i = 1; i < betas.size(); ++i) b = b && mean[i].ccr >= mean[i - 1].ccr;
  const bool c = random_mean.fer > op.fer;
  const bool d = op.silence < op.active;
  std::string ccrs;
  for (std::size_t i = 0; i < betas.size(); ++i)
    ccrs += fmt("%s%.4f", i ? " <= " : "", mean[i].ccr);
  return report(
      "c7", a && b && c && d,
      fmt("means over %zu seeds at beta %.3g: (a) CCR %.4f, FER %.4f vs beta=0 %.4f (%+.1f%%): %s; "
          "(b) CCR across betas %s: %s; (c) random toggling at CCR %.4f has FER %.4f > %.4f: %s; "
          "(d) on-rate silence %.3f < active %.3f: %s",
          seeds.size(), betas[operating], op.ccr, op.fer, mean[0].fer, 100 * increase,
          a ? "ok" : "no", ccrs.c_str(), b ? "ok" : "no", random_mean.ccr, random_mean.fer, op.fer,
          c ? "ok" : "no", op.silence, op.active, d ? "ok" : "no"));
}

bool c8() {
  ExperimentConfig cfg = load("trend.cfg");
  cfg.seed = 7;
  cfg.data.n_train = 40;
  cfg.schedule.pretrain_epochs = 2;
  cfg.schedule.finetune_epochs = 2;
  cfg.schedule.settle_epochs = 1;
  cfg.schedule.beta_start = cfg.schedule.beta_end = 0.2;
  const Dataset data = gen_synthetic(cfg.data, cfg.seed, 0, cfg.data.n_train);
  auto run = [&] {
    const TrainResult r = train(cfg, data);
    std::ostringstream log;
    write_train_log(log, r.log);
    return std::make_pair(encode_checkpoint(r.params), log.str());
  };
  const auto first = run(), second = run();
  const bool same_ckpt = first.first == second.first;
  const bool same_log = first.second == second.second;
  return report("c8", same_ckpt && same_log,
                fmt("two training runs (seed 7, 5 epochs incl. annealed fine-tuning): checkpoint "
                    "%zu bytes %s, log %zu bytes %s",
                    first.first.size(), same_ckpt ? "identical" : "DIFFER", first.second.size(),
                    same_log ? "identical" : "DIFFER"));
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<std::string, std::function<bool()>> checks = {
      {"c1", c1}, {"c2", c2}, {"c3", c3}, {"c4", c4},
      {"c5", c5}, {"c6", c6}, {"c7", c7}, {"c8", c8}};
  std::vector<std::string> wanted;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config-dir" && i + 1 < argc) {
      config_dir = argv[++i];
    } else if (checks.count(arg)) {
      wanted.push_back(arg);
    } else {
      std::fprintf(stderr, "usage: acceptance [c1..c8 ...] [--config-dir DIR]\n");
      return 2;
    }
  }
  if (wanted.empty())
    for (const auto& [id, fn] : checks) wanted.push_back(id);
  bool ok = true;
  for (const std::string& id : wanted) {
    try {
      ok = checks.at(id)() && ok;
    } catch (const std::exception& e) {
      report(id.c_str(), false, std::string("threw: ") + e.what());
      ok = false;
    }
  }
  return ok ? 0 : 1;
}
