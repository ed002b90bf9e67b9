#include "amt/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

namespace amt {

EvalMode EvalMode::parse(const std::string& text, std::size_t default_window) {
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  EvalMode mode;
  mode.window = default_window;
  try {
    if (head == "amortized" && arg.empty()) {
      mode.kind = EvalKind::amortized;
    } else if (head == "full_causal" && arg.empty()) {
      mode.kind = EvalKind::full_causal;
    } else if (head == "sliding_window") {
      mode.kind = EvalKind::sliding_window;
      if (!arg.empty()) mode.window = std::stoul(arg);
    } else if (head == "random_toggling") {
      mode.kind = EvalKind::random_toggling;
      if (!arg.empty()) mode.rate = std::stod(arg);
      if (!(mode.rate >= 0.0 && mode.rate <= 1.0)) throw ContractError("rate outside [0,1]");
    } else {
      throw ContractError("unknown");
    }
  } catch (const std::exception&) {
    throw ContractError("unknown evaluation mode '" + text + "'");
  }
  return mode;
}

std::string EvalMode::name() const {
  char buf[64];
  switch (kind) {
    case EvalKind::amortized:
      return "amortized";
    case EvalKind::full_causal:
      return "full_causal";
    case EvalKind::sliding_window:
      std::snprintf(buf, sizeof buf, "sliding_window:%zu", window);
      return buf;
    case EvalKind::random_toggling:
      std::snprintf(buf, sizeof buf, "random_toggling:%.6f", rate);
      return buf;
  }
  return "?";
}

ToggleSet random_toggles(const ModelSpec& spec, std::size_t frames, double rate,
                         std::uint64_t seed, std::size_t utterance) {
  const std::size_t B = spec.encoder.blocks, BH = B * spec.encoder.heads;
  ToggleSet set = ToggleSet::ones(frames, B, spec.encoder.heads);
  set.hard = true;
  auto draw = [&](std::size_t t, std::size_t index) {
    const NoiseKey key{seed, 0, utterance, t, index};
    return keyed_uniform(key, 3) < rate ? 1.0 : 0.0;
  };
  for (std::size_t t = 0; t < frames; ++t) {
    if (spec.toggles.ff) {
      for (std::size_t b = 0; b < B; ++b) set.ff(t, b) = draw(t, b);
    }
    for (std::size_t i = 0; i < BH; ++i) {
      if (spec.toggles.query) set.query(t, i) = draw(t, B + i);
      if (spec.toggles.key) set.key(t, i) = draw(t, B + BH + i);
    }
  }
  return set;
}

namespace {

struct UttResult {
  FlopLedger ledger;
  FlopLedger dense;
  std::size_t errors = 0;
  std::size_t scored = 0;
  ToggleSet hard;
};

template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::size_t argmax_row(const Array& a, std::size_t r) {
  const auto row = a.row(r);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

double random_toggling_ccr(const ModelSpec& spec, const Dataset& data, double rate,
                           const EvalOptions& options) {
  FlopLedger dense = FlopLedger::zeros(spec.encoder.blocks, spec.encoder.heads);
  FlopLedger actual = dense;
  double per_utt = 0.0;
  for (std::size_t u = 0; u < data.size(); ++u) {
    const std::size_t T = data[u].frames();
    const FlopLedger d = dense_flops(spec.encoder, T, options.cost);
    const FlopLedger a =
        toggled_flops(random_toggles(spec, T, rate, options.seed, u), spec.encoder, options.cost);
    dense += d;
    actual += a;
    per_utt += ccr(d, a, options.cost.include_overhead);
  }
  if (options.pool_ccr) return ccr(dense, actual, options.cost.include_overhead);
  return data.empty() ? 0.0 : per_utt / static_cast<double>(data.size());
}

double match_random_rate(const ModelSpec& spec, const Dataset& data, double target_ccr,
                         const EvalOptions& options, double tolerance) {
  // CCR falls monotonically as the on-rate rises because the draws are keyed.
  double lo = 0.0, hi = 1.0;
  double best = 1.0, best_gap = std::abs(random_toggling_ccr(spec, data, 1.0, options) - target_ccr);
  for (int iter = 0; iter < 40 && best_gap > tolerance; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double c = random_toggling_ccr(spec, data, mid, options);
    if (std::abs(c - target_ccr) < best_gap) {
      best = mid;
      best_gap = std::abs(c - target_ccr);
    }
    if (c > target_ccr) lo = mid;
    else hi = mid;
  }
  return best;
}

EvalReport evaluate(const AmortizedModel& model, const Dataset& data, const EvalMode& mode,
                    const EvalOptions& options) {
  const ModelSpec& spec = model.spec();
  const std::size_t B = spec.encoder.blocks, H = spec.encoder.heads;
  if (mode.kind == EvalKind::sliding_window && mode.window == 0) {
    throw ContractError("sliding window must admit at least one previous frame");
  }
  std::vector<UttResult> results(data.size());
  parallel_for(data.size(), options.threads, [&](std::size_t u) {
    const Utterance& utt = data[u];
    const std::size_t T = utt.frames();
    StreamOutput out;
    switch (mode.kind) {
      case EvalKind::amortized:
        out = model.stream(utt.features);
        break;
      case EvalKind::full_causal: {
        ToggleSet ones = ToggleSet::ones(T, B, H);
        ones.hard = true;
        out = model.stream(utt.features, &ones);
        break;
      }
      case EvalKind::sliding_window: {
        ToggleSet ones = ToggleSet::ones(T, B, H);
        ones.hard = true;
        out = model.stream(utt.features, &ones, mode.window);
        break;
      }
      case EvalKind::random_toggling: {
        const ToggleSet forced = random_toggles(spec, T, mode.rate, options.seed, u);
        out = model.stream(utt.features, &forced);
        break;
      }
    }
    UttResult& r = results[u];
    r.ledger = out.ledger;
    r.dense = dense_flops(spec.encoder, T, options.cost);
    r.hard = std::move(out.hard);
    for (std::size_t t = 0; t < T; ++t) {
      if (utt.labels[t] == kBlankLabel) continue;
      ++r.scored;
      if (argmax_row(out.logits, t) != static_cast<std::size_t>(utt.labels[t])) ++r.errors;
    }
  });

  EvalReport report;
  report.mode = mode.name();
  report.utterances = data.size();
  report.ledger = FlopLedger::zeros(B, H);
  report.dense = FlopLedger::zeros(B, H);
  std::size_t errors = 0;
  double per_utt_ccr = 0.0;
  double on_ff = 0.0, on_q = 0.0, on_k = 0.0;
  double silence_sum = 0.0, silence_n = 0.0, active_sum = 0.0, active_n = 0.0;
  const bool any_kind = spec.toggles.ff || spec.toggles.query || spec.toggles.key;
  for (std::size_t u = 0; u < data.size(); ++u) {
    const UttResult& r = results[u];
    report.ledger += r.ledger;
    report.dense += r.dense;
    report.frames += data[u].frames();
    report.scored_frames += r.scored;
    errors += r.errors;
    per_utt_ccr += ccr(r.dense, r.ledger, options.cost.include_overhead);
    for (std::size_t t = 0; t < data[u].frames(); ++t) {
      double sum = 0.0, n = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        on_ff += r.hard.ff(t, b);
        if (spec.toggles.ff || !any_kind) sum += r.hard.ff(t, b), n += 1.0;
      }
      for (std::size_t i = 0; i < B * H; ++i) {
        on_q += r.hard.query(t, i);
        on_k += r.hard.key(t, i);
        if (spec.toggles.query || !any_kind) sum += r.hard.query(t, i), n += 1.0;
        if (spec.toggles.key || !any_kind) sum += r.hard.key(t, i), n += 1.0;
      }
      if (data[u].labels[t] == kBlankLabel) silence_sum += sum, silence_n += n;
      else active_sum += sum, active_n += n;
    }
  }
  const double frames = static_cast<double>(report.frames);
  report.frame_error_rate = ratio(static_cast<double>(errors), static_cast<double>(report.scored_frames));
  if (options.pool_ccr) {
    report.ccr = data.empty() ? 0.0 : ccr(report.dense, report.ledger, options.cost.include_overhead);
  } else {
    report.ccr = ratio(per_utt_ccr, static_cast<double>(data.size()));
  }
  report.on_rate = {ratio(on_ff, frames * B), ratio(on_q, frames * B * H),
                    ratio(on_k, frames * B * H)};
  report.silence_on_rate = ratio(silence_sum, silence_n);
  report.active_on_rate = ratio(active_sum, active_n);
  return report;
}

void write_report_table(std::ostream& out, const EvalReport& r) {
  char buf[128];
  out << "mode: " << r.mode << '\n';
  out << "frame error rate is measured over non-blank frames (WER proxy, not WER)\n";
  std::snprintf(buf, sizeof buf, "  %-26s %zu\n", "utterances", r.utterances);
  out << buf;
  std::snprintf(buf, sizeof buf, "  %-26s %zu (%zu non-blank)\n", "frames", r.frames,
                r.scored_frames);
  out << buf;
  const std::pair<const char*, double> rows[] = {
      {"frame_error_rate", r.frame_error_rate}, {"ccr", r.ccr},
      {"on_rate.ff", r.on_rate.ff},             {"on_rate.query", r.on_rate.query},
      {"on_rate.key", r.on_rate.key},           {"silence_on_rate", r.silence_on_rate},
      {"active_on_rate", r.active_on_rate},
  };
  for (const auto& [label, value] : rows) {
    std::snprintf(buf, sizeof buf, "  %-26s %.4f\n", label, value);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "  %-26s %llu\n", "encoder_macs",
                static_cast<unsigned long long>(r.ledger.encoder_total()));
  out << buf;
  std::snprintf(buf, sizeof buf, "  %-26s %llu\n", "dense_encoder_macs",
                static_cast<unsigned long long>(r.dense.encoder_total()));
  out << buf;
  std::snprintf(buf, sizeof buf, "  %-26s %llu\n", "total_macs",
                static_cast<unsigned long long>(r.ledger.total()));
  out << buf;
}

void write_report_csv(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << "mode,utterances,frames,nonblank_frames,frame_error_rate,ccr,on_rate_ff,on_rate_query,"
         "on_rate_key,silence_on_rate,active_on_rate,encoder_macs,dense_encoder_macs,total_macs\n";
  char buf[512];
  for (const EvalReport& r : reports) {
    std::snprintf(buf, sizeof buf,
                  "%s,%zu,%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%llu,%llu,%llu\n",
                  r.mode.c_str(), r.utterances, r.frames, r.scored_frames, r.frame_error_rate,
                  r.ccr, r.on_rate.ff, r.on_rate.query, r.on_rate.key, r.silence_on_rate,
                  r.active_on_rate, static_cast<unsigned long long>(r.ledger.encoder_total()),
                  static_cast<unsigned long long>(r.dense.encoder_total()),
                  static_cast<unsigned long long>(r.ledger.total()));
    out << buf;
  }
}

namespace {

void write_cell(std::ostream& out, double v, bool first) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%.9g", first ? "" : ",", v);
  out << buf;
}

}  // namespace

void write_mha_csv(std::ostream& out, const ToggleSet& s) {
  const std::size_t BH = s.blocks * s.heads;
  for (const char* kind : {"q", "k"}) {
    for (std::size_t b = 0; b < s.blocks; ++b) {
      for (std::size_t h = 0; h < s.heads; ++h) {
        out << (kind[0] == 'q' && b == 0 && h == 0 ? "" : ",") << kind << "_b" << b << "_h" << h;
      }
    }
  }
  out << '\n';
  for (std::size_t t = 0; t < s.frames; ++t) {
    for (std::size_t i = 0; i < BH; ++i) write_cell(out, s.query(t, i), i == 0);
    for (std::size_t i = 0; i < BH; ++i) write_cell(out, s.key(t, i), false);
    out << '\n';
  }
}

void write_ff_csv(std::ostream& out, const ToggleSet& s) {
  for (std::size_t b = 0; b < s.blocks; ++b) out << (b == 0 ? "" : ",") << "ff_b" << b;
  out << '\n';
  for (std::size_t t = 0; t < s.frames; ++t) {
    for (std::size_t b = 0; b < s.blocks; ++b) write_cell(out, s.ff(t, b), b == 0);
    out << '\n';
  }
}

HeatmapFiles export_heatmap(const AmortizedModel& model, const Utterance& utterance,
                            const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  const StreamOutput out = model.stream(utterance.features);
  HeatmapFiles files{dir / (stem + "_mha_soft.csv"), dir / (stem + "_mha_hard.csv"),
                     dir / (stem + "_ff_soft.csv"), dir / (stem + "_ff_hard.csv")};
  auto write = [](const std::filesystem::path& path, auto fn, const ToggleSet& s) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    fn(f, s);
  };
  write(files.mha_soft, write_mha_csv, out.soft);
  write(files.mha_hard, write_mha_csv, out.hard);
  write(files.ff_soft, write_ff_csv, out.soft);
  write(files.ff_hard, write_ff_csv, out.hard);
  return files;
}

}  // namespace amt
