#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "amt/cost.hpp"
#include "amt/model.hpp"
#include "amt/synthetic.hpp"

namespace amt {

enum class EvalKind { amortized, full_causal, sliding_window, random_toggling };

struct EvalMode {
  EvalKind kind = EvalKind::amortized;
  std::size_t window = 10;  // sliding_window only
  double rate = 1.0;        // random_toggling: probability that a toggle is on

  /// "amortized", "full_causal", "sliding_window[:w]", "random_toggling[:rate]".
  static EvalMode parse(const std::string& text, std::size_t default_window = 10);
  std::string name() const;
};

struct EvalOptions {
  CostParams cost;
  bool pool_ccr = true;
  std::uint64_t seed = 1;  // random_toggling draws
  std::size_t threads = 0;  // 0 = hardware concurrency
};

struct ToggleRates {
  double ff = 0.0;
  double query = 0.0;
  double key = 0.0;
};

struct EvalReport {
  std::string mode;
  std::size_t utterances = 0;
  std::size_t frames = 0;
  std::size_t scored_frames = 0;  // non-blank frames
  /// Frame error rate over non-blank frames. A proxy for WER, not WER.
  double frame_error_rate = 0.0;
  double ccr = 0.0;
  ToggleRates on_rate;
  /// Mean hard toggle value over the enabled toggle kinds.
  double silence_on_rate = 0.0;
  double active_on_rate = 0.0;
  FlopLedger ledger;  // executed, pooled over the dataset
  FlopLedger dense;   // full causal reference, pooled
};

EvalReport evaluate(const AmortizedModel& model, const Dataset& data, const EvalMode& mode,
                    const EvalOptions& options = {});

/// Hard toggles drawn for random_toggling; disabled kinds stay on.
ToggleSet random_toggles(const ModelSpec& spec, std::size_t frames, double rate,
                         std::uint64_t seed, std::size_t utterance);

/// CCR of random_toggling at `rate`, computed analytically.
double random_toggling_ccr(const ModelSpec& spec, const Dataset& data, double rate,
                           const EvalOptions& options = {});

/// Bisects the on-rate so the random baseline's CCR is within `tolerance`
/// of `target` (or as close as the bracket allows).
double match_random_rate(const ModelSpec& spec, const Dataset& data, double target_ccr,
                         const EvalOptions& options = {}, double tolerance = 0.02);

void write_report_table(std::ostream& out, const EvalReport& report);
void write_report_csv(std::ostream& out, const std::vector<EvalReport>& reports);

struct HeatmapFiles {
  std::filesystem::path mha_soft, mha_hard, ff_soft, ff_hard;
};

/// MHA map: T rows x 2BH columns (query then key, block-major, head-minor).
/// FF map: T rows x B columns. Each file starts with a header row.
HeatmapFiles export_heatmap(const AmortizedModel& model, const Utterance& utterance,
                            const std::filesystem::path& dir, const std::string& stem);

void write_mha_csv(std::ostream& out, const ToggleSet& toggles);
void write_ff_csv(std::ostream& out, const ToggleSet& toggles);

}  // namespace amt
