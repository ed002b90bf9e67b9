#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "amt/evaluate.hpp"

using namespace amt;

namespace {

ExperimentConfig small() {
  ExperimentConfig c;
  c.seed = 9;
  c.encoder.input_dim = 5;
  c.encoder.d = 8;
  c.encoder.heads = 2;
  c.encoder.blocks = 2;
  c.encoder.ff_dim = 8;
  c.encoder.output_dim = 4;
  c.encoder.max_len = 64;
  c.arbitrator.hidden = 4;
  c.arbitrator.bias_init = 0.0;
  c.data.n_classes = 4;
  c.data.frame_dim = 5;
  c.data.utt_min = 12;
  c.data.utt_max = 30;
  return c;
}

struct Fixture {
  ExperimentConfig config = small();
  ModelSpec spec = ModelSpec::from(config);
  AmortizedModel model{spec, AmortizedModel::init_params(spec, 1)};
  Dataset data = gen_synthetic(config.data, config.seed, 1, 6);
};

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("mode names parse and print") {
  CHECK(EvalMode::parse("amortized").kind == EvalKind::amortized);
  CHECK(EvalMode::parse("full_causal").name() == "full_causal");
  CHECK(EvalMode::parse("sliding_window").window == 10);
  CHECK(EvalMode::parse("sliding_window", 4).window == 4);
  CHECK(EvalMode::parse("sliding_window:7").window == 7);
  CHECK(EvalMode::parse("random_toggling:0.25").rate == 0.25);
  CHECK_THROWS_AS(EvalMode::parse("dense"), ContractError);
  CHECK_THROWS_AS(EvalMode::parse("random_toggling:1.5"), ContractError);
  CHECK_THROWS_AS(EvalMode::parse("sliding_window:x"), ContractError);
}

TEST_CASE("full causal evaluation has zero reduction and every toggle on") {
  Fixture f;
  const EvalReport r = evaluate(f.model, f.data, EvalMode::parse("full_causal"));
  CHECK(r.ccr == 0.0);
  CHECK(r.on_rate.query == 1.0);
  CHECK(r.ledger.blocks == r.dense.blocks);
  CHECK(r.utterances == 6);
  std::size_t frames = 0, scored = 0;
  for (const Utterance& u : f.data) {
    frames += u.frames();
    for (int l : u.labels) scored += l != kBlankLabel ? 1 : 0;
  }
  CHECK(r.frames == frames);
  CHECK(r.scored_frames == scored);
  CHECK(r.frame_error_rate >= 0.0);
  CHECK(r.frame_error_rate <= 1.0);
}

TEST_CASE("reported reduction is recomputed from the pooled ledgers") {
  Fixture f;
  for (const char* mode : {"amortized", "sliding_window:3", "random_toggling:0.4"}) {
    const EvalReport r = evaluate(f.model, f.data, EvalMode::parse(mode));
    CHECK(r.ccr == doctest::Approx(ccr(r.dense, r.ledger)).epsilon(1e-12));
  }
}

TEST_CASE("sliding window reduction matches the closed form") {
  Fixture f;
  const std::size_t w = 4;
  const EvalReport r = evaluate(f.model, f.data, EvalMode::parse("sliding_window:4"));
  double dense = 0.0, windowed = 0.0;
  for (const Utterance& u : f.data) {
    dense += static_cast<double>(dense_flops(f.spec.encoder, u.frames()).encoder_total());
    windowed += static_cast<double>(dense_flops(f.spec.encoder, u.frames(), {}, w).encoder_total());
  }
  CHECK(r.ccr == doctest::Approx(1.0 - windowed / dense).epsilon(1e-12));
  CHECK(r.ccr > 0.0);
}

TEST_CASE("evaluation does not depend on the thread count") {
  Fixture f;
  EvalOptions one, many;
  one.threads = 1;
  many.threads = 4;
  const EvalReport a = evaluate(f.model, f.data, EvalMode::parse("amortized"), one);
  const EvalReport b = evaluate(f.model, f.data, EvalMode::parse("amortized"), many);
  CHECK(a.ledger == b.ledger);
  CHECK(a.frame_error_rate == b.frame_error_rate);
  CHECK(a.silence_on_rate == b.silence_on_rate);
}

TEST_CASE("random toggles are keyed and respect disabled kinds") {
  Fixture f;
  f.spec.toggles.ff = false;
  const ToggleSet a = random_toggles(f.spec, 20, 0.3, 5, 2);
  const ToggleSet b = random_toggles(f.spec, 20, 0.3, 5, 2);
  CHECK(a.query == b.query);
  CHECK(!(random_toggles(f.spec, 20, 0.3, 5, 3).query == a.query));
  for (double v : a.ff.data) CHECK(v == 1.0);
  CHECK(a.all_binary());
}

TEST_CASE("random toggling rate can be matched to a target reduction") {
  Fixture f;
  for (double target : {0.2, 0.5, 0.7}) {
    const double rate = match_random_rate(f.spec, f.data, target);
    CHECK(std::abs(random_toggling_ccr(f.spec, f.data, rate) - target) <= 0.02);
    const EvalReport r = evaluate(f.model, f.data, EvalMode{EvalKind::random_toggling, 10, rate});
    CHECK(r.ccr == doctest::Approx(random_toggling_ccr(f.spec, f.data, rate)).epsilon(1e-12));
  }
  CHECK(random_toggling_ccr(f.spec, f.data, 1.0) == 0.0);
}

TEST_CASE("report table and csv") {
  Fixture f;
  const EvalReport r = evaluate(f.model, f.data, EvalMode::parse("amortized"));
  std::ostringstream table, csv;
  write_report_table(table, r);
  write_report_csv(csv, {r, r});
  CHECK(table.str().find("non-blank frames") != std::string::npos);
  std::istringstream lines(csv.str());
  std::string header, row;
  std::getline(lines, header);
  std::getline(lines, row);
  CHECK(header.rfind("mode,", 0) == 0);
  CHECK(row.rfind("amortized,", 0) == 0);
}

TEST_CASE("heatmaps have one row per frame plus a header") {
  Fixture f;
  const auto dir = std::filesystem::temp_directory_path() / "amt_heatmap_test";
  std::filesystem::remove_all(dir);
  const HeatmapFiles files = export_heatmap(f.model, f.data[0], dir, "utt0");
  const std::size_t T = f.data[0].frames();
  CHECK(count_lines(files.mha_soft) == T + 1);
  CHECK(count_lines(files.ff_hard) == T + 1);
  std::ifstream in(files.mha_hard);
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("q_b0_h0,", 0) == 0);
  CHECK(std::count(header.begin(), header.end(), ',') + 1 == 2 * 2 * 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("an always-on arbitrator gives all-ones hard maps") {
  Fixture f;
  f.spec.arbitrator.bias_init = 30.0;
  const AmortizedModel on(f.spec, AmortizedModel::init_params(f.spec, 1));
  const EvalReport r = evaluate(on, f.data, EvalMode::parse("amortized"));
  CHECK(r.ccr == 0.0);
  CHECK(r.silence_on_rate == 1.0);
  std::ostringstream mha;
  write_mha_csv(mha, on.stream(f.data[0].features).hard);
  std::istringstream lines(mha.str());
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) {
    for (char ch : line) CHECK((ch == '1' || ch == ','));
  }
}
