#include <doctest.h>

#include <cmath>
#include <random>

#include "amt/check.hpp"
#include "amt/cost.hpp"
#include "amt/encoder.hpp"
#include "support.hpp"

using namespace amt;
using amt::testing::random_array;

namespace {

EncoderConfig tiny(std::size_t blocks = 2) {
  EncoderConfig c;
  c.input_dim = 5;
  c.d = 8;
  c.heads = 2;
  c.blocks = blocks;
  c.ff_dim = 12;
  c.output_dim = 3;
  c.max_len = 32;
  return c;
}

Encoder make(const EncoderConfig& c, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  return Encoder(c, Encoder::init_params(c, rng));
}

ToggleSet hard_ones(std::size_t T, const EncoderConfig& c) {
  ToggleSet s = ToggleSet::ones(T, c.blocks, c.heads);
  s.hard = true;
  return s;
}

bool rows_equal(const Array& a, const Array& b, std::size_t r, double tol = 1e-12) {
  for (std::size_t j = 0; j < a.cols(); ++j) {
    if (std::abs(a(r, j) - b(r, j)) > tol) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("streaming replay equals the masked dense path on random cases") {
  const EquivalenceResult r = run_equivalence_suite(77, 120);
  CHECK(r.cases == 120);
  CHECK(r.max_abs_diff <= 1e-8);
  CHECK(r.ledger_mismatches == 0);
  CHECK(r.expected_mismatches == 0);
}

TEST_CASE("query toggles off reduce the attention sublayer to LN(x)") {
  const EncoderConfig c = tiny(1);
  const Encoder enc = make(c);
  std::mt19937_64 rng(2);
  const Array x0 = random_array({6, c.d}, rng);
  Tape t;
  const VarMap p = bind(t, enc.params(), false);
  BlockToggles off{t.constant(Array::matrix(6, 1, 0.0)), t.constant(Array::matrix(6, 2, 0.0)),
                   t.constant(Array::matrix(6, 2, 1.0))};
  const Array got = enc.block(p, 0, t.constant(x0), off).value();
  const Array ln1 = layer_norm(x0, enc.params().get("enc/block00/ln1_g"),
                               enc.params().get("enc/block00/ln1_b"));
  const Array want = layer_norm(ln1, enc.params().get("enc/block00/ln2_g"),
                                enc.params().get("enc/block00/ln2_b"));
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("dense path is causal") {
  const EncoderConfig c = tiny();
  const Encoder enc = make(c);
  std::mt19937_64 rng(3);
  Array x = random_array({10, c.input_dim}, rng);
  const Array before = enc.forward(x, hard_ones(10, c));
  for (std::size_t j = 0; j < c.input_dim; ++j) x(7, j) += 1.0;
  const Array after = enc.forward(x, hard_ones(10, c));
  for (std::size_t t = 0; t < 7; ++t) CHECK(rows_equal(before, after, t));
  CHECK(!rows_equal(before, after, 7));
  CHECK(!rows_equal(before, after, 9));
}

TEST_CASE("a frame with every key toggle off is invisible to other frames") {
  const EncoderConfig c = tiny();
  const Encoder enc = make(c);
  std::mt19937_64 rng(4);
  Array x = random_array({8, c.input_dim}, rng);
  ToggleSet s = hard_ones(8, c);
  for (std::size_t i = 0; i < c.blocks * c.heads; ++i) s.key(3, i) = 0.0;
  const Array before = enc.forward(x, s);
  for (std::size_t j = 0; j < c.input_dim; ++j) x(3, j) -= 2.0;
  const Array after = enc.forward(x, s);
  for (std::size_t t = 0; t < 8; ++t) {
    if (t != 3) CHECK(rows_equal(before, after, t));
  }
}

TEST_CASE("single-block sliding window ignores frames older than the window") {
  const EncoderConfig c = tiny(1);
  const Encoder enc = make(c);
  std::mt19937_64 rng(5);
  Array x = random_array({12, c.input_dim}, rng);
  const Array before = enc.forward(x, hard_ones(12, c), 3);
  for (std::size_t j = 0; j < c.input_dim; ++j) x(2, j) += 1.5;
  const Array after = enc.forward(x, hard_ones(12, c), 3);
  for (std::size_t t = 0; t < 12; ++t) CHECK(rows_equal(before, after, t) == (t < 2 || t > 5));
}

TEST_CASE("key mask construction matches the window mask when every key is on") {
  const Array a = build_key_mask(std::vector<double>(7, 1.0), 2);
  const Array b = sliding_window_mask(7, 2);
  CHECK(a == b);
  const Array causal = build_key_mask(std::vector<double>(4, 1.0));
  CHECK(causal(3, 0) == 0.0);
  CHECK(causal(0, 3) == kNegInf);
}

TEST_CASE("parameter count matches the initialised store") {
  for (std::size_t blocks : {1, 3}) {
    const EncoderConfig c = tiny(blocks);
    std::mt19937_64 rng(6);
    CHECK(Encoder::init_params(c, rng).scalar_count() == Encoder::param_count(c));
  }
}

TEST_CASE("full-size parameter count") {
  const EncoderConfig c;  // 516 -> 512, 4 heads, 12 blocks, 1024 ff, 512 out
  const std::size_t per_block = 4 * 512 * 512 + 2 * 512 + 2 * 512 * 1024 + 1024 + 512 + 2 * 512;
  CHECK(Encoder::param_count(c) ==
        516 * 512 + 512 + 2048 * 512 + 12 * per_block + 512 * 512 + 512);
}

TEST_CASE("stream ledger of all-ones toggles equals the dense ledger") {
  const EncoderConfig c = tiny();
  const Encoder enc = make(c);
  std::mt19937_64 rng(7);
  const Array x = random_array({9, c.input_dim}, rng);
  StreamState st = enc.start_stream();
  FlopLedger ledger = FlopLedger::zeros(c.blocks, c.heads);
  MacCounter counter;
  for (std::size_t t = 0; t < 9; ++t) {
    const auto row = x.row(t);
    enc.stream_step(st, Array({c.input_dim}, std::vector<double>(row.begin(), row.end())),
                    FrameToggles::ones(c.blocks, c.heads), ledger);
  }
  CHECK(ledger == dense_flops(c, 9));
  CHECK(counter.count() == ledger.total());
}

TEST_CASE("stream rejects soft toggles and over-long inputs") {
  const EncoderConfig c = tiny();
  const Encoder enc = make(c);
  StreamState st = enc.start_stream();
  FlopLedger ledger = FlopLedger::zeros(c.blocks, c.heads);
  FrameToggles soft = FrameToggles::ones(c.blocks, c.heads);
  soft.query[1] = 0.5;
  const Array frame({c.input_dim}, 0.1);
  CHECK_THROWS_AS(enc.stream_step(st, frame, soft, ledger), ContractError);
  StreamState full = enc.start_stream();
  for (std::size_t t = 0; t < c.max_len; ++t) {
    enc.stream_step(full, frame, FrameToggles::ones(c.blocks, c.heads), ledger);
  }
  CHECK_THROWS_AS(enc.stream_step(full, frame, FrameToggles::ones(c.blocks, c.heads), ledger),
                  ContractError);
}

TEST_CASE("toggle sets are validated against the configuration") {
  const EncoderConfig c = tiny();
  ToggleSet s = ToggleSet::filled(4, c.blocks, c.heads, 0.5);
  CHECK_NOTHROW(s.validate(c));
  s.hard = true;
  CHECK_THROWS_AS(s.validate(c), ContractError);
  ToggleSet wrong = ToggleSet::ones(4, c.blocks + 1, c.heads);
  CHECK_THROWS_AS(wrong.validate(c), ContractError);
  ToggleSet out_of_range = ToggleSet::filled(4, c.blocks, c.heads, 1.5);
  CHECK_THROWS_AS(out_of_range.validate(c), ContractError);
}

TEST_CASE("encoder configuration is validated") {
  EncoderConfig c = tiny();
  c.heads = 3;
  CHECK_THROWS(c.validate());
  c = tiny();
  c.blocks = 0;
  CHECK_THROWS(c.validate());
  CHECK(tiny().attention_scale() == doctest::Approx(1.0 / std::sqrt(8.0)));
}

TEST_CASE("features of the wrong width are rejected") {
  const EncoderConfig c = tiny();
  const Encoder enc = make(c);
  CHECK_THROWS_AS(enc.forward(Array::matrix(3, c.input_dim + 1), hard_ones(3, c)), DimensionError);
}
