#include <doctest.h>

#include <cmath>
#include <random>

#include "amt/tape.hpp"
#include "support.hpp"

using namespace amt;
using amt::testing::max_grad_error;
using amt::testing::random_array;

namespace {

// Weighted sum so every output entry gets a distinct upstream gradient.
Var probe(Tape& t, Var x) {
  Array w(x.value().shape);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
  if (w.rank() == 1) w.shape = {1, w.size()};
  return sum(mul(x, t.constant(w)));
}

}  // namespace

TEST_CASE("gradients of elementwise and linear ops match finite differences") {
  std::mt19937_64 rng(11);
  const Array a = random_array({3, 4}, rng), b = random_array({3, 4}, rng);
  const Array m = random_array({4, 2}, rng), row = random_array({1, 4}, rng);
  const Array col = random_array({3, 1}, rng, 0.1, 1.0);

  CHECK(max_grad_error({a, m}, [](Tape& t, auto& v) { return probe(t, matmul(v[0], v[1])); }) < 1e-6);
  CHECK(max_grad_error({a, b}, [](Tape& t, auto& v) { return probe(t, matmul_nt(v[0], v[1])); }) < 1e-6);
  CHECK(max_grad_error({a, b}, [](Tape& t, auto& v) { return probe(t, add(v[0], v[1])); }) < 1e-6);
  CHECK(max_grad_error({a, b}, [](Tape& t, auto& v) { return probe(t, sub(v[0], v[1])); }) < 1e-6);
  CHECK(max_grad_error({a, b}, [](Tape& t, auto& v) { return probe(t, mul(v[0], v[1])); }) < 1e-6);
  CHECK(max_grad_error({a, row}, [](Tape& t, auto& v) { return probe(t, add_row(v[0], v[1])); }) < 1e-6);
  CHECK(max_grad_error({a, col}, [](Tape& t, auto& v) { return probe(t, mul_col(v[0], v[1])); }) < 1e-6);
  CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, scale(v[0], -2.5)); }) < 1e-6);
  CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, add_scalar(v[0], 4.0)); }) < 1e-6);
  CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, sigmoid(v[0])); }) < 1e-6);
  CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, tanh(v[0])); }) < 1e-6);
  CHECK(max_grad_error({col}, [](Tape& t, auto& v) { return probe(t, log(v[0])); }) < 1e-6);
}

TEST_CASE("relu gradient away from the kink") {
  Array a = Array::from_rows({{-1.0, 0.5, 2.0}, {0.3, -0.2, -4.0}});
  CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, relu(v[0])); }) < 1e-6);
}

TEST_CASE("structural ops route gradients to the right entries") {
  std::mt19937_64 rng(12);
  const Array a = random_array({3, 5}, rng), b = random_array({3, 2}, rng);
  CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, slice_cols(v[0], 1, 4)); }) < 1e-6);
  CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, slice_rows(v[0], 1, 3)); }) < 1e-6);
  CHECK(max_grad_error({a, b}, [](Tape& t, auto& v) {
          return probe(t, concat_cols({v[0], v[1], v[0]}));
        }) < 1e-6);
  CHECK(max_grad_error({a, a}, [](Tape& t, auto& v) { return probe(t, concat_rows({v[0], v[1]})); }) <
        1e-6);
}

TEST_CASE("softmax and layer norm gradients") {
  std::mt19937_64 rng(13);
  const Array a = random_array({4, 6}, rng, -2, 2);
  const Array gain = random_array({1, 6}, rng, 0.5, 1.5), bias = random_array({1, 6}, rng);
  CHECK(max_grad_error({a}, [](Tape& t, auto& v) { return probe(t, softmax_rows(v[0])); }) < 1e-6);
  CHECK(max_grad_error({a, gain, bias}, [](Tape& t, auto& v) {
          return probe(t, layer_norm_rows(v[0], v[1], v[2]));
        }) < 1e-5);
}

TEST_CASE("masked softmax entries are zero with zero gradient") {
  Tape t;
  Array m = Array::matrix(2, 3);
  m(0, 2) = kNegInf;
  Var x = t.parameter(Array::from_rows({{0.1, 0.2, 0.3}, {1.0, 2.0, 3.0}}));
  Var s = softmax_rows(add(x, t.constant(m)));
  CHECK(s.value()(0, 2) == 0.0);
  t.backward(probe(t, s));
  CHECK(x.grad()(0, 2) == 0.0);
}

TEST_CASE("cross entropy matches a log-softmax oracle") {
  std::mt19937_64 rng(14);
  const Array logits = random_array({5, 4}, rng, -3, 3);
  const std::vector<int> labels = {0, 3, 1, 1, 2};
  Tape t;
  const double got = cross_entropy(t.constant(logits), labels).value()[0];
  double want = 0.0;
  for (std::size_t r = 0; r < 5; ++r) {
    double z = 0.0;
    for (double v : logits.row(r)) z += std::exp(v);
    want -= logits(r, static_cast<std::size_t>(labels[r])) - std::log(z);
  }
  CHECK(got == doctest::Approx(want / 5).epsilon(1e-12));
  CHECK(max_grad_error({logits}, [&](Tape&, auto& v) { return cross_entropy(v[0], labels); }) < 1e-6);
}

TEST_CASE("cross entropy rejects labels outside the class range") {
  Tape t;
  Var x = t.constant(Array::matrix(2, 3));
  CHECK_THROWS_AS(cross_entropy(x, {0, 3}), ContractError);
  CHECK_THROWS_AS(cross_entropy(x, {0, -1}), ContractError);
  CHECK_THROWS_AS(cross_entropy(x, {0}), DimensionError);
}

TEST_CASE("backward needs a scalar loss") {
  Tape t;
  Var x = t.parameter(Array::matrix(2, 2, 1.0));
  CHECK_THROWS_AS(t.backward(x), ContractError);
}

TEST_CASE("gradients accumulate over repeated uses") {
  Tape t;
  Var x = t.parameter(Array::row_vector({3.0}));
  Var y = add(mul(x, x), x);  // x^2 + x
  t.backward(sum(y));
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("key mask has log toggles below the diagonal and -inf above") {
  Tape t;
  Var s = t.constant(Array::from_rows({{1.0}, {0.5}, {0.25}}));
  const Array m = key_mask(s).value();
  CHECK(m(0, 0) == 0.0);
  CHECK(m(0, 1) == kNegInf);
  CHECK(m(0, 2) == kNegInf);
  CHECK(m(2, 0) == 0.0);
  CHECK(m(2, 1) == doctest::Approx(std::log(0.5)));
  CHECK(m(2, 2) == doctest::Approx(std::log(0.25)));
}

TEST_CASE("key mask with a window drops old keys") {
  Tape t;
  Var s = t.constant(Array::matrix(5, 1, 1.0));
  const Array m = key_mask(s, 2).value();
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 5; ++c) {
      const bool admitted = c <= r && r - c <= 2;
      CHECK((m(r, c) == 0.0) == admitted);
      CHECK((m(r, c) == kNegInf) == !admitted);
    }
  }
}

TEST_CASE("key mask keeps an all-off row non-empty") {
  Tape t;
  Var s = t.constant(Array::from_rows({{0.0}, {0.0}, {1.0}}));
  const Array m = key_mask(s).value();
  CHECK(m(0, 0) == 0.0);
  CHECK(m(1, 0) == kNegInf);
  CHECK(m(1, 1) == 0.0);
  CHECK(m(2, 1) == kNegInf);
  CHECK(m(2, 2) == 0.0);
}

TEST_CASE("key mask gradient") {
  std::mt19937_64 rng(15);
  const Array s = random_array({4, 1}, rng, 0.2, 1.0);
  CHECK(max_grad_error({s}, [](Tape& t, auto& v) {
          Array finite = Array::matrix(4, 4);
          Var m = key_mask(v[0]);
          // Replace -inf entries so the probe stays finite.
          for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = r + 1; c < 4; ++c) finite(r, c) = 1.0;
          return probe(t, softmax_rows(add(m, t.constant(finite))));
        }) < 1e-6);
}

TEST_CASE("straight-through rounds forward and passes gradient") {
  Tape t;
  Var x = t.parameter(Array::row_vector({0.2, 0.5, 0.8}));
  Var y = straight_through(x);
  CHECK(y.value() == Array::from_rows({{0.0, 1.0, 1.0}}));
  t.backward(probe(t, y));
  CHECK(x.grad()[0] == doctest::Approx(std::sin(1.0)));
}
