#include "amt/array.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace amt {

namespace {

thread_local MacCounter* active_counter = nullptr;

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Array::Array(std::vector<std::size_t> shape_, double fill)
    : shape(std::move(shape_)), data(product(shape), fill) {}

Array::Array(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (product(shape) != data.size()) {
    throw DimensionError("array data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string(shape));
  }
}

Array Array::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Array({rows, cols}, fill);
}

Array Array::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t n_cols = rows.size() == 0 ? 0 : rows.begin()->size();
  Array out = matrix(rows.size(), n_cols);
  std::size_t r = 0;
  for (const auto& row : rows) {
    if (row.size() != n_cols) throw DimensionError("ragged rows");
    std::copy(row.begin(), row.end(), out.row(r++).begin());
  }
  return out;
}

Array Array::row_vector(std::initializer_list<double> values) {
  return Array({values.size()}, std::vector<double>(values));
}

Array Array::row_vector(std::vector<double> values) {
  std::size_t n = values.size();
  return Array({n}, std::move(values));
}

Array Array::identity(std::size_t n) {
  Array out = matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

MacCounter::MacCounter() : previous_(active_counter) { active_counter = this; }

MacCounter::~MacCounter() {
  active_counter = previous_;
  if (previous_ != nullptr) previous_->count_ += count_;
}

void record_macs(std::uint64_t n) {
  if (active_counter != nullptr) active_counter->count_ += n;
}

void gemm(bool transpose_a, bool transpose_b, const Array& a, const Array& b, Array& c,
          bool accumulate) {
  const std::size_t m = transpose_a ? a.cols() : a.rows();
  const std::size_t k = transpose_a ? a.rows() : a.cols();
  const std::size_t kb = transpose_b ? b.cols() : b.rows();
  const std::size_t n = transpose_b ? b.rows() : b.cols();
  if (k != kb) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_string(a.shape) +
                         (transpose_a ? "^T" : "") + " x " + shape_string(b.shape) +
                         (transpose_b ? "^T" : ""));
  }
  if (c.rows() != m || c.cols() != n || c.size() != m * n) {
    if (accumulate) throw DimensionError("gemm accumulator has wrong shape");
    c = Array::matrix(m, n);
  } else if (!accumulate) {
    std::fill(c.data.begin(), c.data.end(), 0.0);
  }
  const double* pa = a.data.data();
  const double* pb = b.data.data();
  double* pc = c.data.data();
  const std::size_t lda = a.cols();
  const std::size_t ldb = b.cols();

  if (!transpose_a && !transpose_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = pc + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = pa[i * lda + p];
        const double* bp = pb + p * ldb;
        for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
  } else if (!transpose_a && transpose_b) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = pa + i * lda;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = pb + j * ldb;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
        pc[i * n + j] += acc;
      }
    }
  } else if (transpose_a && !transpose_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* ap = pa + p * lda;
      const double* bp = pb + p * ldb;
      for (std::size_t i = 0; i < m; ++i) {
        const double api = ap[i];
        double* ci = pc + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += pa[p * lda + i] * pb[j * ldb + p];
        pc[i * n + j] += acc;
      }
    }
  }
  record_macs(static_cast<std::uint64_t>(m) * k * n);
}

Array matmul(const Array& a, const Array& b) {
  Array c;
  gemm(false, false, a, b, c, false);
  return c;
}

Array transpose(const Array& a) {
  Array out = Array::matrix(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  return out;
}

void softmax_inplace(std::span<double> v) {
  double peak = kNegInf;
  for (double x : v) {
    if (std::isnan(x)) {
      std::fill(v.begin(), v.end(), x);
      return;
    }
    peak = std::max(peak, x);
  }
  if (peak == kNegInf) throw ContractError("softmax over a fully masked row");
  double total = 0.0;
  for (double& x : v) {
    x = (x == kNegInf) ? 0.0 : std::exp(x - peak);
    total += x;
  }
  for (double& x : v) x /= total;
}

Array softmax_row(const Array& v) {
  Array out = v;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  return out;
}

Array layer_norm(const Array& x, const Array& gain, const Array& bias, double eps) {
  const std::size_t d = x.cols();
  if (gain.size() != d || bias.size() != d) throw DimensionError("layer_norm affine size");
  Array out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) row[i] = (row[i] - mean) * inv * gain[i] + bias[i];
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::pair<Array, Array> lstm_step(const Array& x, const Array& h, const Array& c,
                                  const LstmParams& params) {
  const std::size_t hidden = params.hidden();
  if (params.recurrent_weights.cols() != 4 * hidden || params.input_weights.cols() != 4 * hidden ||
      params.bias.size() != 4 * hidden) {
    throw DimensionError("lstm parameter shapes inconsistent");
  }
  if (x.size() != params.input_weights.rows() || h.size() != hidden || c.size() != hidden) {
    throw DimensionError("lstm state or input size mismatch");
  }
  Array xr({1, x.size()}, x.data);
  Array hr({1, hidden}, h.data);
  Array gates = matmul(xr, params.input_weights);
  gemm(false, false, hr, params.recurrent_weights, gates, true);
  Array h_next({hidden}), c_next({hidden});
  for (std::size_t i = 0; i < hidden; ++i) {
    const double in = sigmoid(gates[i] + params.bias[i]);
    const double forget = sigmoid(gates[hidden + i] + params.bias[hidden + i]);
    const double cand = std::tanh(gates[2 * hidden + i] + params.bias[2 * hidden + i]);
    const double out = sigmoid(gates[3 * hidden + i] + params.bias[3 * hidden + i]);
    c_next[i] = forget * c[i] + in * cand;
    h_next[i] = out * std::tanh(c_next[i]);
  }
  return {std::move(h_next), std::move(c_next)};
}

}  // namespace amt
