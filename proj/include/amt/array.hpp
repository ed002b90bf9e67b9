#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace amt {

/// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation's precondition (non-scalar loss, soft toggles
/// passed to a hard-only path, fully masked softmax row, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Dense row-major f64 array. Rank 1 arrays behave as a single row.
struct Array {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Array() = default;
  explicit Array(std::vector<std::size_t> shape_, double fill = 0.0);
  Array(std::vector<std::size_t> shape_, std::vector<double> data_);

  static Array matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Array from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Array row_vector(std::initializer_list<double> values);
  static Array row_vector(std::vector<double> values);
  static Array identity(std::size_t n);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape.size() == 1 ? 1 : shape.front(); }
  std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }
  bool empty() const { return data.empty(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  bool operator==(const Array&) const = default;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Counts multiply-accumulates performed by the kernels in this header on the
/// current thread while alive. Scopes nest; an inner scope's count is folded
/// into the enclosing one when it ends.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t count() const { return count_; }

 private:
  friend void record_macs(std::uint64_t n);
  std::uint64_t count_ = 0;
  MacCounter* previous_;
};

void record_macs(std::uint64_t n);

/// c (+)= op(a) * op(b) where op transposes when the flag is set.
void gemm(bool transpose_a, bool transpose_b, const Array& a, const Array& b, Array& c,
          bool accumulate);

Array matmul(const Array& a, const Array& b);
Array transpose(const Array& a);

/// Max-stabilised softmax. -inf entries map to exactly 0.
Array softmax_row(const Array& v);
void softmax_inplace(std::span<double> v);

inline constexpr double kLayerNormEps = 1e-5;

Array layer_norm(const Array& x, const Array& gain, const Array& bias, double eps = kLayerNormEps);

/// Weights for one LSTM layer. Gate blocks along the 4*hidden axis are
/// ordered input, forget, cell candidate, output.
struct LstmParams {
  Array input_weights;      // in x 4h
  Array recurrent_weights;  // h x 4h
  Array bias;               // 4h
  std::size_t hidden() const { return recurrent_weights.rows(); }
};

std::pair<Array, Array> lstm_step(const Array& x, const Array& h, const Array& c,
                                  const LstmParams& params);

double sigmoid(double x);

}  // namespace amt
