#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "amt/array.hpp"

namespace amt {

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Array& value() const;
  const Array& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the
/// recording order is already topological and backward() is a single reverse
/// sweep. A tape is confined to one thread.
class Tape {
 public:
  Var constant(Array value);
  Var parameter(Array value);

  /// Appends a node computed from `inputs`; `backward` receives this node's
  /// id and must accumulate into the inputs' gradients.
  Var record(Array value, std::vector<std::size_t> inputs,
             std::function<void(Tape&, std::size_t)> backward);

  void backward(Var loss);

  const Array& value(std::size_t id) const { return nodes_[id].value; }
  const Array& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Zero-initialised on first access.
  Array& grad_ref(std::size_t id);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Array value;
    Array grad;
    std::function<void(Tape&, std::size_t)> backward;
    std::vector<std::size_t> inputs;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

inline constexpr std::size_t kNoWindow = std::numeric_limits<std::size_t>::max();

// Differentiable primitives. All operate on rank-2 values (rank-1 is a row).
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1 x n row over every row of a
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var mul_col(Var a, Var col);  // row r of a scaled by col[r]; col is rows x 1
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var log(Var a);
Var softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = kLayerNormEps);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var sum(Var a);

/// Mean per-row cross entropy of softmax(logits) against integer labels.
Var cross_entropy(Var logits, const std::vector<int>& labels);

/// Log-space key mask from per-frame key toggles (T x 1). Entry (t, j) is
/// -inf for future keys and for keys older than `window` frames, ln(s_j)
/// otherwise. The diagonal falls back to 0 only when every other admitted
/// entry in its row is -inf, so no row is ever empty.
Var key_mask(Var key_toggles, std::size_t window = kNoWindow);

/// Forward value rounded to {0,1} at 0.5, gradient passed through unchanged.
Var straight_through(Var a);

}  // namespace amt
