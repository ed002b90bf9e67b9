#include "amt/tape.hpp"

#include <algorithm>
#include <cmath>

namespace amt {

const Array& Var::value() const { return tape->value(id); }
const Array& Var::grad() const { return tape->grad(id); }

Var Tape::constant(Array value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Array value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
  return {this, nodes_.size() - 1};
}

Var Tape::record(Array value, std::vector<std::size_t> inputs,
                 std::function<void(Tape&, std::size_t)> backward) {
  bool needs = false;
  for (std::size_t in : inputs) needs = needs || nodes_[in].needs_grad;
  Node node{std::move(value), {}, {}, std::move(inputs), needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Array& Tape::grad_ref(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.size() != node.value.size() || node.grad.shape != node.value.shape) {
    node.grad = Array(node.value.shape, 0.0);
  }
  return node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("loss belongs to another tape");
  if (value(loss.id).size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        shape_string(value(loss.id).shape));
  }
  for (Node& node : nodes_) node.grad = Array();
  grad_ref(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || !node.backward || node.grad.empty()) continue;
    node.backward(*this, i);
  }
}

namespace {

void require_same_shape(const Array& a, const Array& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape) + " and " +
                         shape_string(b.shape));
  }
}

Array as_matrix(const Array& a) { return Array({a.rows(), a.cols()}, a.data); }

template <class Fn>
Var unary(Var a, Fn fn, std::function<double(double x, double y)> dfn) {
  Array out = as_matrix(a.value());
  for (double& v : out.data) v = fn(v);
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, dfn](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Array& x = t.value(ia);
    const Array& y = t.value(self);
    const Array& g = t.grad(self);
    Array& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfn(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Array out;
  gemm(false, false, a.value(), b.value(), out, false);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    if (t.needs_grad(ia)) gemm(false, true, g, t.value(ib), t.grad_ref(ia), true);
    if (t.needs_grad(ib)) gemm(true, false, t.value(ia), g, t.grad_ref(ib), true);
  });
}

Var matmul_nt(Var a, Var b) {
  Array out;
  gemm(false, true, a.value(), b.value(), out, false);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    if (t.needs_grad(ia)) gemm(false, false, g, t.value(ib), t.grad_ref(ia), true);
    if (t.needs_grad(ib)) gemm(true, false, g, t.value(ia), t.grad_ref(ib), true);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Array out = as_matrix(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    for (std::size_t in : {ia, ib}) {
      if (!t.needs_grad(in)) continue;
      Array& gi = t.grad_ref(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Array out = as_matrix(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    if (t.needs_grad(ia)) {
      Array& gi = t.grad_ref(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      Array& gi = t.grad_ref(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
    }
  });
}

Var add_row(Var a, Var row) {
  const std::size_t n = a.cols();
  if (row.value().size() != n) throw DimensionError("add_row: row length mismatch");
  Array out = as_matrix(a.value());
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) += row.value()[c];
  const std::size_t ia = a.id, ib = row.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib, n](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    if (t.needs_grad(ia)) {
      Array& ga = t.grad_ref(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      Array& gb = t.grad_ref(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Array out = as_matrix(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    if (t.needs_grad(ia)) {
      Array& ga = t.grad_ref(ia);
      const Array& vb = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.needs_grad(ib)) {
      Array& gb = t.grad_ref(ib);
      const Array& va = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

Var scale(Var a, double factor) {
  Array out = as_matrix(a.value());
  for (double& v : out.data) v *= factor;
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, factor](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    Array& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var add_scalar(Var a, double offset) {
  Array out = as_matrix(a.value());
  for (double& v : out.data) v += offset;
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    Array& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var mul_col(Var a, Var col) {
  const std::size_t rows = a.rows(), n = a.cols();
  if (col.value().size() != rows) throw DimensionError("mul_col: column length mismatch");
  Array out = as_matrix(a.value());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) *= col.value()[r];
  const std::size_t ia = a.id, ic = col.id;
  return a.tape->record(std::move(out), {ia, ic}, [ia, ic, n](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    if (t.needs_grad(ia)) {
      Array& ga = t.grad_ref(ia);
      const Array& s = t.value(ic);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s[i / n];
    }
    if (t.needs_grad(ic)) {
      Array& gc = t.grad_ref(ic);
      const Array& va = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gc[i / n] += g[i] * va[i];
    }
  });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return amt::sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var log(Var a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softmax_rows(Var a) {
  Array out = as_matrix(a.value());
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Array& y = t.value(self);
    const Array& g = t.grad(self);
    Array& ga = t.grad_ref(ia);
    const std::size_t n = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += y(r, c) * g(r, c);
      // Masked entries have y == 0 and receive exactly zero gradient.
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layer_norm: affine size mismatch");
  }
  Array normed = Array::matrix(rows, d);
  std::vector<double> inv_std(rows);
  const Array& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xv(r, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xv(r, c) - mean) * (xv(r, c) - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) normed(r, c) = (xv(r, c) - mean) * inv_std[r];
  }
  Array out = normed;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c)
      out(r, c) = normed(r, c) * gain.value()[c] + bias.value()[c];

  const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  return x.tape->record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, normed = std::move(normed), inv_std = std::move(inv_std)](Tape& t,
                                                                             std::size_t self) {
        const Array& g = t.grad(self);
        const std::size_t rows = g.rows(), d = g.cols();
        if (t.needs_grad(ig)) {
          Array& gg = t.grad_ref(ig);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * normed[i];
        }
        if (t.needs_grad(ib)) {
          Array& gb = t.grad_ref(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        }
        if (t.needs_grad(ix)) {
          const Array& gain_v = t.value(ig);
          Array& gx = t.grad_ref(ix);
          std::vector<double> dn(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dn = 0.0, mean_dn_n = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              dn[c] = g(r, c) * gain_v[c];
              mean_dn += dn[c];
              mean_dn_n += dn[c] * normed(r, c);
            }
            mean_dn /= static_cast<double>(d);
            mean_dn_n /= static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c) {
              gx[r * d + c] += inv_std[r] * (dn[c] - mean_dn - normed(r, c) * mean_dn_n);
            }
          }
        }
      });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const std::size_t rows = a.rows(), n = a.cols();
  if (begin > end || end > n) throw DimensionError("slice_cols out of range");
  const std::size_t w = end - begin;
  Array out = Array::matrix(rows, w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out(r, c) = a.value()(r, begin + c);
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, begin, w, n](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    Array& ga = t.grad_ref(ia);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < w; ++c) ga[r * n + begin + c] += g(r, c);
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const std::size_t n = a.cols();
  if (begin > end || end > a.rows()) throw DimensionError("slice_rows out of range");
  Array out({end - begin, n}, std::vector<double>(a.value().data.begin() + begin * n,
                                                  a.value().data.begin() + end * n));
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, begin, n](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    Array& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols row mismatch");
    ids.push_back(p.id);
    offsets.push_back(total);
    total += p.cols();
  }
  Array out = Array::matrix(rows, total);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Array& v = parts[i].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, offsets[i] + c) = v(r, c);
  }
  return parts.front().tape->record(
      std::move(out), ids, [ids, offsets, total](Tape& t, std::size_t self) {
        const Array& g = t.grad(self);
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (!t.needs_grad(ids[i])) continue;
          Array& gi = t.grad_ref(ids[i]);
          const std::size_t w = t.value(ids[i]).cols();
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < w; ++c) gi[r * w + c] += g[r * total + offsets[i] + c];
        }
      });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t n = parts.front().cols();
  std::vector<std::size_t> ids;
  std::vector<double> data;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != n) throw DimensionError("concat_rows column mismatch");
    ids.push_back(p.id);
    data.insert(data.end(), p.value().data.begin(), p.value().data.end());
    rows += p.rows();
  }
  return parts.front().tape->record(
      Array({rows, n}, std::move(data)), ids, [ids](Tape& t, std::size_t self) {
        const Array& g = t.grad(self);
        std::size_t offset = 0;
        for (std::size_t id : ids) {
          const std::size_t len = t.value(id).size();
          if (t.needs_grad(id)) {
            Array& gi = t.grad_ref(id);
            for (std::size_t i = 0; i < len; ++i) gi[i] += g[offset + i];
          }
          offset += len;
        }
      });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data) total += v;
  const std::size_t ia = a.id;
  return a.tape->record(Array({1, 1}, total), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Array& ga = t.grad_ref(ia);
    for (double& v : ga.data) v += g;
  });
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  const Array& z = logits.value();
  const std::size_t rows = z.rows(), n = z.cols();
  if (labels.size() != rows) throw DimensionError("cross_entropy: label count mismatch");
  Array probs = as_matrix(z);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= n) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[r]) + " out of range");
    }
    auto row = probs.row(r);
    double peak = row[0];
    for (double v : row) peak = std::max(peak, v);
    double total = 0.0;
    for (double v : row) total += std::exp(v - peak);
    loss -= row[static_cast<std::size_t>(labels[r])] - peak - std::log(total);
    for (double& v : row) v = std::exp(v - peak) / total;
  }
  loss /= static_cast<double>(rows);
  const std::size_t iz = logits.id;
  return logits.tape->record(
      Array({1, 1}, loss), {iz},
      [iz, labels, probs = std::move(probs)](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0] / static_cast<double>(probs.rows());
        Array& gz = t.grad_ref(iz);
        const std::size_t n = probs.cols();
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          for (std::size_t c = 0; c < n; ++c) {
            const double target = static_cast<int>(c) == labels[r] ? 1.0 : 0.0;
            gz[r * n + c] += g * (probs(r, c) - target);
          }
        }
      });
}

Var key_mask(Var key_toggles, std::size_t window) {
  const Array& s = key_toggles.value();
  const std::size_t T = s.size();
  Array mask = Array::matrix(T, T, kNegInf);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t first = (window == kNoWindow || window >= t) ? 0 : t - window;
    bool any_open = false;
    for (std::size_t j = first; j < t; ++j) {
      mask(t, j) = std::log(s[j]);
      any_open = any_open || s[j] > 0.0;
    }
    // An empty row keeps a finite diagonal; the matching value row is scaled
    // by s_t == 0, so the attention output for that row is the zero vector.
    mask(t, t) = (s[t] > 0.0 || any_open) ? std::log(s[t]) : 0.0;
  }
  const std::size_t is = key_toggles.id;
  return key_toggles.tape->record(std::move(mask), {is}, [is](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    const Array& m = t.value(self);
    const Array& sv = t.value(is);
    Array& gs = t.grad_ref(is);
    const std::size_t T = sv.size();
    for (std::size_t r = 0; r < T; ++r) {
      for (std::size_t j = 0; j <= r; ++j) {
        if (m(r, j) == kNegInf || sv[j] <= 0.0) continue;
        gs[j] += g(r, j) / sv[j];
      }
    }
  });
}

Var straight_through(Var a) {
  Array out = as_matrix(a.value());
  for (double& v : out.data) v = v >= 0.5 ? 1.0 : 0.0;
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    Array& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

}  // namespace amt
