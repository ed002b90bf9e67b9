#include "amt/arbitrator.hpp"

#include <cmath>

namespace amt {

ArbitratorConfig ArbitratorConfig::reference(ArbitratorKind kind, ArbitratorLayout layout,
                                             std::size_t hidden) {
  ArbitratorConfig c;
  c.kind = kind;
  c.layout = layout;
  c.hidden = hidden;
  c.layers = kind == ArbitratorKind::feedforward ? 1 : 2;
  return c;
}

std::size_t ArbitratorConfig::split(std::size_t blocks) const {
  return split_block == 0 ? blocks / 2 : split_block;
}

void ArbitratorConfig::validate(std::size_t blocks) const {
  if (hidden == 0) throw ContractError("arbitrator hidden size must be >= 1");
  if (layers == 0) throw ContractError("arbitrator needs at least one layer");
  if (layout == ArbitratorLayout::dual) {
    const std::size_t s = split(blocks);
    if (s == 0 || s >= blocks) {
      throw ContractError("dual arbitrator split_block must lie in (0, blocks)");
    }
  }
}

Decision dual_route(const Decision& bottom, const Decision& top, std::size_t split_block) {
  if (bottom.first_block != 0 || bottom.blocks != split_block ||
      (top.blocks > 0 && top.first_block != split_block)) {
    throw ContractError("dual decisions do not tile the block range at split " +
                        std::to_string(split_block));
  }
  if (top.blocks > 0 && top.heads != bottom.heads) throw ContractError("head counts differ");
  Decision out = bottom;
  out.blocks = bottom.blocks + top.blocks;
  out.ff.insert(out.ff.end(), top.ff.begin(), top.ff.end());
  out.query.insert(out.query.end(), top.query.begin(), top.query.end());
  out.key.insert(out.key.end(), top.key.begin(), top.key.end());
  return out;
}

FrameToggles harden(const Decision& decision) {
  auto threshold = [](const std::vector<double>& p) {
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] >= 0.5 ? 1.0 : 0.0;
    return out;
  };
  return {threshold(decision.ff), threshold(decision.query), threshold(decision.key)};
}

namespace {

std::string layer_name(const std::string& prefix, std::size_t layer, const char* leaf) {
  return prefix + "l" + std::to_string(layer) + "/" + leaf;
}

const Var& at(const VarMap& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ContractError("parameter '" + name + "' not bound");
  return it->second;
}

}  // namespace

Arbitrator::Arbitrator(ArbitratorConfig config, std::size_t blocks, std::size_t heads,
                       std::size_t input_dim, std::size_t model_dim, ParamStore params)
    : config_(config),
      blocks_(blocks),
      heads_(heads),
      input_dim_(input_dim),
      model_dim_(model_dim),
      params_(std::move(params)) {
  config_.validate(blocks_);
}

std::string Arbitrator::prefix(std::size_t group, std::size_t groups) {
  if (groups == 1) return "arb/single/";
  return group == 0 ? "arb/bottom/" : "arb/top/";
}

std::size_t Arbitrator::group_begin(std::size_t group) const {
  return group == 0 ? 0 : config_.split(blocks_);
}

std::size_t Arbitrator::group_end(std::size_t group) const {
  return (groups() == 1 || group == 1) ? blocks_ : config_.split(blocks_);
}

std::size_t Arbitrator::group_input_dim(std::size_t group) const {
  return group == 0 ? input_dim_ : model_dim_;
}

std::size_t Arbitrator::group_output_dim(std::size_t group) const {
  const std::size_t n = group_end(group) - group_begin(group);
  return n + 2 * n * heads_;
}

namespace {

struct GroupShape {
  std::size_t in, out;
};

std::vector<GroupShape> group_shapes(const ArbitratorConfig& c, std::size_t blocks,
                                     std::size_t heads, std::size_t input_dim,
                                     std::size_t model_dim) {
  c.validate(blocks);
  auto width = [heads](std::size_t n) { return n + 2 * n * heads; };
  if (c.layout == ArbitratorLayout::single) return {{input_dim, width(blocks)}};
  const std::size_t s = c.split(blocks);
  return {{input_dim, width(s)}, {model_dim, width(blocks - s)}};
}

}  // namespace

ParamStore Arbitrator::init_params(const ArbitratorConfig& c, std::size_t blocks,
                                   std::size_t heads, std::size_t input_dim,
                                   std::size_t model_dim, std::mt19937_64& rng) {
  const auto shapes = group_shapes(c, blocks, heads, input_dim, model_dim);
  ParamStore p;
  const std::size_t h = c.hidden;
  for (std::size_t g = 0; g < shapes.size(); ++g) {
    const std::string pre = prefix(g, shapes.size());
    std::size_t in = shapes[g].in;
    for (std::size_t l = 0; l < c.layers; ++l) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(in));
      if (c.kind == ArbitratorKind::feedforward) {
        p.set(layer_name(pre, l, "w"), random_normal({in, h}, sd, rng));
        p.set(layer_name(pre, l, "b"), Array({h}));
      } else {
        p.set(layer_name(pre, l, "wx"), random_normal({in, 4 * h}, sd, rng));
        p.set(layer_name(pre, l, "wh"),
              random_normal({h, 4 * h}, 1.0 / std::sqrt(static_cast<double>(h)), rng));
        Array bias({4 * h});
        for (std::size_t i = h; i < 2 * h; ++i) bias[i] = 1.0;  // forget gate
        p.set(layer_name(pre, l, "b"), std::move(bias));
      }
      in = h;
    }
    p.set(pre + "proj/w",
          random_normal({h, shapes[g].out}, 0.1 / std::sqrt(static_cast<double>(h)), rng));
    p.set(pre + "proj/b", Array({shapes[g].out}, c.bias_init));
  }
  return p;
}

std::size_t Arbitrator::param_count(const ArbitratorConfig& c, std::size_t blocks,
                                    std::size_t heads, std::size_t input_dim,
                                    std::size_t model_dim) {
  std::size_t total = 0;
  const std::size_t h = c.hidden;
  for (const GroupShape& g : group_shapes(c, blocks, heads, input_dim, model_dim)) {
    std::size_t in = g.in;
    for (std::size_t l = 0; l < c.layers; ++l) {
      total += c.kind == ArbitratorKind::feedforward ? in * h + h : 4 * h * (in + h) + 4 * h;
      in = h;
    }
    total += h * g.out + g.out;
  }
  return total;
}

std::uint64_t Arbitrator::macs_per_frame(const ArbitratorConfig& c, std::size_t blocks,
                                         std::size_t heads, std::size_t input_dim,
                                         std::size_t model_dim) {
  std::uint64_t total = 0;
  const std::size_t h = c.hidden;
  for (const GroupShape& g : group_shapes(c, blocks, heads, input_dim, model_dim)) {
    std::size_t in = g.in;
    for (std::size_t l = 0; l < c.layers; ++l) {
      total += c.kind == ArbitratorKind::feedforward ? in * h : 4 * h * (in + h);
      in = h;
    }
    total += h * g.out;
  }
  return total;
}

Var Arbitrator::forward(const VarMap& p, std::size_t group, Var inputs) const {
  if (inputs.cols() != group_input_dim(group)) {
    throw DimensionError("arbitrator input width " + std::to_string(inputs.cols()) +
                         " != " + std::to_string(group_input_dim(group)));
  }
  const std::string pre = prefix(group, groups());
  const std::size_t h = config_.hidden;
  Tape& tape = *inputs.tape;
  Var x = inputs;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    if (config_.kind == ArbitratorKind::feedforward) {
      x = tanh(add_row(matmul(x, at(p, layer_name(pre, l, "w"))), at(p, layer_name(pre, l, "b"))));
      continue;
    }
    const std::size_t T = x.rows();
    Var projected = add_row(matmul(x, at(p, layer_name(pre, l, "wx"))),
                            at(p, layer_name(pre, l, "b")));
    const Var& wh = at(p, layer_name(pre, l, "wh"));
    Var hs = tape.constant(Array::matrix(1, h));
    Var cs = tape.constant(Array::matrix(1, h));
    std::vector<Var> outputs;
    outputs.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
      Var gates = add(slice_rows(projected, t, t + 1), matmul(hs, wh));
      Var in = sigmoid(slice_cols(gates, 0, h));
      Var forget = sigmoid(slice_cols(gates, h, 2 * h));
      Var cand = tanh(slice_cols(gates, 2 * h, 3 * h));
      Var out = sigmoid(slice_cols(gates, 3 * h, 4 * h));
      cs = add(mul(forget, cs), mul(in, cand));
      hs = mul(out, tanh(cs));
      outputs.push_back(hs);
    }
    x = concat_rows(outputs);
  }
  return sigmoid(add_row(matmul(x, at(p, pre + "proj/w")), at(p, pre + "proj/b")));
}

ArbitratorState Arbitrator::start() const {
  ArbitratorState state;
  if (config_.kind != ArbitratorKind::recurrent) return state;
  const std::size_t h = config_.hidden;
  state.lstm.assign(groups(), std::vector<std::pair<Array, Array>>(
                                  config_.layers, {Array({h}), Array({h})}));
  return state;
}

Decision Arbitrator::decide(std::size_t group, const Array& input, ArbitratorState& state,
                            std::uint64_t* macs) const {
  if (input.size() != group_input_dim(group)) throw DimensionError("arbitrator input size");
  const std::string pre = prefix(group, groups());
  MacCounter counter;
  Array x({1, input.size()}, input.data);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    if (config_.kind == ArbitratorKind::feedforward) {
      x = matmul(x, params_.get(layer_name(pre, l, "w")));
      const Array& b = params_.get(layer_name(pre, l, "b"));
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::tanh(x[i] + b[i]);
      continue;
    }
    LstmParams lp{params_.get(layer_name(pre, l, "wx")), params_.get(layer_name(pre, l, "wh")),
                  params_.get(layer_name(pre, l, "b"))};
    auto& [h, c] = state.lstm.at(group).at(l);
    auto [h_next, c_next] = lstm_step(x, h, c, lp);
    h = std::move(h_next);
    c = std::move(c_next);
    x = Array({1, h.size()}, h.data);
  }
  Array logits = matmul(x, params_.get(pre + "proj/w"));
  const Array& b = params_.get(pre + "proj/b");
  if (macs != nullptr) *macs += counter.count();

  Decision d;
  d.first_block = group_begin(group);
  d.blocks = group_end(group) - d.first_block;
  d.heads = heads_;
  const std::size_t n = d.blocks, nh = n * heads_;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double prob = amt::sigmoid(logits[i] + b[i]);
    if (i < n) d.ff.push_back(prob);
    else if (i < n + nh) d.query.push_back(prob);
    else d.key.push_back(prob);
  }
  return d;
}

}  // namespace amt
