#include "amt/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace amt {

double EncoderConfig::attention_scale() const {
  return alpha ? *alpha : 1.0 / std::sqrt(static_cast<double>(d));
}

void EncoderConfig::validate() const {
  if (input_dim == 0 || d == 0 || heads == 0 || blocks == 0 || ff_dim == 0 || output_dim == 0 ||
      max_len == 0) {
    throw ContractError("encoder dimensions must all be >= 1");
  }
  if (d % heads != 0) {
    throw ContractError("model dim " + std::to_string(d) + " not divisible by " +
                        std::to_string(heads) + " heads");
  }
}

ToggleSet ToggleSet::filled(std::size_t frames, std::size_t blocks, std::size_t heads,
                            double value) {
  ToggleSet set;
  set.frames = frames;
  set.blocks = blocks;
  set.heads = heads;
  set.ff = Array::matrix(frames, blocks, value);
  set.query = Array::matrix(frames, blocks * heads, value);
  set.key = Array::matrix(frames, blocks * heads, value);
  set.hard = value == 0.0 || value == 1.0;
  return set;
}

bool ToggleSet::all_binary() const {
  for (const Array* a : {&ff, &query, &key})
    for (double v : a->data)
      if (v != 0.0 && v != 1.0) return false;
  return true;
}

void ToggleSet::validate(const EncoderConfig& config) const {
  if (blocks != config.blocks || heads != config.heads) {
    throw ContractError("toggle set shaped for a different encoder");
  }
  const std::size_t bh = blocks * heads;
  if (ff.rows() != frames || ff.cols() != blocks || ff.size() != frames * blocks ||
      query.rows() != frames || query.cols() != bh || key.rows() != frames || key.cols() != bh ||
      query.size() != frames * bh || key.size() != frames * bh) {
    throw ContractError("toggle arrays have inconsistent shapes");
  }
  for (const Array* a : {&ff, &query, &key})
    for (double v : a->data)
      if (!(v >= 0.0 && v <= 1.0)) throw ContractError("toggle value outside [0,1]");
  if (hard && !all_binary()) throw ContractError("hard toggle set holds non-binary values");
}

FrameToggles FrameToggles::ones(std::size_t blocks, std::size_t heads) {
  return {std::vector<double>(blocks, 1.0), std::vector<double>(blocks * heads, 1.0),
          std::vector<double>(blocks * heads, 1.0)};
}

FrameToggles FrameToggles::from(const ToggleSet& set, std::size_t frame) {
  auto row = [frame](const Array& a) {
    auto r = a.row(frame);
    return std::vector<double>(r.begin(), r.end());
  };
  return {row(set.ff), row(set.query), row(set.key)};
}

void check_hard(const FrameToggles& toggles, std::size_t blocks, std::size_t heads) {
  if (toggles.ff.size() != blocks || toggles.query.size() != blocks * heads ||
      toggles.key.size() != blocks * heads) {
    throw ContractError("frame toggles shaped for a different encoder");
  }
  for (const auto* v : {&toggles.ff, &toggles.query, &toggles.key})
    for (double x : *v)
      if (x != 0.0 && x != 1.0) throw ContractError("streaming needs hard {0,1} toggles");
}

VarMap bind(Tape& tape, const ParamStore& params, bool trainable) {
  VarMap vars;
  for (const auto& [name, value] : params) {
    vars.emplace(name, trainable ? tape.parameter(value) : tape.constant(value));
  }
  return vars;
}

ToggleVars ToggleVars::constant(Tape& tape, const ToggleSet& set) {
  return {tape.constant(set.ff), tape.constant(set.query), tape.constant(set.key)};
}

BlockToggles ToggleVars::block(std::size_t b, std::size_t heads) const {
  return {slice_cols(ff, b, b + 1), slice_cols(query, b * heads, (b + 1) * heads),
          slice_cols(key, b * heads, (b + 1) * heads)};
}

Array build_key_mask(const std::vector<double>& key_toggles, std::size_t window) {
  Tape tape;
  Var s = tape.constant(Array({key_toggles.size(), 1}, key_toggles));
  return key_mask(s, window).value();
}

Array sliding_window_mask(std::size_t frames, std::size_t window) {
  Array mask = Array::matrix(frames, frames, kNegInf);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t first = window >= t ? 0 : t - window;
    for (std::size_t j = first; j <= t; ++j) mask(t, j) = 0.0;
  }
  return mask;
}

Var attention_head(Var q, Var k, Var v, Var mask, Var key_toggles, double alpha) {
  Var logits = add(scale(matmul_nt(q, k), alpha), mask);
  return matmul(softmax_rows(logits), mul_col(v, key_toggles));
}

Var apply_query_toggle(Var head_output, Var query_toggles) {
  return mul_col(head_output, query_toggles);
}

namespace {

const Var& at(const VarMap& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ContractError("parameter '" + name + "' not bound");
  return it->second;
}

Array column_slice(const Array& a, std::size_t begin, std::size_t end) {
  Array out = Array::matrix(a.rows(), end - begin);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = a(r, c);
  return out;
}

Array row_slice(const Array& a, std::size_t begin, std::size_t end) {
  const std::size_t n = a.cols();
  return Array({end - begin, n}, std::vector<double>(a.data.begin() + begin * n,
                                                     a.data.begin() + end * n));
}

void add_bias(Array& x, const Array& bias) {
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) += bias[c];
}

}  // namespace

std::string Encoder::name(std::size_t block, const char* leaf) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "enc/block%02zu/%s", block, leaf);
  return buf;
}

Encoder::Encoder(EncoderConfig config, ParamStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const std::size_t dh = config_.head_dim();
  head_weights_.resize(config_.blocks);
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    const Array& wq = params_.get(name(b, "wq"));
    const Array& wk = params_.get(name(b, "wk"));
    const Array& wv = params_.get(name(b, "wv"));
    const Array& wo = params_.get(name(b, "wo"));
    for (std::size_t h = 0; h < config_.heads; ++h) {
      head_weights_[b].push_back({column_slice(wq, h * dh, (h + 1) * dh),
                                  column_slice(wk, h * dh, (h + 1) * dh),
                                  column_slice(wv, h * dh, (h + 1) * dh),
                                  row_slice(wo, h * dh, (h + 1) * dh)});
    }
  }
}

ParamStore Encoder::init_params(const EncoderConfig& c, std::mt19937_64& rng) {
  c.validate();
  ParamStore p;
  auto dense = [&](std::size_t in, std::size_t out) {
    return random_normal({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  };
  p.set("enc/in/w", dense(c.input_dim, c.d));
  p.set("enc/in/b", Array({c.d}));
  p.set("enc/pos", random_normal({c.max_len, c.d}, 0.1, rng));
  for (std::size_t b = 0; b < c.blocks; ++b) {
    p.set(name(b, "wq"), dense(c.d, c.d));
    p.set(name(b, "wk"), dense(c.d, c.d));
    p.set(name(b, "wv"), dense(c.d, c.d));
    p.set(name(b, "wo"), dense(c.d, c.d));
    p.set(name(b, "ln1_g"), Array({c.d}, 1.0));
    p.set(name(b, "ln1_b"), Array({c.d}));
    p.set(name(b, "ff1_w"), dense(c.d, c.ff_dim));
    p.set(name(b, "ff1_b"), Array({c.ff_dim}));
    p.set(name(b, "ff2_w"), dense(c.ff_dim, c.d));
    p.set(name(b, "ff2_b"), Array({c.d}));
    p.set(name(b, "ln2_g"), Array({c.d}, 1.0));
    p.set(name(b, "ln2_b"), Array({c.d}));
  }
  p.set("enc/out/w", dense(c.d, c.output_dim));
  p.set("enc/out/b", Array({c.output_dim}));
  return p;
}

std::size_t Encoder::param_count(const EncoderConfig& c) {
  const std::size_t per_block = 4 * c.d * c.d + 2 * c.d          // attention + ln1
                                + c.d * c.ff_dim + c.ff_dim      // ff1
                                + c.ff_dim * c.d + c.d + 2 * c.d;  // ff2 + ln2
  return c.input_dim * c.d + c.d + c.max_len * c.d + c.blocks * per_block +
         c.d * c.output_dim + c.output_dim;
}

Var Encoder::embed(const VarMap& p, Var features) const {
  const std::size_t T = features.rows();
  if (features.cols() != config_.input_dim) {
    throw DimensionError("features have " + std::to_string(features.cols()) +
                         " columns, encoder expects " + std::to_string(config_.input_dim));
  }
  if (T > config_.max_len) throw ContractError("utterance longer than positional table");
  Var x = add_row(matmul(features, at(p, "enc/in/w")), at(p, "enc/in/b"));
  return add(x, slice_rows(at(p, "enc/pos"), 0, T));
}

Var Encoder::ff_module(const VarMap& p, std::size_t b, Var x, Var ff_toggles) const {
  Var hidden = relu(add_row(matmul(x, at(p, name(b, "ff1_w"))), at(p, name(b, "ff1_b"))));
  Var y = add_row(matmul(hidden, at(p, name(b, "ff2_w"))), at(p, name(b, "ff2_b")));
  return layer_norm_rows(add(x, mul_col(y, ff_toggles)), at(p, name(b, "ln2_g")),
                         at(p, name(b, "ln2_b")));
}

Var Encoder::block(const VarMap& p, std::size_t b, Var x, const BlockToggles& toggles,
                   std::size_t window) const {
  const std::size_t H = config_.heads, dh = config_.head_dim();
  const double alpha = config_.attention_scale();
  Var q = matmul(x, at(p, name(b, "wq")));
  Var k = matmul(x, at(p, name(b, "wk")));
  Var v = matmul(x, at(p, name(b, "wv")));
  std::vector<Var> heads;
  heads.reserve(H);
  for (std::size_t h = 0; h < H; ++h) {
    Var s_k = slice_cols(toggles.key, h, h + 1);
    Var s_q = slice_cols(toggles.query, h, h + 1);
    Var out = attention_head(slice_cols(q, h * dh, (h + 1) * dh),
                             slice_cols(k, h * dh, (h + 1) * dh),
                             slice_cols(v, h * dh, (h + 1) * dh), key_mask(s_k, window), s_k,
                             alpha);
    heads.push_back(apply_query_toggle(out, s_q));
  }
  Var y = matmul(concat_cols(heads), at(p, name(b, "wo")));
  Var attended = layer_norm_rows(add(x, y), at(p, name(b, "ln1_g")), at(p, name(b, "ln1_b")));
  return ff_module(p, b, attended, toggles.ff);
}

Var Encoder::project_output(const VarMap& p, Var x) const {
  return add_row(matmul(x, at(p, "enc/out/w")), at(p, "enc/out/b"));
}

Var Encoder::forward_train(const VarMap& p, Var features, const ToggleVars& toggles,
                           std::size_t window) const {
  Var x = embed(p, features);
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    x = block(p, b, x, toggles.block(b, config_.heads), window);
  }
  return project_output(p, x);
}

Array Encoder::forward(const Array& features, const ToggleSet& toggles, std::size_t window) const {
  toggles.validate(config_);
  if (toggles.frames != features.rows()) throw ContractError("toggle frames != feature frames");
  Tape tape;
  VarMap p = bind(tape, params_, false);
  Var out = forward_train(p, tape.constant(features), ToggleVars::constant(tape, toggles), window);
  return out.value();
}

Array Encoder::input_projection(const Array& frame) const {
  if (frame.size() != config_.input_dim) throw DimensionError("frame size != input_dim");
  Array x = matmul(Array({1, frame.size()}, frame.data), params_.get("enc/in/w"));
  add_bias(x, params_.get("enc/in/b"));
  return x;
}

StreamState Encoder::start_stream(std::size_t window) const {
  StreamState state;
  state.window = window;
  const std::size_t dh = config_.head_dim();
  state.caches.resize(config_.blocks * config_.heads);
  for (auto& cache : state.caches) {
    cache.keys = Array::matrix(0, dh);
    cache.values = Array::matrix(0, dh);
  }
  state.block_frames.assign(config_.blocks, 0);
  return state;
}

Array Encoder::stream_embed(const StreamState& state, const Array& frame,
                            FlopLedger& ledger) const {
  if (state.next_frame >= config_.max_len) {
    throw ContractError("stream exceeded positional table length");
  }
  MacCounter counter;
  Array x = input_projection(frame);
  const auto pos = params_.get("enc/pos").row(state.next_frame);
  for (std::size_t c = 0; c < config_.d; ++c) x[c] += pos[c];
  ledger.input_proj += counter.count();
  return x;
}

namespace {

void append_row(Array& a, const Array& row) {
  a.data.insert(a.data.end(), row.data.begin(), row.data.end());
  a.shape[0] += 1;
}

void evict_before(HeadCache& cache, std::size_t first_frame) {
  std::size_t drop = 0;
  while (drop < cache.frames.size() && cache.frames[drop] < first_frame) ++drop;
  if (drop == 0) return;
  const std::size_t w = cache.keys.cols();
  cache.frames.erase(cache.frames.begin(), cache.frames.begin() + static_cast<std::ptrdiff_t>(drop));
  for (Array* a : {&cache.keys, &cache.values}) {
    a->data.erase(a->data.begin(), a->data.begin() + static_cast<std::ptrdiff_t>(drop * w));
    a->shape[0] -= drop;
  }
}

}  // namespace

Array Encoder::stream_block(StreamState& state, std::size_t b, const Array& x,
                            const FrameToggles& toggles, FlopLedger& ledger) const {
  const std::size_t H = config_.heads, d = config_.d;
  const std::size_t t = state.next_frame;
  const double alpha = config_.attention_scale();
  check_hard(toggles, config_.blocks, H);
  if (x.size() != d) throw DimensionError("stream_block input size != d");
  const Array xr({1, d}, x.data);
  Array attended = xr;
  BlockMacs& macs = ledger.blocks.at(b);

  for (std::size_t h = 0; h < H; ++h) {
    const HeadWeights& w = head_weights_[b][h];
    HeadCache& cache = state.caches[b * H + h];
    HeadMacs& hm = macs.heads[h];
    if (toggles.key[b * H + h] == 1.0) {
      {
        MacCounter c;
        append_row(cache.keys, matmul(xr, w.wk));
        hm.k_proj += c.count();
      }
      {
        MacCounter c;
        append_row(cache.values, matmul(xr, w.wv));
        hm.v_proj += c.count();
      }
      cache.frames.push_back(t);
    }
    if (state.window != kNoWindow && t > state.window) evict_before(cache, t - state.window);
    if (toggles.query[b * H + h] != 1.0) continue;

    Array query;
    {
      MacCounter c;
      query = matmul(xr, w.wq);
      hm.q_proj += c.count();
    }
    Array head_out = Array::matrix(1, config_.head_dim());
    if (cache.size() > 0) {
      MacCounter c;
      Array scores;
      gemm(false, true, query, cache.keys, scores, false);
      for (double& s : scores.data) s *= alpha;
      softmax_inplace(scores.row(0));
      gemm(false, false, scores, cache.values, head_out, false);
      hm.cells += c.count();
    }
    MacCounter c;
    gemm(false, false, head_out, w.wo, attended, true);
    hm.o_proj += c.count();
  }
  attended = layer_norm(attended, params_.get(name(b, "ln1_g")), params_.get(name(b, "ln1_b")));

  Array out = attended;
  if (toggles.ff[b] == 1.0) {
    Array hidden;
    {
      MacCounter c;
      hidden = matmul(attended, params_.get(name(b, "ff1_w")));
      macs.ff1 += c.count();
    }
    add_bias(hidden, params_.get(name(b, "ff1_b")));
    for (double& v : hidden.data) v = v > 0.0 ? v : 0.0;
    MacCounter c;
    gemm(false, false, hidden, params_.get(name(b, "ff2_w")), out, true);
    macs.ff2 += c.count();
    add_bias(out, params_.get(name(b, "ff2_b")));
  }
  ++state.block_frames[b];
  return layer_norm(out, params_.get(name(b, "ln2_g")), params_.get(name(b, "ln2_b")));
}

Array Encoder::stream_output(const Array& x, FlopLedger& ledger) const {
  MacCounter counter;
  Array y = matmul(Array({1, x.size()}, x.data), params_.get("enc/out/w"));
  add_bias(y, params_.get("enc/out/b"));
  ledger.output_proj += counter.count();
  return y;
}

Array Encoder::stream_step(StreamState& state, const Array& frame, const FrameToggles& toggles,
                           FlopLedger& ledger) const {
  check_hard(toggles, config_.blocks, config_.heads);
  Array x = stream_embed(state, frame, ledger);
  for (std::size_t b = 0; b < config_.blocks; ++b) x = stream_block(state, b, x, toggles, ledger);
  Array y = stream_output(x, ledger);
  finish_frame(state);
  return y;
}

}  // namespace amt
