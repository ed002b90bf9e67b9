#include "amt/cost.hpp"

#include <map>
#include <sstream>
#include <string>

namespace amt {

std::uint64_t BlockMacs::total() const {
  std::uint64_t sum = ff1 + ff2;
  for (const HeadMacs& h : heads) sum += h.total();
  return sum;
}

FlopLedger FlopLedger::zeros(std::size_t blocks, std::size_t heads) {
  FlopLedger ledger;
  ledger.blocks.assign(blocks, BlockMacs{std::vector<HeadMacs>(heads), 0, 0});
  return ledger;
}

std::uint64_t FlopLedger::encoder_total() const {
  std::uint64_t sum = 0;
  for (const BlockMacs& b : blocks) sum += b.total();
  return sum;
}

std::uint64_t FlopLedger::total() const {
  return encoder_total() + input_proj + output_proj + arbitrator;
}

FlopLedger& FlopLedger::operator+=(const FlopLedger& other) {
  if (blocks.empty()) blocks = FlopLedger::zeros(other.blocks.size(),
                                                 other.blocks.empty() ? 0 : other.blocks[0].heads.size())
                                   .blocks;
  if (other.blocks.size() != blocks.size()) throw ContractError("ledger shapes differ");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    BlockMacs& mine = blocks[b];
    const BlockMacs& theirs = other.blocks[b];
    if (mine.heads.size() != theirs.heads.size()) throw ContractError("ledger shapes differ");
    for (std::size_t h = 0; h < mine.heads.size(); ++h) {
      mine.heads[h].q_proj += theirs.heads[h].q_proj;
      mine.heads[h].k_proj += theirs.heads[h].k_proj;
      mine.heads[h].v_proj += theirs.heads[h].v_proj;
      mine.heads[h].o_proj += theirs.heads[h].o_proj;
      mine.heads[h].cells += theirs.heads[h].cells;
    }
    mine.ff1 += theirs.ff1;
    mine.ff2 += theirs.ff2;
  }
  input_proj += other.input_proj;
  output_proj += other.output_proj;
  arbitrator += other.arbitrator;
  return *this;
}

void write_ledger_csv(std::ostream& out, const FlopLedger& ledger) {
  out << "block,component,head,macs\n";
  for (std::size_t b = 0; b < ledger.blocks.size(); ++b) {
    const BlockMacs& block = ledger.blocks[b];
    for (std::size_t h = 0; h < block.heads.size(); ++h) {
      const HeadMacs& m = block.heads[h];
      out << b << ",q_proj," << h << ',' << m.q_proj << '\n';
      out << b << ",k_proj," << h << ',' << m.k_proj << '\n';
      out << b << ",v_proj," << h << ',' << m.v_proj << '\n';
      out << b << ",o_proj," << h << ',' << m.o_proj << '\n';
      out << b << ",cells," << h << ',' << m.cells << '\n';
    }
    out << b << ",ff1,," << block.ff1 << '\n';
    out << b << ",ff2,," << block.ff2 << '\n';
  }
  out << ",input_proj,," << ledger.input_proj << '\n';
  out << ",output_proj,," << ledger.output_proj << '\n';
  out << ",arbitrator,," << ledger.arbitrator << '\n';
  out << ",encoder_total,," << ledger.encoder_total() << '\n';
  out << ",total,," << ledger.total() << '\n';
}

FlopLedger read_ledger_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "block,component,head,macs") {
    throw ContractError("ledger csv: bad header");
  }
  std::map<std::size_t, std::map<std::size_t, HeadMacs>> heads;
  std::map<std::size_t, std::pair<std::uint64_t, std::uint64_t>> ff;
  FlopLedger ledger;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string block, component, head, macs;
    std::getline(row, block, ',');
    std::getline(row, component, ',');
    std::getline(row, head, ',');
    std::getline(row, macs, ',');
    const std::uint64_t n = std::stoull(macs);
    if (block.empty()) {
      if (component == "input_proj") ledger.input_proj = n;
      else if (component == "output_proj") ledger.output_proj = n;
      else if (component == "arbitrator") ledger.arbitrator = n;
      continue;
    }
    const std::size_t b = std::stoul(block);
    if (component == "ff1") { ff[b].first = n; continue; }
    if (component == "ff2") { ff[b].second = n; continue; }
    HeadMacs& m = heads[b][std::stoul(head)];
    if (component == "q_proj") m.q_proj = n;
    else if (component == "k_proj") m.k_proj = n;
    else if (component == "v_proj") m.v_proj = n;
    else if (component == "o_proj") m.o_proj = n;
    else if (component == "cells") m.cells = n;
    else throw ContractError("ledger csv: unknown component " + component);
  }
  for (const auto& [b, hs] : heads) {
    BlockMacs block;
    for (const auto& [h, m] : hs) block.heads.push_back(m);
    block.ff1 = ff[b].first;
    block.ff2 = ff[b].second;
    ledger.blocks.push_back(std::move(block));
  }
  return ledger;
}

std::uint64_t CostParams::cell_cost(const EncoderConfig& config) const {
  const std::uint64_t base = per_cell_macs ? *per_cell_macs : 2 * config.head_dim();
  if (base == 0) throw ContractError("per_cell_macs must be positive");
  return base + (include_softmax ? kSoftmaxOpsPerCell : 0);
}

namespace {

std::size_t first_key(std::size_t t, std::size_t window) {
  return (window == kNoWindow || window >= t) ? 0 : t - window;
}

}  // namespace

FlopLedger toggled_flops(const ToggleSet& toggles, const EncoderConfig& c,
                         const CostParams& params, std::size_t window) {
  toggles.validate(c);
  if (!toggles.all_binary()) throw ContractError("toggled_flops needs hard toggles");
  const std::size_t T = toggles.frames, B = c.blocks, H = c.heads;
  const std::uint64_t proj = static_cast<std::uint64_t>(c.d) * c.head_dim();
  const std::uint64_t ff1 = static_cast<std::uint64_t>(c.d) * c.ff_dim;
  const std::uint64_t cell = params.cell_cost(c);
  FlopLedger ledger = FlopLedger::zeros(B, H);
  ledger.input_proj = static_cast<std::uint64_t>(T) * c.input_dim * c.d;
  ledger.output_proj = static_cast<std::uint64_t>(T) * c.d * c.output_dim;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t col = b * H + h;
      HeadMacs& m = ledger.blocks[b].heads[h];
      std::uint64_t retained_keys = 0;  // keys at frames [0, t]
      std::vector<std::uint64_t> prefix(T + 1, 0);
      for (std::size_t t = 0; t < T; ++t) {
        const bool q = toggles.query(t, col) == 1.0;
        const bool k = toggles.key(t, col) == 1.0;
        retained_keys += k ? 1 : 0;
        prefix[t + 1] = retained_keys;
        if (k) {
          m.k_proj += proj;
          m.v_proj += proj;
        }
        if (q) {
          m.q_proj += proj;
          m.o_proj += proj;
          m.cells += (prefix[t + 1] - prefix[first_key(t, window)]) * cell;
        }
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      if (toggles.ff(t, b) == 1.0) {
        ledger.blocks[b].ff1 += ff1;
        ledger.blocks[b].ff2 += ff1;
      }
    }
  }
  return ledger;
}

FlopLedger dense_flops(const EncoderConfig& config, std::size_t frames, const CostParams& params,
                       std::size_t window) {
  if (frames == 0) throw ContractError("dense_flops needs at least one frame");
  return toggled_flops(ToggleSet::ones(frames, config.blocks, config.heads), config, params,
                       window);
}

double compute_loss(const ToggleSet& soft, const EncoderConfig& c, const CostParams& params,
                    std::size_t window) {
  soft.validate(c);
  const std::size_t T = soft.frames, B = c.blocks, H = c.heads;
  const double proj = static_cast<double>(c.d * c.head_dim());
  const double ff = static_cast<double>(c.d * c.ff_dim);
  const double cell = static_cast<double>(params.cell_cost(c));
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t col = b * H + h;
      std::vector<double> prefix(T + 1, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const double q = soft.query(t, col), k = soft.key(t, col);
        prefix[t + 1] = prefix[t] + k;
        total += 2.0 * proj * (q + k);
        total += q * (prefix[t + 1] - prefix[first_key(t, window)]) * cell;
      }
    }
    for (std::size_t t = 0; t < T; ++t) total += 2.0 * ff * soft.ff(t, b);
  }
  return total;
}

Var compute_loss(const Var& ff, const Var& query, const Var& key, const EncoderConfig& c,
                 const CostParams& params, std::size_t window) {
  const std::size_t T = query.rows();
  if (ff.rows() != T || key.rows() != T || ff.cols() != c.blocks ||
      query.cols() != c.blocks * c.heads || key.cols() != c.blocks * c.heads) {
    throw DimensionError("compute_loss: toggle shapes do not match encoder");
  }
  Tape& tape = *query.tape;
  Array band = Array::matrix(T, T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = first_key(t, window); j <= t; ++j) band(t, j) = 1.0;
  const double proj = static_cast<double>(c.d * c.head_dim());
  const double ffc = static_cast<double>(c.d * c.ff_dim);
  const double cell = static_cast<double>(params.cell_cost(c));
  Var reachable_keys = matmul(tape.constant(std::move(band)), key);
  Var cells = scale(sum(mul(query, reachable_keys)), cell);
  Var projections = scale(add(sum(query), sum(key)), 2.0 * proj);
  return add(add(cells, projections), scale(sum(ff), 2.0 * ffc));
}

double ccr(const FlopLedger& dense, const FlopLedger& actual, bool include_overhead) {
  const auto pick = [include_overhead](const FlopLedger& l) {
    return static_cast<double>(include_overhead ? l.total() : l.encoder_total());
  };
  const double base = pick(dense);
  if (base == 0.0) throw ContractError("ccr with zero dense compute");
  return (base - pick(actual)) / base;
}

}  // namespace amt
