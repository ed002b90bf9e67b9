#include "amt/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <vector>

namespace amt {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& in) {
  KeyValueConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ContractError("config line " + std::to_string(line_no) + ": empty key");
    config.values_[key] = trim(line.substr(eq + 1));
  }
  return config;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  return parse(in);
}

const std::string& KeyValueConfig::at(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ContractError("missing config key " + key);
  return it->second;
}

void KeyValueConfig::merge(const KeyValueConfig& overrides) {
  for (const auto& [k, v] : overrides.values_) values_[k] = v;
}

void KeyValueConfig::write(std::ostream& out) const {
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
}

void SyntheticTaskConfig::validate() const {
  if (n_classes < 1 || frame_dim < 1) throw ContractError("data: need classes and frame_dim");
  if (active_min > active_max || silence_min > silence_max || utt_min > utt_max) {
    throw ContractError("data: empty length range");
  }
  if (silence_max == 0 && active_max == 0) throw ContractError("data: segments cannot be empty");
  if (utt_min == 0) throw ContractError("data: utterances need at least one frame");
  if (silence_noise_std < 0.0 || active_noise_std < 0.0) {
    throw ContractError("data: noise std must be >= 0");
  }
}

std::string to_string(ArbitratorKind kind) {
  return kind == ArbitratorKind::feedforward ? "ff" : "rnn";
}

std::string to_string(ArbitratorLayout layout) {
  return layout == ArbitratorLayout::single ? "single" : "dual";
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.encoder.d = 64;
  c.encoder.heads = 4;
  c.encoder.blocks = 4;
  c.encoder.ff_dim = 128;
  c.encoder.max_len = 256;
  c.encoder.input_dim = c.data.frame_dim;
  c.encoder.output_dim = c.data.n_classes;
  c.arbitrator.hidden = 32;
  c.schedule.pretrain_epochs = 30;
  c.schedule.finetune_epochs = 20;
  c.schedule.beta_start = 0.05;
  c.schedule.beta_end = 0.25;
  return c;
}

namespace {

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ContractError("config " + key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ContractError("config " + key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ContractError("config " + key + ": expected true/false, got '" + v + "'");
}

std::string real_string(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

#define AMT_SIZE(KEY, MEMBER)                                                          \
  Field {                                                                             \
    KEY, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_size(KEY, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); }             \
  }
#define AMT_REAL(KEY, MEMBER)                                                          \
  Field {                                                                             \
    KEY, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_real(KEY, v); }, \
        [](const ExperimentConfig& c) { return real_string(c.MEMBER); }                \
  }
#define AMT_BOOL(KEY, MEMBER)                                                          \
  Field {                                                                             \
    KEY, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); }, \
        [](const ExperimentConfig& c) { return std::string(c.MEMBER ? "true" : "false"); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"seed",
            [](ExperimentConfig& c, const std::string& v) { c.seed = parse_size("seed", v); },
            [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      AMT_SIZE("encoder.input_dim", encoder.input_dim),
      AMT_SIZE("encoder.d", encoder.d),
      AMT_SIZE("encoder.heads", encoder.heads),
      AMT_SIZE("encoder.blocks", encoder.blocks),
      AMT_SIZE("encoder.ff_dim", encoder.ff_dim),
      AMT_SIZE("encoder.output_dim", encoder.output_dim),
      AMT_SIZE("encoder.max_len", encoder.max_len),
      Field{"encoder.alpha",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "auto") c.encoder.alpha.reset();
              else c.encoder.alpha = parse_real("encoder.alpha", v);
            },
            [](const ExperimentConfig& c) {
              return c.encoder.alpha ? real_string(*c.encoder.alpha) : std::string("auto");
            }},
      Field{"arb.kind",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "ff") c.arbitrator.kind = ArbitratorKind::feedforward;
              else if (v == "rnn") c.arbitrator.kind = ArbitratorKind::recurrent;
              else throw ContractError("config arb.kind: expected ff or rnn");
            },
            [](const ExperimentConfig& c) { return to_string(c.arbitrator.kind); }},
      Field{"arb.layout",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "single") c.arbitrator.layout = ArbitratorLayout::single;
              else if (v == "dual") c.arbitrator.layout = ArbitratorLayout::dual;
              else throw ContractError("config arb.layout: expected single or dual");
            },
            [](const ExperimentConfig& c) { return to_string(c.arbitrator.layout); }},
      AMT_SIZE("arb.hidden", arbitrator.hidden),
      AMT_SIZE("arb.layers", arbitrator.layers),
      AMT_SIZE("arb.split_block", arbitrator.split_block),
      AMT_REAL("arb.bias_init", arbitrator.bias_init),
      AMT_BOOL("toggle.ff", toggles.ff),
      AMT_BOOL("toggle.query", toggles.query),
      AMT_BOOL("toggle.key", toggles.key),
      AMT_SIZE("data.n_classes", data.n_classes),
      AMT_SIZE("data.frame_dim", data.frame_dim),
      AMT_SIZE("data.active_min", data.active_min),
      AMT_SIZE("data.active_max", data.active_max),
      AMT_SIZE("data.silence_min", data.silence_min),
      AMT_SIZE("data.silence_max", data.silence_max),
      AMT_REAL("data.silence_noise_std", data.silence_noise_std),
      AMT_REAL("data.active_noise_std", data.active_noise_std),
      AMT_SIZE("data.utt_min", data.utt_min),
      AMT_SIZE("data.utt_max", data.utt_max),
      AMT_SIZE("data.n_train", data.n_train),
      AMT_SIZE("data.n_test", data.n_test),
      AMT_REAL("sched.beta_start", schedule.beta_start),
      AMT_REAL("sched.beta_end", schedule.beta_end),
      AMT_REAL("sched.temp_start", schedule.temp_start),
      AMT_REAL("sched.temp_end", schedule.temp_end),
      AMT_REAL("sched.lambda_start", schedule.lambda_start),
      AMT_REAL("sched.lambda_end", schedule.lambda_end),
      AMT_SIZE("sched.pretrain_epochs", schedule.pretrain_epochs),
      AMT_SIZE("sched.finetune_epochs", schedule.finetune_epochs),
      AMT_SIZE("sched.settle_epochs", schedule.settle_epochs),
      AMT_REAL("train.lr", train.learning_rate),
      AMT_SIZE("train.warmup_steps", train.warmup_steps),
      AMT_SIZE("train.batch", train.batch),
      AMT_REAL("train.adam_beta1", train.adam_beta1),
      AMT_REAL("train.adam_beta2", train.adam_beta2),
      AMT_REAL("train.adam_eps", train.adam_eps),
      AMT_BOOL("train.normalize_compute", train.normalize_compute),
      AMT_BOOL("train.straight_through", train.straight_through),
      Field{"cost.per_cell_macs",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "auto") c.cost.per_cell_macs.reset();
              else c.cost.per_cell_macs = parse_size("cost.per_cell_macs", v);
            },
            [](const ExperimentConfig& c) {
              return c.cost.per_cell_macs ? std::to_string(*c.cost.per_cell_macs)
                                          : std::string("auto");
            }},
      AMT_BOOL("cost.include_softmax", cost.include_softmax),
      AMT_BOOL("cost.include_overhead", cost.include_overhead),
      AMT_SIZE("eval.window", eval.window),
      AMT_BOOL("eval.pool_ccr", eval.pool_ccr),
  };
  return table;
}

#undef AMT_SIZE
#undef AMT_REAL
#undef AMT_BOOL

}  // namespace

ExperimentConfig ExperimentConfig::from(const KeyValueConfig& kv) {
  ExperimentConfig c = desk();
  for (const auto& [key, value] : kv.values()) {
    bool known = false;
    for (const Field& f : fields()) {
      if (key == f.key) {
        f.set(c, value);
        known = true;
        break;
      }
    }
    if (!known) throw ContractError("unknown config key '" + key + "'");
  }
  // The encoder reads the task's frames and predicts its classes unless the
  // configuration pins different widths.
  if (!kv.contains("encoder.input_dim")) c.encoder.input_dim = c.data.frame_dim;
  if (!kv.contains("encoder.output_dim")) c.encoder.output_dim = c.data.n_classes;
  c.encoder.validate();
  c.arbitrator.validate(c.encoder.blocks);
  c.schedule.validate();
  c.data.validate();
  return c;
}

KeyValueConfig ExperimentConfig::to_kv() const {
  KeyValueConfig kv;
  for (const Field& f : fields()) kv.set(f.key, f.get(*this));
  return kv;
}

}  // namespace amt
