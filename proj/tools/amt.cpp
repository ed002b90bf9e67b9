#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "amt/check.hpp"
#include "amt/checkpoint.hpp"
#include "amt/config.hpp"
#include "amt/cost.hpp"
#include "amt/evaluate.hpp"
#include "amt/model.hpp"
#include "amt/synthetic.hpp"
#include "amt/train.hpp"

namespace fs = std::filesystem;
using namespace amt;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool with_out) {
  cmd->add_option("--config", c.config_path, "key = value run configuration")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "overrides the configured seed");
  cmd->add_option("--set", c.overrides, "extra key=value override (repeatable)");
  if (with_out) cmd->add_option("--out", c.out, "output directory");
}

KeyValueConfig merged_kv(const Common& c) {
  KeyValueConfig kv;
  if (!c.config_path.empty()) kv = KeyValueConfig::load(c.config_path);
  for (const std::string& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ContractError("--set expects key=value, got '" + o + "'");
    kv.set(o.substr(0, eq), o.substr(eq + 1));
  }
  if (c.seed) kv.set("seed", std::to_string(*c.seed));
  return kv;
}

ExperimentConfig load_config(const Common& c) { return ExperimentConfig::from(merged_kv(c)); }

fs::path prepare_out(const Common& c, const ExperimentConfig& config) {
  if (c.out.empty()) throw ContractError("--out is required");
  const fs::path dir(c.out);
  fs::create_directories(dir);
  std::ofstream echo(dir / "config.cfg");
  config.to_kv().write(echo);
  return dir;
}

Dataset split_data(const ExperimentConfig& config, const std::string& data_dir, bool test) {
  if (!data_dir.empty()) return load_dataset(fs::path(data_dir) / (test ? "test.amtx" : "train.amtx"));
  return gen_synthetic(config.data, config.seed, test ? 1 : 0,
                       test ? config.data.n_test : config.data.n_train);
}

EvalOptions eval_options(const ExperimentConfig& config) {
  EvalOptions o;
  o.cost = config.cost;
  o.pool_ccr = config.eval.pool_ccr;
  o.seed = config.seed;
  return o;
}

void print_params(const ExperimentConfig& config) {
  const EncoderConfig& e = config.encoder;
  std::printf("component,params\n");
  std::printf("encoder,%zu\n", Encoder::param_count(e));
  for (auto layout : {ArbitratorLayout::single, ArbitratorLayout::dual}) {
    for (auto kind : {ArbitratorKind::feedforward, ArbitratorKind::recurrent}) {
      const ArbitratorConfig a = ArbitratorConfig::reference(kind, layout, config.arbitrator.hidden);
      std::printf("arbitrator_%s_%s,%zu\n", to_string(layout).c_str(), to_string(kind).c_str(),
                  Arbitrator::param_count(a, e.blocks, e.heads, e.input_dim, e.d));
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Amortized-attention encoder experiments on a synthetic streaming task"};
  app.require_subcommand(1);

  Common common;
  std::string data_dir, checkpoint, mode = "amortized";
  std::size_t frames = 1, window = 10, cases = 100, count = 1;
  std::optional<double> rate;

  auto* gen = app.add_subcommand("gen-data", "write train.amtx and test.amtx");
  add_common(gen, common, true);

  auto* train_cmd = app.add_subcommand("train", "train and write checkpoint.amtx + train_log.csv");
  add_common(train_cmd, common, true);
  train_cmd->add_option("--data", data_dir, "directory written by gen-data");
  std::size_t start_epoch = 0;
  train_cmd->add_option("--checkpoint", checkpoint, "initial parameters")->check(CLI::ExistingFile);
  train_cmd->add_option("--start-epoch", start_epoch, "skip earlier epochs")->capture_default_str();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval_cmd, common, true);
  eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data_dir, "directory written by gen-data");
  eval_cmd->add_option("--mode", mode,
                       "amortized | full_causal | sliding_window | random_toggling[:rate] | all");
  eval_cmd->add_option("--window", window, "sliding window length")->capture_default_str();

  auto* cost_cmd = app.add_subcommand("cost-model", "analytic MAC ledgers and parameter counts");
  add_common(cost_cmd, common, false);
  cost_cmd->add_option("--frames", frames, "utterance length")->capture_default_str();
  cost_cmd->add_option("--window", window, "key window for the toggled ledger");
  cost_cmd->add_option("--rate", rate, "also print a ledger for random toggles at this on-rate");

  auto* heat_cmd = app.add_subcommand("heatmap", "export toggle maps for test utterances");
  add_common(heat_cmd, common, true);
  heat_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  heat_cmd->add_option("--data", data_dir, "directory written by gen-data");
  heat_cmd->add_option("--count", count, "number of utterances")->capture_default_str();

  auto* check_cmd = app.add_subcommand("ledger-check", "streaming vs analytic MAC equivalence");
  add_common(check_cmd, common, false);
  check_cmd->add_option("--cases", cases, "random cases")->capture_default_str();
  std::string scale = "desk";
  check_cmd->add_option("--scale", scale, "desk | small")
      ->check(CLI::IsMember({"desk", "small"}))
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      const ExperimentConfig config = load_config(common);
      const fs::path dir = prepare_out(common, config);
      save_dataset(dir / "train.amtx", split_data(config, "", false));
      save_dataset(dir / "test.amtx", split_data(config, "", true));
      std::printf("wrote %s\n", dir.string().c_str());
    } else if (train_cmd->parsed()) {
      const ExperimentConfig config = load_config(common);
      const fs::path dir = prepare_out(common, config);
      const Dataset data = split_data(config, data_dir, false);
      TrainOptions options;
      ParamStore initial;
      if (!checkpoint.empty()) {
        initial = load_checkpoint(checkpoint);
        options.initial = &initial;
      }
      options.start_epoch = start_epoch;
      options.on_epoch = [](const EpochLog& e) {
        std::printf("epoch %3zu  task %.4f  compute %.4f  beta %.3g  tau %.3g  lambda %.3f  ccr~ %.4f\n",
                    e.epoch, e.task_loss, e.compute_loss, e.beta, e.tau, e.lambda,
                    e.train_ccr_estimate);
        std::fflush(stdout);
      };
      const TrainResult result = train(config, data, options);
      save_checkpoint(dir / "checkpoint.amtx", result.params);
      std::ofstream log(dir / "train_log.csv");
      write_train_log(log, result.log);
      std::printf("wrote %s\n", dir.string().c_str());
    } else if (eval_cmd->parsed()) {
      const ExperimentConfig config = load_config(common);
      const AmortizedModel model(ModelSpec::from(config), load_checkpoint(checkpoint));
      const Dataset data = split_data(config, data_dir, true);
      const EvalOptions options = eval_options(config);
      std::vector<EvalReport> reports;
      std::optional<double> amortized_ccr;
      auto run = [&](EvalMode m) {
        reports.push_back(evaluate(model, data, m, options));
        if (m.kind == EvalKind::amortized) amortized_ccr = reports.back().ccr;
      };
      auto run_random = [&](const std::string& text) {
        EvalMode m = EvalMode::parse(text, window);
        if (text.find(':') == std::string::npos) {
          if (!amortized_ccr) run(EvalMode::parse("amortized"));
          m.rate = match_random_rate(model.spec(), data, *amortized_ccr, options);
        }
        run(m);
      };
      if (mode == "all") {
        run(EvalMode::parse("amortized"));
        run(EvalMode::parse("full_causal"));
        run(EvalMode::parse("sliding_window", window));
        run_random("random_toggling");
      } else if (mode.rfind("random_toggling", 0) == 0) {
        run_random(mode);
      } else {
        run(EvalMode::parse(mode, window));
      }
      for (const EvalReport& r : reports) {
        write_report_table(std::cout, r);
        std::cout << '\n';
      }
      write_report_csv(std::cout, reports);
      if (!common.out.empty()) {
        const fs::path dir = prepare_out(common, config);
        std::ofstream csv(dir / "eval.csv");
        write_report_csv(csv, reports);
        for (const EvalReport& r : reports) {
          std::string stem = r.mode.substr(0, r.mode.find(':'));
          std::ofstream ledger(dir / ("ledger_" + stem + ".csv"));
          write_ledger_csv(ledger, r.ledger);
        }
        std::ofstream dense(dir / "ledger_dense.csv");
        write_ledger_csv(dense, reports.front().dense);
      }
    } else if (cost_cmd->parsed()) {
      const ExperimentConfig config = load_config(common);
      if (frames == 0) throw ContractError("--frames must be >= 1");
      const bool windowed = cost_cmd->count("--window") > 0;
      const FlopLedger dense = dense_flops(config.encoder, frames, config.cost);
      std::printf("# dense ledger, %zu frame(s)\n", frames);
      write_ledger_csv(std::cout, dense);
      std::printf("# per-frame dense MACs: encoder %.6g, total %.6g\n",
                  static_cast<double>(dense.encoder_total()) / static_cast<double>(frames),
                  static_cast<double>(dense.total()) / static_cast<double>(frames));
      if (windowed || rate) {
        const ModelSpec spec = ModelSpec::from(config);
        ToggleSet toggles = rate ? random_toggles(spec, frames, *rate, config.seed, 0)
                                 : ToggleSet::ones(frames, config.encoder.blocks,
                                                   config.encoder.heads);
        toggles.hard = true;
        const FlopLedger actual =
            toggled_flops(toggles, config.encoder, config.cost, windowed ? window : kNoWindow);
        std::printf("# toggled ledger\n");
        write_ledger_csv(std::cout, actual);
        std::printf("# ccr %.4f\n", ccr(dense, actual, config.cost.include_overhead));
      }
      print_params(config);
    } else if (heat_cmd->parsed()) {
      const ExperimentConfig config = load_config(common);
      const fs::path dir = prepare_out(common, config);
      const AmortizedModel model(ModelSpec::from(config), load_checkpoint(checkpoint));
      const Dataset data = split_data(config, data_dir, true);
      for (std::size_t u = 0; u < std::min(count, data.size()); ++u) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "utt%04zu", u);
        export_heatmap(model, data[u], dir, stem);
        std::ofstream labels(dir / (std::string(stem) + "_labels.csv"));
        labels << "label\n";
        for (int l : data[u].labels) labels << l << '\n';
      }
      std::printf("wrote %s\n", dir.string().c_str());
    } else if (check_cmd->parsed()) {
      const ExperimentConfig config = load_config(common);
      const EquivalenceResult result = run_equivalence_suite(
          config.seed, cases, scale == "desk" ? CaseScale::desk : CaseScale::small);
      write_equivalence_summary(std::cout, result);
      const bool ok = result.outputs_match() && result.ledgers_match();
      std::printf("%s\n", ok ? "PASS" : "FAIL");
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
