#pragma once

#include <cstddef>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "amt/checkpoint.hpp"
#include "amt/config.hpp"
#include "amt/model.hpp"
#include "amt/synthetic.hpp"

namespace amt {

struct EpochLog {
  std::size_t epoch = 0;
  double task_loss = 0.0;
  double compute_loss = 0.0;  // mean normalised (or raw) compute penalty per utterance
  double beta = 0.0;
  double tau = 0.0;
  double lambda = 0.0;
  /// 1 - expected block MACs / dense block MACs, pooled over the epoch.
  double train_ccr_estimate = 0.0;
};

struct TrainResult {
  ParamStore params;
  std::vector<EpochLog> log;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean per-frame cross entropy.
double task_loss(const Array& logits, const std::vector<int>& labels);
Var task_loss(Var logits, const std::vector<int>& labels);

/// Adam with a linear learning-rate warmup.
class Adam {
 public:
  explicit Adam(const TrainConfig& config) : config_(config) {}

  void step(ParamStore& params, const ParamStore& grads);
  std::size_t steps() const { return steps_; }
  double current_rate() const;

 private:
  TrainConfig config_;
  std::size_t steps_ = 0;
  ParamStore m_, v_;
};

using EpochCallback = std::function<void(const EpochLog&)>;

struct TrainOptions {
  /// Starting parameters; AmortizedModel::init_params(spec, config.seed) when null.
  const ParamStore* initial = nullptr;
  /// Epochs before this one are skipped, e.g. to fine-tune a pre-trained
  /// checkpoint. Optimizer state starts fresh.
  std::size_t start_epoch = 0;
  EpochCallback on_epoch;
};

/// Pre-training followed by annealed fine-tuning.
TrainResult train(const ExperimentConfig& config, const Dataset& data,
                  const TrainOptions& options = {});

void write_train_log(std::ostream& out, const std::vector<EpochLog>& log);

}  // namespace amt
