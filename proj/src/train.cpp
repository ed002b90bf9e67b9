#include "amt/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "amt/cost.hpp"

namespace amt {

double task_loss(const Array& logits, const std::vector<int>& labels) {
  Tape tape;
  return cross_entropy(tape.constant(logits), labels).value().data[0];
}

Var task_loss(Var logits, const std::vector<int>& labels) { return cross_entropy(logits, labels); }

double Adam::current_rate() const {
  if (config_.warmup_steps == 0) return config_.learning_rate;
  const double ramp = static_cast<double>(steps_) / static_cast<double>(config_.warmup_steps);
  return config_.learning_rate * std::min(1.0, ramp);
}

void Adam::step(ParamStore& params, const ParamStore& grads) {
  ++steps_;
  const double rate = current_rate();
  const double c1 = 1.0 - std::pow(config_.adam_beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.adam_beta2, static_cast<double>(steps_));
  for (auto& [name, value] : params) {
    if (!grads.contains(name)) continue;
    const Array& g = grads.get(name);
    if (!m_.contains(name)) {
      m_.set(name, Array(value.shape));
      v_.set(name, Array(value.shape));
    }
    Array& m = m_.get(name);
    Array& v = v_.get(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      m.data[i] = config_.adam_beta1 * m.data[i] + (1.0 - config_.adam_beta1) * g.data[i];
      v.data[i] = config_.adam_beta2 * v.data[i] + (1.0 - config_.adam_beta2) * g.data[i] * g.data[i];
      value.data[i] -= rate * (m.data[i] / c1) / (std::sqrt(v.data[i] / c2) + config_.adam_eps);
    }
  }
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

void accumulate(ParamStore& into, const VarMap& vars, double weight) {
  for (const auto& [name, var] : vars) {
    const Array& g = var.grad();
    if (g.data.empty()) continue;
    if (!into.contains(name)) into.set(name, Array(var.value().shape));
    Array& acc = into.get(name);
    for (std::size_t i = 0; i < g.size(); ++i) acc.data[i] += weight * g.data[i];
  }
}

}  // namespace

TrainResult train(const ExperimentConfig& config, const Dataset& data,
                  const TrainOptions& options) {
  const ModelSpec spec = ModelSpec::from(config);
  TrainResult result;
  result.params = options.initial != nullptr ? *options.initial : AmortizedModel::init_params(spec, config.seed);
  const std::size_t epochs = config.schedule.total_epochs();
  if (options.start_epoch >= epochs) return result;
  if (data.empty()) throw ContractError("training needs at least one utterance");
  if (config.train.batch == 0) throw ContractError("train.batch must be >= 1");

  Adam optimizer(config.train);
  for (std::size_t epoch = options.start_epoch; epoch < epochs; ++epoch) {
    const ScheduleValues sv = schedule_at(config.schedule, epoch);
    const std::vector<std::size_t> order = epoch_order(data.size(), config.seed, epoch);
    EpochLog log{epoch, 0.0, 0.0, sv.beta, sv.tau, sv.lambda, 0.0};
    double expected_macs = 0.0, dense_macs = 0.0;

    for (std::size_t start = 0; start < order.size(); start += config.train.batch) {
      const std::size_t stop = std::min(order.size(), start + config.train.batch);
      const double weight = 1.0 / static_cast<double>(stop - start);
      const AmortizedModel model(spec, result.params);
      ParamStore grads;
      for (std::size_t i = start; i < stop; ++i) {
        const Utterance& utt = data[order[i]];
        const double dense =
            static_cast<double>(dense_flops(spec.encoder, utt.frames(), config.cost).encoder_total());
        Tape tape;
        const VarMap p = bind(tape, result.params, true);
        SamplerSettings sampler{sv.tau, sv.lambda, config.train.straight_through,
                                NoiseKey{config.seed, epoch, order[i], 0, 0}};
        const TrainForward f = model.forward_train(p, utt.features, sampler, config.cost);
        const Var task = task_loss(f.logits, utt.labels);
        const double norm = config.train.normalize_compute ? 1.0 / dense : 1.0;
        const Var penalty = scale(f.compute, norm);
        const Var loss = add(task, scale(penalty, sv.beta));
        const double value = loss.value().data[0];
        if (!std::isfinite(value)) {
          char msg[160];
          std::snprintf(msg, sizeof msg,
                        "training diverged at epoch %zu, utterance %zu: loss = %g (task %g)", epoch,
                        order[i], value, task.value().data[0]);
          throw TrainingDiverged(msg);
        }
        tape.backward(loss);
        accumulate(grads, p, weight);
        log.task_loss += task.value().data[0];
        log.compute_loss += penalty.value().data[0];
        expected_macs += f.compute.value().data[0];
        dense_macs += dense;
      }
      optimizer.step(result.params, grads);
    }
    log.task_loss /= static_cast<double>(data.size());
    log.compute_loss /= static_cast<double>(data.size());
    log.train_ccr_estimate = 1.0 - expected_macs / dense_macs;
    result.log.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
  }
  return result;
}

void write_train_log(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,task_loss,compute_loss,beta,tau,lambda,train_ccr_estimate\n";
  char buf[256];
  for (const EpochLog& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.epoch,
                  e.task_loss, e.compute_loss, e.beta, e.tau, e.lambda, e.train_ccr_estimate);
    out << buf;
  }
}

}  // namespace amt
