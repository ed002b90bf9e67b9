#include "amt/synthetic.hpp"

#include <cstdio>
#include <random>

#include "amt/checkpoint.hpp"

namespace amt {

namespace {

std::size_t uniform_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

Dataset gen_synthetic(const SyntheticTaskConfig& cfg, std::uint64_t task_seed, std::uint64_t split,
                      std::size_t count) {
  cfg.validate();
  std::mt19937_64 proto_rng(task_seed * 0x9e3779b97f4a7c15ULL + 17);
  std::vector<Array> prototypes(cfg.n_classes);
  for (std::size_t c = 1; c < cfg.n_classes; ++c) {
    prototypes[c] = random_normal({cfg.frame_dim}, 1.0, proto_rng);
  }
  const bool has_active = cfg.active_max > 0 && cfg.n_classes > 1;
  const bool has_silence = cfg.silence_max > 0;

  std::mt19937_64 rng(task_seed * 0xd1b54a32d192ed03ULL + split * 0x8cb92ba72f3d8dd7ULL + 1);
  std::normal_distribution<double> unit(0.0, 1.0);
  Dataset data;
  data.reserve(count);
  for (std::size_t u = 0; u < count; ++u) {
    const std::size_t T = uniform_size(rng, cfg.utt_min, cfg.utt_max);
    Utterance utt{Array::matrix(T, cfg.frame_dim), std::vector<int>(T, kBlankLabel)};
    bool silent = has_silence;
    std::size_t t = 0;
    while (t < T) {
      std::size_t len = silent ? uniform_size(rng, cfg.silence_min, cfg.silence_max)
                               : uniform_size(rng, cfg.active_min, cfg.active_max);
      if (len == 0) len = 1;
      const int label =
          silent ? kBlankLabel
                 : static_cast<int>(uniform_size(rng, 1, cfg.n_classes - 1));
      for (std::size_t i = 0; i < len && t < T; ++i, ++t) {
        auto row = utt.features.row(t);
        utt.labels[t] = label;
        for (std::size_t k = 0; k < cfg.frame_dim; ++k) {
          row[k] = silent ? cfg.silence_noise_std * unit(rng)
                          : prototypes[static_cast<std::size_t>(label)][k] +
                                cfg.active_noise_std * unit(rng);
        }
      }
      if (has_active && has_silence) silent = !silent;
      else silent = !has_active;
    }
    data.push_back(std::move(utt));
  }
  return data;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  ParamStore store;
  char name[48];
  for (std::size_t u = 0; u < data.size(); ++u) {
    std::snprintf(name, sizeof name, "utt%06zu/features", u);
    store.set(name, data[u].features);
    std::vector<double> labels(data[u].labels.begin(), data[u].labels.end());
    std::snprintf(name, sizeof name, "utt%06zu/labels", u);
    store.set(name, Array::row_vector(std::move(labels)));
  }
  save_checkpoint(path, store);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const ParamStore store = load_checkpoint(path);
  Dataset data;
  char name[48];
  for (std::size_t u = 0;; ++u) {
    std::snprintf(name, sizeof name, "utt%06zu/features", u);
    if (!store.contains(name)) break;
    Utterance utt;
    utt.features = store.get(name);
    std::snprintf(name, sizeof name, "utt%06zu/labels", u);
    for (double v : store.get(name).data) utt.labels.push_back(static_cast<int>(v));
    data.push_back(std::move(utt));
  }
  return data;
}

}  // namespace amt
