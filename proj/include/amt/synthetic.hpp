#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "amt/array.hpp"
#include "amt/config.hpp"

namespace amt {

inline constexpr int kBlankLabel = 0;

struct Utterance {
  Array features;           // T x frame_dim
  std::vector<int> labels;  // T, kBlankLabel on silence frames

  std::size_t frames() const { return labels.size(); }
};

using Dataset = std::vector<Utterance>;

/// Class prototypes are fixed by `task_seed`; `split` selects an independent
/// stream of utterances (0 = train, 1 = test, ...).
Dataset gen_synthetic(const SyntheticTaskConfig& cfg, std::uint64_t task_seed, std::uint64_t split,
                      std::size_t count);

void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace amt
