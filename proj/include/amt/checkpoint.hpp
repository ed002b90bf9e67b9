#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "amt/array.hpp"

namespace amt {

/// Named parameter arrays. Iteration order is the sorted name order, which
/// is also the on-disk order, so serialisation is deterministic.
class ParamStore {
 public:
  void set(const std::string& name, Array value);
  const Array& get(const std::string& name) const;
  Array& get(const std::string& name);
  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }
  std::size_t size() const { return arrays_.size(); }
  std::size_t scalar_count() const;

  /// Copies every entry whose name starts with `prefix` into this store.
  void merge(const ParamStore& other, const std::string& prefix = "");
  ParamStore with_prefix(const std::string& prefix) const;

  auto begin() const { return arrays_.begin(); }
  auto end() const { return arrays_.end(); }
  auto begin() { return arrays_.begin(); }
  auto end() { return arrays_.end(); }

  bool operator==(const ParamStore&) const = default;

 private:
  std::map<std::string, Array> arrays_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all little-endian):
//   "AMTX" | u32 version | u32 entry count |
//   per entry: u32 name bytes, utf-8 name, u32 rank, rank x u32 dims, f64 payload
std::vector<std::uint8_t> encode_checkpoint(const ParamStore& params);
ParamStore decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params);
ParamStore load_checkpoint(const std::filesystem::path& path);

Array random_normal(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng);

}  // namespace amt
