#include "amt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace amt {

void ParamStore::set(const std::string& name, Array value) { arrays_[name] = std::move(value); }

const Array& ParamStore::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

Array& ParamStore::get(const std::string& name) {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, a] : arrays_) n += a.size();
  return n;
}

void ParamStore::merge(const ParamStore& other, const std::string& prefix) {
  for (const auto& [name, a] : other.arrays_) {
    if (name.rfind(prefix, 0) == 0) arrays_[name] = a;
  }
}

ParamStore ParamStore::with_prefix(const std::string& prefix) const {
  ParamStore out;
  out.merge(*this, prefix);
  return out;
}

namespace {

constexpr char kMagic[4] = {'A', 'M', 'T', 'X'};

template <class U>
void put(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <class U>
  U take() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  std::string take_string(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ContractError("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& params) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, array] : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(array.shape.size()));
    for (std::size_t dim : array.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
    for (double v : array.data) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

ParamStore decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ContractError("not an AMTX checkpoint");
  }
  std::vector<std::uint8_t> body(bytes.begin() + 4, bytes.end());
  Reader in(body);
  const auto version = in.take<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ContractError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = in.take<std::uint32_t>();
  ParamStore params;
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name = in.take_string(in.take<std::uint32_t>());
    const auto rank = in.take<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& dim : shape) dim = in.take<std::uint32_t>();
    Array a(shape);
    for (double& v : a.data) v = std::bit_cast<double>(in.take<std::uint64_t>());
    params.set(name, std::move(a));
  }
  if (!in.done()) throw ContractError("trailing bytes after checkpoint entries");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Array random_normal(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng) {
  Array a(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : a.data) v = dist(rng);
  return a;
}

}  // namespace amt
