#include "coda/mlkit/params.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "coda/error.hpp"

namespace coda::mlkit {

namespace {

constexpr char kMagic[4] = {'C', 'O', 'D', 'A'};
constexpr std::uint16_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_le(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw SerializationError("truncated model blob");
  return v;
}

}  // namespace

ParamStore::ParamStore(std::vector<BlockSpec> specs) : specs_(std::move(specs)) {
  std::size_t total = 0;
  offsets_.reserve(specs_.size());
  for (const auto& b : specs_) {
    offsets_.push_back(total);
    total += b.rows * b.cols;
  }
  data_.assign(total, 0.0);
}

std::span<double> ParamStore::block(std::size_t i) {
  return {data_.data() + offsets_[i], specs_[i].rows * specs_[i].cols};
}

std::span<const double> ParamStore::block(std::size_t i) const {
  return {data_.data() + offsets_[i], specs_[i].rows * specs_[i].cols};
}

std::span<double> ParamStore::block(const std::string& name) {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (specs_[i].name == name) return block(i);
  }
  throw SerializationError("unknown parameter block: " + name);
}

std::span<const double> ParamStore::block(const std::string& name) const {
  return const_cast<ParamStore*>(this)->block(name);
}

const std::string& ParamStore::owner_block(std::size_t flat_index) const {
  if (flat_index >= data_.size()) {
    throw SerializationError("flat index out of range");
  }
  for (std::size_t i = specs_.size(); i-- > 0;) {
    if (flat_index >= offsets_[i]) return specs_[i].name;
  }
  throw SerializationError("flat index out of range");
}

void ParamStore::init_uniform(std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (double& w : data_) w = dist(rng);
}

void ParamStore::save(std::ostream& out) const {
  out.write(kMagic, 4);
  write_le(out, kFormatVersion);
  write_le(out, static_cast<std::uint32_t>(specs_.size()));
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& b = specs_[i];
    write_le(out, static_cast<std::uint16_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    write_le(out, static_cast<std::uint32_t>(b.rows));
    write_le(out, static_cast<std::uint32_t>(b.cols));
    auto span = block(i);
    out.write(reinterpret_cast<const char*>(span.data()),
              static_cast<std::streamsize>(span.size() * sizeof(double)));
  }
}

ParamStore ParamStore::load(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw SerializationError("bad model magic");
  }
  auto version = read_le<std::uint16_t>(in);
  if (version != kFormatVersion) {
    throw SerializationError("unsupported model format version");
  }
  auto count = read_le<std::uint32_t>(in);
  std::vector<BlockSpec> specs;
  specs.reserve(count);
  std::vector<std::vector<double>> payloads;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = read_le<std::uint16_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw SerializationError("truncated model blob");
    auto rows = read_le<std::uint32_t>(in);
    auto cols = read_le<std::uint32_t>(in);
    specs.push_back({std::move(name), rows, cols});
    std::vector<double> payload(static_cast<std::size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!in) throw SerializationError("truncated model blob");
    payloads.push_back(std::move(payload));
  }
  ParamStore store(std::move(specs));
  for (std::size_t i = 0; i < payloads.size(); ++i) {
    auto dst = store.block(i);
    std::copy(payloads[i].begin(), payloads[i].end(), dst.begin());
  }
  return store;
}

std::string ParamStore::save_bytes() const {
  std::ostringstream out(std::ios::binary);
  save(out);
  return out.str();
}

ParamStore ParamStore::load_bytes(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return load(in);
}

}  // namespace coda::mlkit
