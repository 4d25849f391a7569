#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace coda::mlkit {

// One named weight matrix inside a flat parameter store.
struct BlockSpec {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;

  bool operator==(const BlockSpec&) const = default;
};

// All parameters of a model, stored as one contiguous double buffer with
// named row-major blocks. Gradients share the same layout, so SGD, gradient
// checking and serialization are generic over model type.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::vector<BlockSpec> specs);

  std::size_t size() const { return data_.size(); }
  std::size_t block_count() const { return specs_.size(); }
  const BlockSpec& spec(std::size_t i) const { return specs_[i]; }

  std::span<double> block(std::size_t i);
  std::span<const double> block(std::size_t i) const;
  std::span<double> block(const std::string& name);
  std::span<const double> block(const std::string& name) const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  // Given a flat parameter index, the name of the block that owns it.
  const std::string& owner_block(std::size_t flat_index) const;

  // uniform(-scale, scale) init from a seeded generator.
  void init_uniform(std::uint64_t seed, double scale = 0.05);

  // Versioned binary blob: "CODA" magic, u16 format version, u32 block
  // count, then per block a shape header and row-major little-endian f64.
  // Byte-identical round trip.
  void save(std::ostream& out) const;
  static ParamStore load(std::istream& in);
  std::string save_bytes() const;
  static ParamStore load_bytes(const std::string& bytes);

  bool operator==(const ParamStore&) const = default;

 private:
  std::vector<BlockSpec> specs_;
  std::vector<std::size_t> offsets_;
  std::vector<double> data_;
};

}  // namespace coda::mlkit
