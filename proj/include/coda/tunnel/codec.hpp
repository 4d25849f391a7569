#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coda/sample.hpp"

namespace coda::tunnel {

// Wire format, bit-exact: BASE64 (RFC 4648 standard alphabet, padded) of an
// RFC 1950 DEFLATE stream of [4-byte big-endian CRC-32 of the canonical
// LDJSON bytes | canonical LDJSON bytes].
struct EncodedPayload {
  std::string text;
  std::size_t declared_raw_len = 0;  // LDJSON bytes before compression
  std::uint32_t checksum = 0;

  bool operator==(const EncodedPayload&) const = default;
};

EncodedPayload encode_payload(const std::vector<Sample>& samples);

// Exact inverse; checksum verified before the JSON parse. Throws
// Base64Error / DeflateError / ChecksumError / JsonParseError.
std::vector<Sample> decode_payload(const EncodedPayload& p);
std::vector<Sample> decode_payload_text(const std::string& base64_text);

// Frames pre-serialized canonical LDJSON bytes without reparsing them; the
// cloud store keeps per-sample payload lines and encodes batches from those.
std::string encode_ldjson_text(const std::string& raw_ldjson);

// Building blocks, exposed for stage-level debugging and tests.
std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);  // throws Base64Error
std::string deflate_bytes(const std::string& bytes);
std::string inflate_bytes(const std::string& bytes);  // throws DeflateError
std::uint32_t crc32_of(const std::string& bytes);

}  // namespace coda::tunnel
