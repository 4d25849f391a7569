#include "coda/tunnel/codec.hpp"

#include <zlib.h>

#include <array>

#include "coda/error.hpp"

namespace coda::tunnel {

namespace {
constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::array<int, 256> decode_table() {
  std::array<int, 256> t;
  t.fill(-1);
  for (int i = 0; i < 64; ++i) t[static_cast<unsigned char>(kAlphabet[i])] = i;
  return t;
}
}  // namespace

std::string base64_encode(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 3 <= bytes.size()) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
    i += 3;
  }
  const std::size_t rem = bytes.size() - i;
  if (rem == 1) {
    const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (rem == 2) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::string base64_decode(const std::string& text) {
  static const auto table = decode_table();
  if (text.size() % 4 != 0) throw Base64Error("BASE64 length not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=') {
        if (i + 4 != text.size() || j < 2) throw Base64Error("misplaced padding");
        vals[j] = 0;
        ++pad;
      } else {
        if (pad > 0) throw Base64Error("data after padding");
        vals[j] = table[static_cast<unsigned char>(c)];
        if (vals[j] < 0) throw Base64Error("character outside BASE64 alphabet");
      }
    }
    const unsigned v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
    out += static_cast<char>((v >> 16) & 0xFF);
    if (pad < 2) out += static_cast<char>((v >> 8) & 0xFF);
    if (pad < 1) out += static_cast<char>(v & 0xFF);
  }
  return out;
}

std::string deflate_bytes(const std::string& bytes) {
  uLongf bound = compressBound(static_cast<uLong>(bytes.size()));
  std::string out(bound, '\0');
  const int rc = compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                           reinterpret_cast<const Bytef*>(bytes.data()),
                           static_cast<uLong>(bytes.size()), Z_DEFAULT_COMPRESSION);
  if (rc != Z_OK) throw DeflateError("deflate failed");
  out.resize(bound);
  return out;
}

std::string inflate_bytes(const std::string& bytes) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw DeflateError("inflate init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::string out;
  std::array<char, 16384> buf;
  int rc = Z_OK;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buf.data());
    zs.avail_out = static_cast<uInt>(buf.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DeflateError("corrupt DEFLATE stream");
    }
    out.append(buf.data(), buf.size() - zs.avail_out);
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

std::uint32_t crc32_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()),
            static_cast<uInt>(bytes.size())));
}

std::string encode_ldjson_text(const std::string& raw_ldjson) {
  const std::uint32_t crc = crc32_of(raw_ldjson);
  std::string framed;
  framed.reserve(raw_ldjson.size() + 4);
  framed += static_cast<char>((crc >> 24) & 0xFF);
  framed += static_cast<char>((crc >> 16) & 0xFF);
  framed += static_cast<char>((crc >> 8) & 0xFF);
  framed += static_cast<char>(crc & 0xFF);
  framed += raw_ldjson;
  return base64_encode(deflate_bytes(framed));
}

EncodedPayload encode_payload(const std::vector<Sample>& samples) {
  if (samples.empty()) throw Error("encode_payload: empty sample list");
  const std::string raw = to_ldjson(samples);
  EncodedPayload p;
  p.text = encode_ldjson_text(raw);
  p.declared_raw_len = raw.size();
  p.checksum = crc32_of(raw);
  return p;
}

std::vector<Sample> decode_payload_text(const std::string& base64_text) {
  if (base64_text.empty()) throw Base64Error("empty payload");
  const std::string framed = inflate_bytes(base64_decode(base64_text));
  if (framed.size() < 4) throw ChecksumError("payload too short for checksum");
  const std::uint32_t declared =
      (static_cast<std::uint32_t>(static_cast<unsigned char>(framed[0])) << 24) |
      (static_cast<std::uint32_t>(static_cast<unsigned char>(framed[1])) << 16) |
      (static_cast<std::uint32_t>(static_cast<unsigned char>(framed[2])) << 8) |
      static_cast<std::uint32_t>(static_cast<unsigned char>(framed[3]));
  const std::string raw = framed.substr(4);
  if (crc32_of(raw) != declared) {
    throw ChecksumError("payload checksum mismatch");
  }
  return samples_from_ldjson(raw);
}

std::vector<Sample> decode_payload(const EncodedPayload& p) {
  return decode_payload_text(p.text);
}

}  // namespace coda::tunnel
