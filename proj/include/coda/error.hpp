#pragma once

#include <stdexcept>
#include <string>

namespace coda {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// forward() received a feature index outside the embedding table.
struct OutOfVocabError : Error {
  using Error::Error;
};

// A metric or validation set contains only one class.
struct DegenerateLabelsError : Error {
  using Error::Error;
};

struct NonFiniteGradientError : Error {
  explicit NonFiniteGradientError(std::string layer_id)
      : Error("non-finite gradient in layer '" + layer_id + "'"),
        layer(std::move(layer_id)) {}
  std::string layer;
};

struct SerializationError : Error {
  using Error::Error;
};

// Tunnel codec failures, one type per decode stage.
struct CodecError : Error {
  using Error::Error;
};
struct Base64Error : CodecError {
  using CodecError::CodecError;
};
struct DeflateError : CodecError {
  using CodecError::CodecError;
};
struct ChecksumError : CodecError {
  using CodecError::CodecError;
};
struct JsonParseError : CodecError {
  using CodecError::CodecError;
};

// Cloud query service.
struct AuthorizationError : Error {
  using Error::Error;
};
struct GoneError : Error {
  using Error::Error;
};
struct NotFoundError : Error {
  using Error::Error;
};

// Simulated transport failure: retryable, quota must not be consumed.
struct TransportError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace coda
