#pragma once

#include <stdexcept>
#include <string>

namespace infershare {

enum class Errc {
  // manifest
  UnknownLayerKind,
  ShapeMismatch,
  CyclicGraph,
  MalformedDocument,
  WeightByteMismatch,
  FootprintTooSmall,
  // executor
  NonFiniteOutput,
  // predictor / worker
  BatchTooLarge,
  UnknownModel,
  Overloaded,
  WouldMissDeadline,
  ModelTooLarge,
  CacheThrash,
  Cancelled,
  DeviceFault,
  // controller
  InsufficientCapacity,
  QuotaExceeded,
  ValidationFailed,
  ModelUnavailable,
  // protocol / config
  Unauthorized,
  FrameTooLarge,
  UnknownKind,
  MalformedPayload,
  UnsupportedVersion,
  TraceParseError,
  ConfigInvalid,
  IoError,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

}  // namespace infershare
