#pragma once

// Length-prefixed framed wire protocol: 4-byte big-endian length, 1-byte
// message kind, JSON payload (schema versioned via a "v" field). length =
// payload bytes + 1, capped at 64 MiB. Unknown kinds and malformed payloads
// are rejected as values, never crashes — random bytes must be safe.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "infershare/errors.hpp"

namespace infershare {

enum class MsgKind : uint8_t {
  UploadModel = 0x01,
  UploadModelResp = 0x02,
  DeleteModel = 0x03,
  ListModels = 0x04,
  ListModelsResp = 0x05,
  GetStats = 0x06,
  StatsResp = 0x07,
  Infer = 0x08,
  InferResp = 0x09,
  LoadModel = 0x0A,
  EvictModel = 0x0B,
  Heartbeat = 0x0C,
  DemandReport = 0x0D,
  RegisterWorker = 0x0E,
  Ack = 0x0F,
  ErrorResp = 0x10,
};

bool known_kind(uint8_t kind);
const char* msg_kind_name(MsgKind kind);

inline constexpr size_t kMaxFrameBytes = 64ull << 20;  // length field bound
inline constexpr int kSchemaVersion = 1;

struct Frame {
  MsgKind kind = MsgKind::Ack;
  nlohmann::json payload;
};

// Throws FrameTooLarge when the payload exceeds the frame bound.
std::vector<uint8_t> encode_frame(MsgKind kind, const nlohmann::json& payload);

struct DecodeResult {
  enum class Status { Ok, NeedMoreBytes, Bad };
  Status status = Status::NeedMoreBytes;
  size_t need = 0;      // NeedMoreBytes: additional bytes required
  size_t consumed = 0;  // Ok/Bad: bytes to drop from the stream
  Frame frame;          // Ok
  Errc error = Errc::MalformedPayload;
  std::string detail;
};

// Decodes one frame from the head of `data`. A payload whose "v" field is
// newer than kSchemaVersion decodes as Bad/UnsupportedVersion rather than
// misparsing.
DecodeResult decode_frame(const uint8_t* data, size_t len);

// Incremental stream decoder.
class FrameDecoder {
 public:
  void feed(const uint8_t* data, size_t n) { buf_.insert(buf_.end(), data, data + n); }
  // Ok → frame extracted; NeedMoreBytes → feed more; Bad → connection poisoned.
  DecodeResult next();

 private:
  std::vector<uint8_t> buf_;
};

// Payload helpers.
nlohmann::json make_error_payload(Errc code, const std::string& detail);

}  // namespace infershare
