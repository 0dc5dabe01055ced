#include "infershare/protocol.hpp"

namespace infershare {

using nlohmann::json;

bool known_kind(uint8_t kind) {
  return kind >= static_cast<uint8_t>(MsgKind::UploadModel) &&
         kind <= static_cast<uint8_t>(MsgKind::ErrorResp);
}

const char* msg_kind_name(MsgKind kind) {
  switch (kind) {
    case MsgKind::UploadModel: return "UploadModel";
    case MsgKind::UploadModelResp: return "UploadModelResp";
    case MsgKind::DeleteModel: return "DeleteModel";
    case MsgKind::ListModels: return "ListModels";
    case MsgKind::ListModelsResp: return "ListModelsResp";
    case MsgKind::GetStats: return "GetStats";
    case MsgKind::StatsResp: return "StatsResp";
    case MsgKind::Infer: return "Infer";
    case MsgKind::InferResp: return "InferResp";
    case MsgKind::LoadModel: return "LoadModel";
    case MsgKind::EvictModel: return "EvictModel";
    case MsgKind::Heartbeat: return "Heartbeat";
    case MsgKind::DemandReport: return "DemandReport";
    case MsgKind::RegisterWorker: return "RegisterWorker";
    case MsgKind::Ack: return "Ack";
    case MsgKind::ErrorResp: return "Error";
  }
  return "?";
}

std::vector<uint8_t> encode_frame(MsgKind kind, const json& payload) {
  json body = payload;
  if (!body.is_object()) body = json::object();
  if (!body.contains("v")) body["v"] = kSchemaVersion;
  std::string text = body.dump();
  size_t length = text.size() + 1;  // kind byte
  if (length > kMaxFrameBytes)
    throw Error(Errc::FrameTooLarge,
                "frame of " + std::to_string(length) + " bytes exceeds the 64 MiB bound");
  std::vector<uint8_t> out;
  out.reserve(4 + length);
  out.push_back(static_cast<uint8_t>(length >> 24));
  out.push_back(static_cast<uint8_t>(length >> 16));
  out.push_back(static_cast<uint8_t>(length >> 8));
  out.push_back(static_cast<uint8_t>(length));
  out.push_back(static_cast<uint8_t>(kind));
  out.insert(out.end(), text.begin(), text.end());
  return out;
}

DecodeResult decode_frame(const uint8_t* data, size_t len) {
  DecodeResult r;
  if (len < 4) {
    r.status = DecodeResult::Status::NeedMoreBytes;
    r.need = 4 - len;
    return r;
  }
  uint64_t length = (uint64_t(data[0]) << 24) | (uint64_t(data[1]) << 16) |
                    (uint64_t(data[2]) << 8) | uint64_t(data[3]);
  if (length > kMaxFrameBytes) {
    r.status = DecodeResult::Status::Bad;
    r.error = Errc::FrameTooLarge;
    r.detail = "declared length " + std::to_string(length);
    r.consumed = len;
    return r;
  }
  if (length < 1) {
    r.status = DecodeResult::Status::Bad;
    r.error = Errc::MalformedPayload;
    r.detail = "zero-length frame";
    r.consumed = 4;
    return r;
  }
  if (len < 4 + length) {
    r.status = DecodeResult::Status::NeedMoreBytes;
    r.need = 4 + length - len;
    return r;
  }
  uint8_t kind = data[4];
  r.consumed = 4 + length;
  if (!known_kind(kind)) {
    r.status = DecodeResult::Status::Bad;
    r.error = Errc::UnknownKind;
    r.detail = "message kind " + std::to_string(kind);
    return r;
  }
  json payload = json::parse(data + 5, data + 4 + length, nullptr, /*allow_exceptions=*/false);
  if (payload.is_discarded() || !payload.is_object()) {
    r.status = DecodeResult::Status::Bad;
    r.error = Errc::MalformedPayload;
    r.detail = "payload is not a JSON object";
    return r;
  }
  int v = payload.value("v", 0);
  if (v > kSchemaVersion) {
    r.status = DecodeResult::Status::Bad;
    r.error = Errc::UnsupportedVersion;
    r.detail = "schema v" + std::to_string(v);
    return r;
  }
  r.status = DecodeResult::Status::Ok;
  r.frame.kind = static_cast<MsgKind>(kind);
  r.frame.payload = std::move(payload);
  return r;
}

DecodeResult FrameDecoder::next() {
  DecodeResult r = decode_frame(buf_.data(), buf_.size());
  if (r.consumed > 0) buf_.erase(buf_.begin(), buf_.begin() + static_cast<long>(r.consumed));
  return r;
}

json make_error_payload(Errc code, const std::string& detail) {
  return json{{"v", kSchemaVersion}, {"code", errc_name(code)}, {"detail", detail}};
}

}  // namespace infershare
