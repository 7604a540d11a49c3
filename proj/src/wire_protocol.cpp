#include "csnet/wire_protocol.hpp"

#include <algorithm>
#include <limits>

namespace csnet {

Bytes to_bytes(std::string_view text) { return Bytes(text.begin(), text.end()); }

std::string to_string(ByteView bytes) { return std::string(bytes.begin(), bytes.end()); }

}  // namespace csnet

namespace csnet::wire {

namespace {

void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u32(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void expect_kind(const Frame& frame, Kind kind) {
  if (frame.kind != kind) {
    throw WireError(WireErrc::MalformedPayload,
                    "expected " + std::string(kind_name(kind)) + ", got " +
                        std::string(kind_name(frame.kind)));
  }
}

Frame make_frame(Kind kind, ByteView payload) { return Frame{kind, Bytes(payload.begin(), payload.end())}; }

Frame make_prefixed(Kind kind, std::string_view id, ByteView message) {
  if (!is_valid_client_id(id)) {
    throw WireError(WireErrc::MalformedPayload, "client id must be 1..64 bytes of UTF-8");
  }
  Frame frame{kind, {}};
  frame.payload.reserve(1 + id.size() + message.size());
  frame.payload.push_back(static_cast<std::uint8_t>(id.size()));
  frame.payload.insert(frame.payload.end(), id.begin(), id.end());
  frame.payload.insert(frame.payload.end(), message.begin(), message.end());
  return frame;
}

}  // namespace

bool is_known_kind(std::uint8_t code) { return code >= 0x01 && code <= 0x0B; }

std::string_view kind_name(Kind kind) {
  switch (kind) {
    case Kind::Hello: return "HELLO";
    case Kind::HelloAck: return "HELLO_ACK";
    case Kind::Register: return "REGISTER";
    case Kind::RegisterAck: return "REGISTER_ACK";
    case Kind::Direct: return "DIRECT";
    case Kind::Deliver: return "DELIVER";
    case Kind::Broadcast: return "BROADCAST";
    case Kind::Echo: return "ECHO";
    case Kind::EchoReply: return "ECHO_REPLY";
    case Kind::Error: return "ERROR";
    case Kind::Bye: return "BYE";
  }
  return "UNKNOWN";
}

bool is_known_error_code(std::uint8_t code) { return code >= 1 && code <= 6; }

std::string_view errc_name(WireErrc code) {
  switch (code) {
    case WireErrc::BadMagic: return "BadMagic";
    case WireErrc::UnsupportedVersion: return "UnsupportedVersion";
    case WireErrc::UnknownKind: return "UnknownKind";
    case WireErrc::LengthMismatch: return "LengthMismatch";
    case WireErrc::ChecksumMismatch: return "ChecksumMismatch";
    case WireErrc::TrailingBytes: return "TrailingBytes";
    case WireErrc::FrameTooLarge: return "FrameTooLarge";
    case WireErrc::MalformedPayload: return "MalformedPayload";
    case WireErrc::VersionMismatch: return "VersionMismatch";
    case WireErrc::InvalidParams: return "InvalidParams";
  }
  return "Unknown";
}

WireError::WireError(WireErrc code, const std::string& detail)
    : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

std::uint16_t checksum(ByteView payload) {
  std::uint32_t sum = 0;
  for (std::uint8_t b : payload) sum += b;
  return static_cast<std::uint16_t>(sum & 0xFFFF);
}

Bytes encode_frame(const Frame& frame) {
  if (frame.payload.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw WireError(WireErrc::FrameTooLarge, "payload exceeds 2^32-1 bytes");
  }
  Bytes out;
  out.reserve(kHeaderSize + frame.payload.size());
  out.push_back(kMagic0);
  out.push_back(kMagic1);
  out.push_back(kProtocolVersion);
  out.push_back(static_cast<std::uint8_t>(frame.kind));
  put_u32(out, static_cast<std::uint32_t>(frame.payload.size()));
  put_u16(out, checksum(frame.payload));
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  return out;
}

std::optional<std::size_t> peek_frame_size(ByteView bytes, std::size_t max_payload) {
  if (bytes.size() >= 1 && bytes[0] != kMagic0) throw WireError(WireErrc::BadMagic, "first magic byte");
  if (bytes.size() >= 2 && bytes[1] != kMagic1) throw WireError(WireErrc::BadMagic, "second magic byte");
  if (bytes.size() >= 3 && bytes[2] != kProtocolVersion) {
    throw WireError(WireErrc::UnsupportedVersion, "frame version " + std::to_string(bytes[2]));
  }
  if (bytes.size() >= 4 && !is_known_kind(bytes[3])) {
    throw WireError(WireErrc::UnknownKind, "kind code " + std::to_string(bytes[3]));
  }
  if (bytes.size() < kHeaderSize) return std::nullopt;
  const std::uint32_t length = get_u32(bytes.data() + 4);
  if (length > max_payload) {
    throw WireError(WireErrc::FrameTooLarge,
                    "declared " + std::to_string(length) + " > limit " + std::to_string(max_payload));
  }
  return kHeaderSize + static_cast<std::size_t>(length);
}

Decoded decode_frame(ByteView bytes) {
  if (bytes.size() < kHeaderSize) {
    // Validate whatever header bytes we do have so truncated junk still
    // reports the more specific error.
    peek_frame_size(bytes, std::numeric_limits<std::uint32_t>::max());
    throw WireError(WireErrc::LengthMismatch, "truncated header");
  }
  const auto total = peek_frame_size(bytes, std::numeric_limits<std::uint32_t>::max()).value();
  if (bytes.size() < total) {
    throw WireError(WireErrc::LengthMismatch, "declared " + std::to_string(total - kHeaderSize) +
                                                  " payload bytes, have " +
                                                  std::to_string(bytes.size() - kHeaderSize));
  }
  const ByteView payload = bytes.subspan(kHeaderSize, total - kHeaderSize);
  const std::uint16_t declared_sum = get_u16(bytes.data() + 8);
  if (checksum(payload) != declared_sum) {
    throw WireError(WireErrc::ChecksumMismatch, "payload byte-sum differs from header");
  }
  Decoded result;
  result.frame.kind = static_cast<Kind>(bytes[3]);
  result.frame.payload.assign(payload.begin(), payload.end());
  result.consumed = total;
  result.unconsumed = bytes.size() - total;
  return result;
}

// --- handshake --------------------------------------------------------------

void validate(const HandshakeParams& params) {
  if (params.window < 1) throw WireError(WireErrc::InvalidParams, "window must be >= 1");
  if (params.max_payload < 1) throw WireError(WireErrc::InvalidParams, "max_payload must be >= 1");
}

HandshakeParams negotiate(const HandshakeParams& proposal, const HandshakeParams& supported) {
  validate(proposal);
  validate(supported);
  if (proposal.version != supported.version) {
    throw WireError(WireErrc::VersionMismatch, "client v" + std::to_string(proposal.version) +
                                                   ", server v" + std::to_string(supported.version));
  }
  return HandshakeParams{proposal.version, std::min(proposal.window, supported.window),
                         std::min(proposal.max_payload, supported.max_payload)};
}

namespace {

Frame make_handshake(Kind kind, const HandshakeParams& params) {
  Frame frame{kind, {}};
  frame.payload.push_back(params.version);
  put_u16(frame.payload, params.window);
  put_u32(frame.payload, params.max_payload);
  return frame;
}

}  // namespace

Frame make_hello(const HandshakeParams& proposal) { return make_handshake(Kind::Hello, proposal); }

Frame make_hello_ack(const HandshakeParams& agreed) { return make_handshake(Kind::HelloAck, agreed); }

HandshakeParams parse_handshake(const Frame& frame) {
  if (frame.kind != Kind::Hello && frame.kind != Kind::HelloAck) {
    throw WireError(WireErrc::MalformedPayload, "not a handshake frame");
  }
  if (frame.payload.size() != 7) {
    throw WireError(WireErrc::MalformedPayload, "handshake payload must be 7 bytes");
  }
  HandshakeParams params;
  params.version = frame.payload[0];
  params.window = get_u16(frame.payload.data() + 1);
  params.max_payload = get_u32(frame.payload.data() + 3);
  validate(params);
  return params;
}

// --- message payloads -------------------------------------------------------

bool is_valid_utf8(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= text.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(text[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong encodings, surrogates and out-of-range code points.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) {
      return false;
    }
    i += extra + 1;
  }
  return true;
}

bool is_valid_client_id(std::string_view id) {
  return !id.empty() && id.size() <= kMaxIdLength && is_valid_utf8(id);
}

Frame make_register(std::string_view id) { return make_frame(Kind::Register, to_bytes(id)); }
Frame make_register_ack() { return Frame{Kind::RegisterAck, {}}; }

Frame make_direct(std::string_view to, ByteView message) { return make_prefixed(Kind::Direct, to, message); }

Frame make_deliver(std::string_view from, ByteView message) {
  return make_prefixed(Kind::Deliver, from, message);
}

Frame make_broadcast(ByteView message) { return make_frame(Kind::Broadcast, message); }
Frame make_echo(ByteView data) { return make_frame(Kind::Echo, data); }
Frame make_echo_reply(ByteView data) { return make_frame(Kind::EchoReply, data); }

Frame make_error(ErrorCode code, std::string_view detail) {
  Frame frame{Kind::Error, {}};
  frame.payload.push_back(static_cast<std::uint8_t>(code));
  frame.payload.insert(frame.payload.end(), detail.begin(), detail.end());
  return frame;
}

Frame make_bye() { return Frame{Kind::Bye, {}}; }

std::string parse_register(const Frame& frame) {
  expect_kind(frame, Kind::Register);
  std::string id = to_string(frame.payload);
  if (!is_valid_client_id(id)) {
    throw WireError(WireErrc::MalformedPayload, "client id must be 1..64 bytes of UTF-8");
  }
  return id;
}

Addressed parse_addressed(const Frame& frame) {
  if (frame.kind != Kind::Direct && frame.kind != Kind::Deliver) {
    throw WireError(WireErrc::MalformedPayload, "not a DIRECT/DELIVER frame");
  }
  if (frame.payload.empty()) throw WireError(WireErrc::MalformedPayload, "missing id length");
  const std::size_t id_len = frame.payload[0];
  if (1 + id_len > frame.payload.size()) {
    throw WireError(WireErrc::MalformedPayload, "id length exceeds payload");
  }
  Addressed out;
  out.peer.assign(frame.payload.begin() + 1, frame.payload.begin() + 1 + static_cast<std::ptrdiff_t>(id_len));
  if (!is_valid_client_id(out.peer)) {
    throw WireError(WireErrc::MalformedPayload, "client id must be 1..64 bytes of UTF-8");
  }
  out.message.assign(frame.payload.begin() + 1 + static_cast<std::ptrdiff_t>(id_len), frame.payload.end());
  return out;
}

ErrorPayload parse_error(const Frame& frame) {
  expect_kind(frame, Kind::Error);
  if (frame.payload.empty() || !is_known_error_code(frame.payload[0])) {
    throw WireError(WireErrc::MalformedPayload, "ERROR frame needs a defined code");
  }
  return ErrorPayload{static_cast<ErrorCode>(frame.payload[0]),
                      std::string(frame.payload.begin() + 1, frame.payload.end())};
}

}  // namespace csnet::wire
