#pragma once

// Framed wire protocol shared by every transport.
//
//   magic 5A 48 (2B) | version (1B) | kind (1B) | payload-length (4B BE)
//   | checksum (2B BE) | payload
//
// The checksum is the byte-sum of the payload mod 65536. Header damage is
// caught by the magic/version/kind/length checks instead.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace csnet {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

Bytes to_bytes(std::string_view text);
std::string to_string(ByteView bytes);

}  // namespace csnet

namespace csnet::wire {

inline constexpr std::uint8_t kMagic0 = 0x5A;
inline constexpr std::uint8_t kMagic1 = 0x48;
inline constexpr std::uint8_t kProtocolVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 10;
inline constexpr std::size_t kMaxIdLength = 64;

enum class Kind : std::uint8_t {
  Hello = 0x01,
  HelloAck = 0x02,
  Register = 0x03,
  RegisterAck = 0x04,
  Direct = 0x05,
  Deliver = 0x06,
  Broadcast = 0x07,
  Echo = 0x08,
  EchoReply = 0x09,
  Error = 0x0A,
  Bye = 0x0B,
};

bool is_known_kind(std::uint8_t code);
std::string_view kind_name(Kind kind);

enum class ErrorCode : std::uint8_t {
  DuplicateId = 1,
  UnknownRecipient = 2,
  Malformed = 3,
  NotRegistered = 4,
  RecipientBusy = 5,
  VersionMismatch = 6,
};

bool is_known_error_code(std::uint8_t code);

struct Frame {
  Kind kind = Kind::Echo;
  Bytes payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

enum class WireErrc {
  BadMagic,
  UnsupportedVersion,
  UnknownKind,
  LengthMismatch,
  ChecksumMismatch,
  TrailingBytes,
  FrameTooLarge,
  MalformedPayload,
  VersionMismatch,
  InvalidParams,
};

std::string_view errc_name(WireErrc code);

class WireError : public std::runtime_error {
 public:
  WireError(WireErrc code, const std::string& detail);
  WireErrc code() const noexcept { return code_; }

 private:
  WireErrc code_;
};

std::uint16_t checksum(ByteView payload);

Bytes encode_frame(const Frame& frame);

struct Decoded {
  Frame frame;
  std::size_t consumed = 0;    // header + payload
  std::size_t unconsumed = 0;  // bytes after the frame
};

/// Decodes one frame from the front of `bytes`. Throws WireError.
Decoded decode_frame(ByteView bytes);

/// Validates the header at the front of `bytes` and returns the full encoded
/// size of the frame, or nullopt when fewer than kHeaderSize bytes are
/// present. Throws for a bad header or a declared payload above `max_payload`.
std::optional<std::size_t> peek_frame_size(ByteView bytes, std::size_t max_payload);

// --- handshake --------------------------------------------------------------

struct HandshakeParams {
  std::uint8_t version = kProtocolVersion;
  std::uint16_t window = 8;
  std::uint32_t max_payload = 65536;

  friend bool operator==(const HandshakeParams&, const HandshakeParams&) = default;
};

void validate(const HandshakeParams& params);

/// Component-wise minimum of window and max_payload; versions must match.
HandshakeParams negotiate(const HandshakeParams& proposal, const HandshakeParams& supported);

Frame make_hello(const HandshakeParams& proposal);
Frame make_hello_ack(const HandshakeParams& agreed);
HandshakeParams parse_handshake(const Frame& frame);

// --- message payloads -------------------------------------------------------

/// IDs are 1..=64 bytes of valid UTF-8.
bool is_valid_client_id(std::string_view id);
bool is_valid_utf8(std::string_view text);

struct Addressed {
  std::string peer;  // recipient for DIRECT, sender for DELIVER
  Bytes message;

  friend bool operator==(const Addressed&, const Addressed&) = default;
};

struct ErrorPayload {
  ErrorCode code = ErrorCode::Malformed;
  std::string detail;
};

Frame make_register(std::string_view id);
Frame make_register_ack();
Frame make_direct(std::string_view to, ByteView message);
Frame make_deliver(std::string_view from, ByteView message);
Frame make_broadcast(ByteView message);
Frame make_echo(ByteView data);
Frame make_echo_reply(ByteView data);
Frame make_error(ErrorCode code, std::string_view detail = {});
Frame make_bye();

std::string parse_register(const Frame& frame);
Addressed parse_addressed(const Frame& frame);  // DIRECT or DELIVER
ErrorPayload parse_error(const Frame& frame);

}  // namespace csnet::wire
