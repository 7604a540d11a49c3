#include <random>

#include "csnet/wire_protocol.hpp"
#include "doctest.h"

using namespace csnet;
using namespace csnet::wire;

namespace {

Bytes hex(std::initializer_list<int> values) {
  Bytes out;
  for (int v : values) out.push_back(static_cast<std::uint8_t>(v));
  return out;
}

WireErrc decode_error(const Bytes& bytes) {
  try {
    decode_frame(bytes);
  } catch (const WireError& e) {
    return e.code();
  }
  FAIL("decode succeeded");
  return WireErrc::InvalidParams;
}

Frame random_frame(std::mt19937_64& gen, std::size_t max_len) {
  Frame f;
  f.kind = static_cast<Kind>(1 + gen() % 11);
  f.payload.resize(gen() % (max_len + 1));
  for (auto& b : f.payload) b = static_cast<std::uint8_t>(gen());
  return f;
}

}  // namespace

TEST_CASE("encode: empty REGISTER_ACK") {
  CHECK(encode_frame({Kind::RegisterAck, {}}) == hex({0x5A, 0x48, 0x01, 0x04, 0, 0, 0, 0, 0, 0}));
}

TEST_CASE("encode: REGISTER ab carries checksum 0x00C3") {
  CHECK(encode_frame({Kind::Register, to_bytes("ab")}) ==
        hex({0x5A, 0x48, 0x01, 0x03, 0, 0, 0, 2, 0x00, 0xC3, 0x61, 0x62}));
}

TEST_CASE("checksum of 65536 bytes of 0xFF wraps to zero") {
  const Bytes payload(65536, 0xFF);
  CHECK(checksum(payload) == 0x0000);
  const auto encoded = encode_frame({Kind::Echo, payload});
  CHECK(encoded[8] == 0x00);
  CHECK(encoded[9] == 0x00);
  CHECK(decode_frame(encoded).frame.payload == payload);
}

TEST_CASE("decode examples") {
  const auto d = decode_frame(hex({0x5A, 0x48, 0x01, 0x04, 0, 0, 0, 0, 0, 0}));
  CHECK(d.frame == Frame{Kind::RegisterAck, {}});
  CHECK(d.consumed == 10);
  CHECK(d.unconsumed == 0);

  CHECK(decode_error(hex({0x00, 0x00, 0x01, 0x04, 0, 0, 0, 0, 0, 0})) == WireErrc::BadMagic);
  CHECK(decode_error(hex({0x5A, 0x48, 0x01, 0x03, 0, 0, 0, 2, 0x00, 0xC4, 0x61, 0x62})) ==
        WireErrc::ChecksumMismatch);
}

TEST_CASE("decode error classes") {
  CHECK(decode_error(hex({0x5A, 0x48, 0x02, 0x04, 0, 0, 0, 0, 0, 0})) == WireErrc::UnsupportedVersion);
  CHECK(decode_error(hex({0x5A, 0x48, 0x01, 0x0C, 0, 0, 0, 0, 0, 0})) == WireErrc::UnknownKind);
  CHECK(decode_error(hex({0x5A, 0x48, 0x01, 0x00, 0, 0, 0, 0, 0, 0})) == WireErrc::UnknownKind);
  CHECK(decode_error(hex({0x5A, 0x48, 0x01, 0x03, 0, 0, 0, 3, 0x00, 0xC3, 0x61, 0x62})) == WireErrc::LengthMismatch);
  CHECK(decode_error(hex({0x5A, 0x48, 0x01})) == WireErrc::LengthMismatch);
}

TEST_CASE("trailing bytes are reported as unconsumed") {
  auto bytes = encode_frame({Kind::Echo, to_bytes("hi")});
  bytes.push_back(0x99);
  bytes.push_back(0x98);
  const auto d = decode_frame(bytes);
  CHECK(d.frame.payload == to_bytes("hi"));
  CHECK(d.consumed == 12);
  CHECK(d.unconsumed == 2);
}

TEST_CASE("peek_frame_size") {
  const auto bytes = encode_frame({Kind::Echo, Bytes(100, 1)});
  CHECK_FALSE(peek_frame_size(ByteView(bytes).first(9), 65536).has_value());
  CHECK(peek_frame_size(bytes, 65536) == 110u);
  CHECK_THROWS_AS(peek_frame_size(bytes, 99), WireError);
}

TEST_CASE("round trip over random frames") {
  std::mt19937_64 gen(2024);
  for (int i = 0; i < 2000; ++i) {
    const auto f = random_frame(gen, 300);
    CHECK(decode_frame(encode_frame(f)).frame == f);
  }
}

TEST_CASE("every single-byte mutation is rejected or caught by the checksum") {
  std::mt19937_64 gen(77);
  for (int i = 0; i < 300; ++i) {
    const auto f = random_frame(gen, 40);
    const auto encoded = encode_frame(f);
    for (std::size_t pos = 0; pos < encoded.size(); ++pos) {
      auto mutated = encoded;
      mutated[pos] ^= static_cast<std::uint8_t>(1 + gen() % 255);
      bool rejected = false;
      try {
        const auto d = decode_frame(mutated);
        // Only a kind change to another valid kind can survive.
        rejected = !(d.frame == f);
        CHECK(pos == 3);
      } catch (const WireError&) {
        rejected = true;
      }
      CHECK(rejected);
    }
  }
}

TEST_CASE("negotiate") {
  CHECK(negotiate({1, 8, 1024}, {1, 8, 1024}) == HandshakeParams{1, 8, 1024});
  CHECK(negotiate({1, 16, 512}, {1, 8, 4096}) == HandshakeParams{1, 8, 512});
  try {
    negotiate({1, 8, 1024}, {2, 8, 1024});
    FAIL("expected VersionMismatch");
  } catch (const WireError& e) {
    CHECK(e.code() == WireErrc::VersionMismatch);
  }
  CHECK_THROWS_AS(negotiate({1, 0, 1024}, {1, 8, 1024}), WireError);
  CHECK_THROWS_AS(negotiate({1, 8, 0}, {1, 8, 1024}), WireError);
}

TEST_CASE("negotiate is commutative") {
  std::mt19937_64 gen(5);
  for (int i = 0; i < 1000; ++i) {
    const HandshakeParams a{1, static_cast<std::uint16_t>(1 + gen() % 65535), static_cast<std::uint32_t>(1 + gen() % 100000)};
    const HandshakeParams b{1, static_cast<std::uint16_t>(1 + gen() % 65535), static_cast<std::uint32_t>(1 + gen() % 100000)};
    CHECK(negotiate(a, b) == negotiate(b, a));
  }
}

TEST_CASE("handshake payload round trip") {
  const HandshakeParams p{1, 300, 70000};
  const auto hello = make_hello(p);
  CHECK(hello.kind == Kind::Hello);
  CHECK(hello.payload == hex({0x01, 0x01, 0x2C, 0x00, 0x01, 0x11, 0x70}));
  CHECK(parse_handshake(hello) == p);
  CHECK(parse_handshake(make_hello_ack(p)) == p);
  CHECK_THROWS_AS(parse_handshake(Frame{Kind::Hello, hex({1, 0, 8})}), WireError);
}

TEST_CASE("message payloads") {
  const auto direct = make_direct("bob", to_bytes("hi"));
  CHECK(direct.payload == hex({3, 'b', 'o', 'b', 'h', 'i'}));
  CHECK(parse_addressed(direct) == Addressed{"bob", to_bytes("hi")});
  CHECK(parse_addressed(make_deliver("alice", {})) == Addressed{"alice", {}});
  CHECK(parse_register(make_register("alice")) == "alice");

  const auto err = make_error(ErrorCode::UnknownRecipient, "no such id");
  CHECK(err.payload.front() == 2);
  const auto parsed = parse_error(err);
  CHECK(parsed.code == ErrorCode::UnknownRecipient);
  CHECK(parsed.detail == "no such id");

  CHECK_THROWS_AS(parse_error(Frame{Kind::Error, hex({9})}), WireError);
  CHECK_THROWS_AS(parse_addressed(Frame{Kind::Direct, hex({5, 'a'})}), WireError);
  CHECK_THROWS_AS(parse_register(Frame{Kind::Register, Bytes(65, 'a')}), WireError);
}

TEST_CASE("client ids") {
  CHECK(is_valid_client_id("alice"));
  CHECK(is_valid_client_id(std::string(64, 'x')));
  CHECK_FALSE(is_valid_client_id(""));
  CHECK_FALSE(is_valid_client_id(std::string(65, 'x')));
  CHECK(is_valid_client_id("\xC3\xA9t\xC3\xA9"));
  CHECK_FALSE(is_valid_client_id("\xC3"));
  CHECK_FALSE(is_valid_client_id("\xFF\xFE"));
  CHECK_FALSE(is_valid_utf8("\xED\xA0\x80"));  // surrogate
  CHECK_FALSE(is_valid_utf8("\xC0\xAF"));      // overlong
  CHECK(is_valid_utf8("\xF0\x9F\x98\x80"));
}
