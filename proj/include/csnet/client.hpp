#pragma once

// Client side of the relay protocol.

#include <chrono>
#include <deque>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "csnet/transport.hpp"
#include "csnet/wire_protocol.hpp"

namespace csnet::relay {

class ClientError : public std::runtime_error {
 public:
  ClientError(std::optional<wire::ErrorCode> code, const std::string& detail);
  /// The server's ERROR code, when the failure came from one.
  std::optional<wire::ErrorCode> code() const { return code_; }

 private:
  std::optional<wire::ErrorCode> code_;
};

class Client {
 public:
  explicit Client(std::unique_ptr<net::Endpoint> endpoint);

  static Client connect_tcp(const net::Address& server, std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));

  /// HELLO / HELLO_ACK. Returns the agreed parameters.
  wire::HandshakeParams handshake(const wire::HandshakeParams& proposal = {},
                                  std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));
  void register_id(std::string_view id, std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));
  /// ECHO and wait for the matching ECHO_REPLY.
  Bytes echo(ByteView data, std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));

  void send_direct(std::string_view to, ByteView message);
  void send_broadcast(ByteView message);
  void send_echo(ByteView data);
  void send_bye();

  /// Next frame from the server, including any set aside while waiting
  /// for a specific reply.
  net::RecvResult next(std::chrono::milliseconds timeout);

  net::Endpoint& endpoint() { return *endpoint_; }
  const std::optional<wire::HandshakeParams>& agreed() const { return agreed_; }

 private:
  /// Waits for a frame of `kind`; ERROR frames throw, others are set aside.
  wire::Frame await(wire::Kind kind, std::chrono::milliseconds timeout);

  std::unique_ptr<net::Endpoint> endpoint_;
  std::deque<wire::Frame> stashed_;
  std::optional<wire::HandshakeParams> agreed_;
};

}  // namespace csnet::relay
