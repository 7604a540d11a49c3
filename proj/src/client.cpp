#include "csnet/client.hpp"

#include <algorithm>

namespace csnet::relay {

using Clock = std::chrono::steady_clock;
using std::chrono::milliseconds;

ClientError::ClientError(std::optional<wire::ErrorCode> code, const std::string& detail)
    : std::runtime_error(detail), code_(code) {}

Client::Client(std::unique_ptr<net::Endpoint> endpoint) : endpoint_(std::move(endpoint)) {}

Client Client::connect_tcp(const net::Address& server, milliseconds timeout) {
  return Client(net::StreamEndpoint::connect(server, timeout));
}

wire::Frame Client::await(wire::Kind kind, milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    const auto left = std::chrono::duration_cast<milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) {
      throw ClientError(std::nullopt, "timed out waiting for " + std::string(wire::kind_name(kind)));
    }
    auto received = endpoint_->recv_frame(left);
    if (received.status == net::RecvStatus::Closed) {
      throw ClientError(std::nullopt, "server closed the connection");
    }
    if (!received.has_frame()) continue;
    if (received.frame.kind == kind) return std::move(received.frame);
    if (received.frame.kind == wire::Kind::Error) {
      const auto error = wire::parse_error(received.frame);
      throw ClientError(error.code, "server error " + std::to_string(static_cast<int>(error.code)) + ": " +
                                        error.detail);
    }
    stashed_.push_back(std::move(received.frame));
  }
}

wire::HandshakeParams Client::handshake(const wire::HandshakeParams& proposal, milliseconds timeout) {
  endpoint_->send_frame(wire::make_hello(proposal));
  agreed_ = wire::parse_handshake(await(wire::Kind::HelloAck, timeout));
  return *agreed_;
}

void Client::register_id(std::string_view id, milliseconds timeout) {
  endpoint_->send_frame(wire::make_register(id));
  await(wire::Kind::RegisterAck, timeout);
}

Bytes Client::echo(ByteView data, milliseconds timeout) {
  send_echo(data);
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    const auto left = std::chrono::duration_cast<milliseconds>(deadline - Clock::now());
    auto reply = await(wire::Kind::EchoReply, left);
    if (std::equal(reply.payload.begin(), reply.payload.end(), data.begin(), data.end())) {
      return std::move(reply.payload);
    }
    stashed_.push_back(std::move(reply));
  }
}

void Client::send_direct(std::string_view to, ByteView message) {
  endpoint_->send_frame(wire::make_direct(to, message));
}

void Client::send_broadcast(ByteView message) { endpoint_->send_frame(wire::make_broadcast(message)); }

void Client::send_echo(ByteView data) { endpoint_->send_frame(wire::make_echo(data)); }

void Client::send_bye() { endpoint_->send_frame(wire::make_bye()); }

net::RecvResult Client::next(milliseconds timeout) {
  if (!stashed_.empty()) {
    net::RecvResult result{net::RecvStatus::Frame, std::move(stashed_.front())};
    stashed_.pop_front();
    return result;
  }
  return endpoint_->recv_frame(timeout);
}

}  // namespace csnet::relay
