#include "csnet/relay_server.hpp"

#include <algorithm>
#include <iostream>

namespace csnet::relay {

using wire::ErrorCode;
using wire::Frame;
using wire::Kind;

// --- delivery queue ---------------------------------------------------------

DeliveryQueue::DeliveryQueue(std::size_t capacity) : capacity_(capacity) {}

bool DeliveryQueue::push(Frame frame, milliseconds wait) {
  {
    std::unique_lock lock(mu_);
    if (!not_full_.wait_for(lock, wait, [&] { return closed_ || frames_.size() < capacity_; })) return false;
    if (closed_) return false;
    frames_.push_back(std::move(frame));
  }
  wakeup_.notify();
  return true;
}

std::vector<Frame> DeliveryQueue::drain() {
  wakeup_.drain();
  std::vector<Frame> out;
  {
    std::lock_guard lock(mu_);
    out.assign(std::make_move_iterator(frames_.begin()), std::make_move_iterator(frames_.end()));
    frames_.clear();
  }
  not_full_.notify_all();
  return out;
}

void DeliveryQueue::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
    frames_.clear();
  }
  not_full_.notify_all();
}

std::size_t DeliveryQueue::size() const {
  std::lock_guard lock(mu_);
  return frames_.size();
}

// --- registry ---------------------------------------------------------------

RegisterResult Registry::add(const std::string& id, DeliveryHandle handle) {
  if (!wire::is_valid_client_id(id)) return RegisterResult::InvalidId;
  std::lock_guard lock(mu_);
  if (entries_.contains(id)) return RegisterResult::DuplicateId;
  if (entries_.size() >= capacity_) return RegisterResult::Full;
  entries_.emplace(id, std::move(handle));
  return RegisterResult::Ok;
}

bool Registry::remove(const std::string& id, const DeliveryHandle& handle) {
  std::lock_guard lock(mu_);
  const auto it = entries_.find(id);
  if (it == entries_.end() || it->second != handle) return false;
  entries_.erase(it);
  return true;
}

DeliveryHandle Registry::find(std::string_view id) const {
  std::lock_guard lock(mu_);
  const auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : it->second;
}

std::vector<std::pair<std::string, DeliveryHandle>> Registry::snapshot() const {
  std::lock_guard lock(mu_);
  return {entries_.begin(), entries_.end()};
}

std::vector<std::string> Registry::ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [id, handle] : entries_) out.push_back(id);
  return out;
}

std::size_t Registry::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

// --- routing ----------------------------------------------------------------

RouteResult route_direct(const Registry& registry, std::string_view from, std::string_view to, ByteView message,
                         milliseconds wait) {
  const auto target = registry.find(to);
  if (!target) return RouteResult::UnknownRecipient;
  if (!target->push(wire::make_deliver(from, message), wait)) return RouteResult::RecipientBusy;
  return RouteResult::Delivered;
}

std::size_t broadcast(const Registry& registry, std::string_view from, ByteView message, milliseconds wait) {
  const Frame deliver = wire::make_deliver(from, message);
  std::size_t delivered = 0;
  for (const auto& [id, handle] : registry.snapshot()) {
    if (id == from) continue;
    if (handle->push(deliver, wait)) ++delivered;
  }
  return delivered;
}

// --- server -----------------------------------------------------------------

RelayServer::RelayServer(std::unique_ptr<net::Listener> listener, ServerConfig config)
    : listener_(std::move(listener)), config_(config), registry_(config.max_clients) {
  wire::validate(config_.supported);
}

RelayServer::~RelayServer() { stop(); }

void RelayServer::log(const std::string& message) const {
  if (config_.log_errors) std::cerr << "relay: " << message << '\n';
}

void RelayServer::start() {
  acceptor_ = std::thread([this] { accept_loop(); });
}

void RelayServer::serve() { accept_loop(); }

void RelayServer::stop() {
  if (stopping_.exchange(true)) {
    if (acceptor_.joinable()) acceptor_.join();
    return;
  }
  {
    std::lock_guard lock(workers_mu_);
    if (sequential_current_) sequential_current_->shutdown();
  }
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard lock(workers_mu_);
    for (auto& worker : workers_) worker.endpoint->shutdown();
  }
  reap(true);
  listener_->close();
}

void RelayServer::reap(bool all) {
  std::list<Worker> finished;
  {
    std::lock_guard lock(workers_mu_);
    for (auto it = workers_.begin(); it != workers_.end();) {
      if (all || it->done->load()) {
        finished.splice(finished.end(), workers_, it++);
      } else {
        ++it;
      }
    }
  }
  for (auto& worker : finished) worker.thread.join();
}

void RelayServer::accept_loop() {
  while (!stopping_.load()) {
    std::unique_ptr<net::Endpoint> accepted;
    try {
      accepted = listener_->accept(config_.accept_poll);
    } catch (const std::exception& e) {
      if (stopping_.load()) break;
      log(std::string("accept failed: ") + e.what());
      std::this_thread::sleep_for(config_.accept_poll);
      continue;
    }
    reap(false);
    if (!accepted) continue;
    std::shared_ptr<net::Endpoint> endpoint = std::move(accepted);
    ++accepted_;

    if (live_workers_.load() >= config_.max_clients) {
      try {
        endpoint->send_frame(wire::make_error(ErrorCode::RecipientBusy, "server full"));
      } catch (const std::exception&) {
      }
      endpoint->shutdown();
      continue;
    }

    ++live_workers_;
    if (config_.mode == ServiceMode::Sequential) {
      {
        std::lock_guard lock(workers_mu_);
        sequential_current_ = endpoint;
      }
      handle_client(endpoint);
      {
        std::lock_guard lock(workers_mu_);
        sequential_current_.reset();
      }
      --live_workers_;
      continue;
    }

    auto done = std::make_shared<std::atomic<bool>>(false);
    std::lock_guard lock(workers_mu_);
    workers_.push_back(Worker{std::thread([this, endpoint, done] {
                                handle_client(endpoint);
                                --live_workers_;
                                done->store(true);
                              }),
                              endpoint, done});
  }
}

namespace {

struct ClientSession {
  std::optional<std::string> id;
  DeliveryHandle queue;
};

}  // namespace

void RelayServer::handle_client(const std::shared_ptr<net::Endpoint>& endpoint) {
  net::Endpoint& ep = *endpoint;
  ClientSession session;
  session.queue = std::make_shared<DeliveryQueue>(config_.queue_capacity);

  auto send_error = [&](ErrorCode code, const std::string& detail) {
    ep.send_frame(wire::make_error(code, detail));
  };

  auto handle_frame = [&](const Frame& frame) -> bool {
    switch (frame.kind) {
      case Kind::Register: {
        if (session.id) {
          send_error(ErrorCode::Malformed, "already registered as " + *session.id);
          return true;
        }
        std::string id;
        try {
          id = wire::parse_register(frame);
        } catch (const wire::WireError&) {
          send_error(ErrorCode::Malformed, "client id must be 1..64 bytes of UTF-8");
          return true;
        }
        switch (registry_.add(id, session.queue)) {
          case RegisterResult::Ok:
            session.id = id;
            ep.send_frame(wire::make_register_ack());
            break;
          case RegisterResult::DuplicateId: send_error(ErrorCode::DuplicateId, id); break;
          case RegisterResult::InvalidId: send_error(ErrorCode::Malformed, "invalid id"); break;
          case RegisterResult::Full: send_error(ErrorCode::RecipientBusy, "registry full"); break;
        }
        return true;
      }
      case Kind::Direct: {
        if (!session.id) {
          send_error(ErrorCode::NotRegistered, "REGISTER before DIRECT");
          return true;
        }
        wire::Addressed direct;
        try {
          direct = wire::parse_addressed(frame);
        } catch (const wire::WireError& e) {
          send_error(ErrorCode::Malformed, e.what());
          return true;
        }
        switch (route_direct(registry_, *session.id, direct.peer, direct.message, config_.enqueue_wait)) {
          case RouteResult::Delivered: break;
          case RouteResult::UnknownRecipient: send_error(ErrorCode::UnknownRecipient, direct.peer); break;
          case RouteResult::RecipientBusy: send_error(ErrorCode::RecipientBusy, direct.peer); break;
        }
        return true;
      }
      case Kind::Broadcast:
        if (!session.id) {
          send_error(ErrorCode::NotRegistered, "REGISTER before BROADCAST");
          return true;
        }
        broadcast(registry_, *session.id, frame.payload, config_.enqueue_wait);
        return true;
      case Kind::Echo:
        if (config_.echo_work.count() > 0) std::this_thread::sleep_for(config_.echo_work);
        ep.send_frame(wire::make_echo_reply(frame.payload));
        return true;
      case Kind::Bye:
        return false;
      default:
        send_error(ErrorCode::Malformed, "unexpected " + std::string(wire::kind_name(frame.kind)));
        return true;
    }
  };

  try {
    const auto hello = ep.recv_frame(config_.handshake_timeout);
    if (!hello.has_frame()) {
      ep.shutdown();
      return;
    }
    if (hello.frame.kind != Kind::Hello) {
      send_error(ErrorCode::Malformed, "expected HELLO");
      ep.shutdown();
      return;
    }
    wire::HandshakeParams agreed;
    try {
      agreed = wire::negotiate(wire::parse_handshake(hello.frame), config_.supported);
    } catch (const wire::WireError& e) {
      send_error(e.code() == wire::WireErrc::VersionMismatch ? ErrorCode::VersionMismatch : ErrorCode::Malformed,
                 e.what());
      ep.shutdown();
      return;
    }
    ep.set_max_payload(agreed.max_payload);
    ep.send_frame(wire::make_hello_ack(agreed));

    while (!stopping_.load()) {
      net::RecvResult received;
      std::optional<wire::WireError> bad_frame;
      try {
        received = ep.recv_frame(config_.recv_timeout, &session.queue->wakeup());
      } catch (const wire::WireError& e) {
        bad_frame = e;
      }
      for (const auto& deliver : session.queue->drain()) ep.send_frame(deliver);

      if (bad_frame) {
        send_error(ErrorCode::Malformed, bad_frame->what());
        // A bad checksum or trailing bytes leave the framing intact.
        if (bad_frame->code() == wire::WireErrc::ChecksumMismatch ||
            bad_frame->code() == wire::WireErrc::TrailingBytes) {
          continue;
        }
        break;
      }
      if (received.status == net::RecvStatus::Closed) break;
      if (!received.has_frame()) continue;
      if (!handle_frame(received.frame)) break;
    }
  } catch (const net::TransportError& e) {
    if (e.code() != net::TransportErrc::Closed) log(std::string("client dropped: ") + e.what());
  } catch (const std::exception& e) {
    log(std::string("worker failed: ") + e.what());
  }

  if (session.id) registry_.remove(*session.id, session.queue);
  session.queue->close();
  ep.shutdown();
}

// --- datagram responder -----------------------------------------------------

DatagramServer::DatagramServer(net::DatagramSocket socket, DatagramServerConfig config)
    : socket_(std::move(socket)), config_(config), epoch_(std::chrono::steady_clock::now()) {
  config_.supported.max_payload = std::min(config_.supported.max_payload, net::kMaxDatagramPayload);
  wire::validate(config_.supported);
}

DatagramServer::~DatagramServer() { stop(); }

void DatagramServer::start() {
  thread_ = std::thread([this] { serve(); });
}

void DatagramServer::serve() {
  if (config_.arq) {
    serve_arq();
  } else {
    serve_plain();
  }
}

void DatagramServer::stop() {
  stopping_.store(true);
  socket_.shutdown();
  if (thread_.joinable()) thread_.join();
}

std::size_t DatagramServer::sessions() const {
  std::lock_guard lock(sessions_mu_);
  return sessions_.size();
}

arq::Tick DatagramServer::now() const {
  return static_cast<arq::Tick>((std::chrono::steady_clock::now() - epoch_) / config_.arq_options.tick);
}

std::optional<Frame> DatagramServer::respond(const Bytes& body) {
  Frame frame;
  try {
    auto decoded = wire::decode_frame(body);
    if (decoded.unconsumed != 0) return wire::make_error(ErrorCode::Malformed, "trailing bytes after frame");
    frame = std::move(decoded.frame);
  } catch (const wire::WireError& e) {
    return wire::make_error(ErrorCode::Malformed, e.what());
  }
  switch (frame.kind) {
    case Kind::Hello:
      try {
        return wire::make_hello_ack(wire::negotiate(wire::parse_handshake(frame), config_.supported));
      } catch (const wire::WireError& e) {
        return wire::make_error(
            e.code() == wire::WireErrc::VersionMismatch ? ErrorCode::VersionMismatch : ErrorCode::Malformed,
            e.what());
      }
    case Kind::Echo:
      if (config_.echo_work.count() > 0) std::this_thread::sleep_for(config_.echo_work);
      return wire::make_echo_reply(frame.payload);
    case Kind::Bye:
      return std::nullopt;
    case Kind::Register:
    case Kind::Direct:
    case Kind::Broadcast:
      return wire::make_error(ErrorCode::Malformed, "relaying needs a stream connection");
    default:
      return wire::make_error(ErrorCode::Malformed, "unexpected " + std::string(wire::kind_name(frame.kind)));
  }
}

void DatagramServer::serve_plain() {
  while (!stopping_.load()) {
    auto datagram = socket_.recv_from(config_.poll);
    if (datagram.status == net::RecvStatus::Closed) break;
    if (datagram.status != net::RecvStatus::Frame) continue;
    if (auto reply = respond(datagram.data)) {
      if (reply->payload.size() > net::kMaxDatagramPayload) {
        reply = wire::make_error(ErrorCode::Malformed, "reply exceeds datagram limit");
      }
      socket_.send_to(datagram.from, wire::encode_frame(*reply));
    }
  }
}

void DatagramServer::serve_arq() {
  const auto& opts = config_.arq_options;
  while (!stopping_.load()) {
    auto datagram = socket_.recv_from(std::min(config_.poll, opts.tick * 5));
    if (datagram.status == net::RecvStatus::Closed) break;

    std::lock_guard lock(sessions_mu_);
    const auto tick = now();
    auto emit = [&](const net::Address& to, const arq::ArqSession::Output& out) {
      for (const auto& d : out.outgoing) socket_.send_to(to, d);
    };
    if (datagram.status == net::RecvStatus::Frame) {
      auto it = sessions_.find(datagram.from);
      if (it == sessions_.end()) {
        it = sessions_
                 .emplace(datagram.from,
                          Session{arq::ArqSession(opts.window, opts.timeout_ticks,
                                                  net::kMaxDatagramPayload + wire::kHeaderSize),
                                  std::chrono::steady_clock::now()})
                 .first;
      }
      auto& session = it->second;
      session.last_active = std::chrono::steady_clock::now();
      auto out = session.arq.on_datagram(datagram.data, tick);
      emit(datagram.from, out);
      for (const auto& body : out.delivered) {
        if (auto reply = respond(body)) emit(datagram.from, session.arq.send(wire::encode_frame(*reply), tick));
      }
    }
    const auto wall = std::chrono::steady_clock::now();
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      emit(it->first, it->second.arq.on_tick(tick));
      if (it->second.arq.idle() && wall - it->second.last_active > config_.session_idle_expiry) {
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }
}

}  // namespace csnet::relay
