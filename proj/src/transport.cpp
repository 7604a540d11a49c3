#include "csnet/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <charconv>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>

namespace csnet::net {

namespace {

using Clock = std::chrono::steady_clock;

std::string errno_text(int err) { return std::strerror(err); }

[[noreturn]] void throw_io(const std::string& what, int err) {
  throw TransportError(TransportErrc::Io, what + ": " + errno_text(err));
}

sockaddr_in to_sockaddr(const Address& a) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_addr.s_addr = htonl(a.ip);
  sa.sin_port = htons(a.port);
  return sa;
}

Address from_sockaddr(const sockaddr_in& sa) { return Address{ntohl(sa.sin_addr.s_addr), ntohs(sa.sin_port)}; }

Address local_of(int fd) {
  sockaddr_in sa{};
  socklen_t len = sizeof(sa);
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len) != 0) throw_io("getsockname", errno);
  return from_sockaddr(sa);
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

milliseconds remaining_until(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<milliseconds>(deadline - Clock::now());
  return left.count() > 0 ? left : milliseconds(0);
}

enum class Ready { Timeout, Primary, Wake, Extra };

/// Polls `fd` for `events`, plus the optional wake and extra fds.
Ready wait_for(int fd, short events, milliseconds timeout, const Wakeup* wake, int extra_fd = -1) {
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    pollfd fds[3];
    nfds_t n = 0;
    fds[n++] = pollfd{fd, events, 0};
    const int wake_index = wake ? static_cast<int>(n) : -1;
    if (wake) fds[n++] = pollfd{wake->fd(), POLLIN, 0};
    const int extra_index = extra_fd >= 0 ? static_cast<int>(n) : -1;
    if (extra_fd >= 0) fds[n++] = pollfd{extra_fd, POLLIN, 0};

    const int rc = ::poll(fds, n, static_cast<int>(remaining_until(deadline).count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw_io("poll", errno);
    }
    if (rc == 0) return Ready::Timeout;
    if (extra_index >= 0 && fds[extra_index].revents) return Ready::Extra;
    if (wake_index >= 0 && fds[wake_index].revents) return Ready::Wake;
    if (fds[0].revents) return Ready::Primary;
  }
}

}  // namespace

// --- basics -----------------------------------------------------------------

Address Address::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) {
    throw TransportError(TransportErrc::AddrInvalid, "expected host:port, got '" + std::string(text) + "'");
  }
  const std::string host(text.substr(0, colon));
  const auto port_text = text.substr(colon + 1);
  unsigned port = 0;
  const auto [end, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc() || end != port_text.data() + port_text.size() || port > 65535 || port_text.empty()) {
    throw TransportError(TransportErrc::AddrInvalid, "bad port in '" + std::string(text) + "'");
  }
  in_addr addr{};
  if (host == "localhost") {
    addr.s_addr = htonl(0x7F000001u);
  } else if (::inet_pton(AF_INET, host.c_str(), &addr) != 1) {
    throw TransportError(TransportErrc::AddrInvalid, "bad IPv4 host in '" + std::string(text) + "'");
  }
  return Address{ntohl(addr.s_addr), static_cast<std::uint16_t>(port)};
}

std::string Address::to_string() const {
  return std::to_string(ip >> 24) + "." + std::to_string((ip >> 16) & 0xFF) + "." +
         std::to_string((ip >> 8) & 0xFF) + "." + std::to_string(ip & 0xFF) + ":" + std::to_string(port);
}

std::string_view errc_name(TransportErrc code) {
  switch (code) {
    case TransportErrc::AddrInvalid: return "AddrInvalid";
    case TransportErrc::AddrInUse: return "AddrInUse";
    case TransportErrc::PermissionDenied: return "PermissionDenied";
    case TransportErrc::ConnectFailed: return "ConnectFailed";
    case TransportErrc::Closed: return "Closed";
    case TransportErrc::TimedOut: return "TimedOut";
    case TransportErrc::FrameTooLarge: return "FrameTooLarge";
    case TransportErrc::Io: return "Io";
  }
  return "Unknown";
}

TransportError::TransportError(TransportErrc code, const std::string& detail)
    : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

Fd& Fd::operator=(Fd&& other) noexcept {
  if (this != &other) {
    reset();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

void Fd::reset() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

Wakeup::Wakeup() : fd_(::eventfd(0, EFD_NONBLOCK | EFD_CLOEXEC)) {
  if (!fd_.valid()) throw_io("eventfd", errno);
}

void Wakeup::notify() const {
  const std::uint64_t one = 1;
  [[maybe_unused]] auto n = ::write(fd_.get(), &one, sizeof(one));
}

void Wakeup::drain() const {
  std::uint64_t value = 0;
  [[maybe_unused]] auto n = ::read(fd_.get(), &value, sizeof(value));
}

// --- stream -----------------------------------------------------------------

StreamEndpoint::StreamEndpoint(Fd fd, Address local, Address remote)
    : fd_(std::move(fd)), local_(local), remote_(remote) {}

std::unique_ptr<StreamEndpoint> StreamEndpoint::connect(const Address& remote, milliseconds timeout) {
  Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0));
  if (!fd.valid()) throw_io("socket", errno);
  const auto sa = to_sockaddr(remote);
  if (::connect(fd.get(), reinterpret_cast<const sockaddr*>(&sa), sizeof(sa)) != 0) {
    if (errno != EINPROGRESS) {
      throw TransportError(TransportErrc::ConnectFailed, remote.to_string() + ": " + errno_text(errno));
    }
    if (wait_for(fd.get(), POLLOUT, timeout, nullptr) == Ready::Timeout) {
      throw TransportError(TransportErrc::TimedOut, "connect to " + remote.to_string());
    }
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) throw TransportError(TransportErrc::ConnectFailed, remote.to_string() + ": " + errno_text(err));
  }
  set_nodelay(fd.get());
  const Address local = local_of(fd.get());
  return std::make_unique<StreamEndpoint>(std::move(fd), local, remote);
}

void StreamEndpoint::send_frame(const wire::Frame& frame) { send_raw(wire::encode_frame(frame)); }

void StreamEndpoint::send_raw(ByteView bytes) {
  const auto deadline = Clock::now() + send_timeout_;
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd_.get(), bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n > 0) {
      sent += static_cast<std::size_t>(n);
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      if (wait_for(fd_.get(), POLLOUT, remaining_until(deadline), nullptr) == Ready::Timeout) {
        throw TransportError(TransportErrc::TimedOut, "send to " + remote_.to_string() + " stalled");
      }
      continue;
    }
    if (n < 0 && (errno == EPIPE || errno == ECONNRESET || errno == ENOTCONN)) {
      throw TransportError(TransportErrc::Closed, "peer " + remote_.to_string() + " closed");
    }
    throw_io("send", errno);
  }
}

std::optional<wire::Frame> StreamEndpoint::take_buffered() {
  const ByteView pending(rx_.data() + rx_start_, rx_.size() - rx_start_);
  std::optional<std::size_t> size;
  try {
    size = wire::peek_frame_size(pending, max_payload_);
  } catch (const wire::WireError&) {
    // Framing is lost; nothing after this point can be trusted.
    rx_.clear();
    rx_start_ = 0;
    eof_ = true;
    throw;
  }
  if (!size || pending.size() < *size) {
    if (rx_start_ > 0 && rx_start_ * 2 >= rx_.size()) {
      rx_.erase(rx_.begin(), rx_.begin() + static_cast<std::ptrdiff_t>(rx_start_));
      rx_start_ = 0;
    }
    return std::nullopt;
  }
  const ByteView encoded = pending.first(*size);
  rx_start_ += *size;
  if (rx_start_ == rx_.size()) {
    auto decoded = wire::decode_frame(encoded);  // decode before clearing the buffer
    rx_.clear();
    rx_start_ = 0;
    return std::move(decoded.frame);
  }
  return wire::decode_frame(encoded).frame;
}

RecvResult StreamEndpoint::recv_frame(milliseconds timeout, const Wakeup* wake) {
  const auto deadline = Clock::now() + timeout;
  std::uint8_t buffer[65536];
  for (;;) {
    if (auto frame = take_buffered()) return RecvResult{RecvStatus::Frame, std::move(*frame)};
    if (eof_) return RecvResult{RecvStatus::Closed, {}};
    switch (wait_for(fd_.get(), POLLIN, remaining_until(deadline), wake)) {
      case Ready::Timeout: return RecvResult{RecvStatus::TimedOut, {}};
      case Ready::Wake: return RecvResult{RecvStatus::Woken, {}};
      default: break;
    }
    const ssize_t n = ::recv(fd_.get(), buffer, sizeof(buffer), 0);
    if (n > 0) {
      rx_.insert(rx_.end(), buffer, buffer + n);
    } else if (n == 0) {
      eof_ = true;
    } else if (errno == ECONNRESET || errno == ENOTCONN) {
      eof_ = true;
    } else if (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
      throw_io("recv", errno);
    }
  }
}

void StreamEndpoint::shutdown() { ::shutdown(fd_.get(), SHUT_RDWR); }

std::unique_ptr<TcpListener> TcpListener::bind(const Address& address, int backlog) {
  Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0));
  if (!fd.valid()) throw_io("socket", errno);
  int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  const auto sa = to_sockaddr(address);
  if (::bind(fd.get(), reinterpret_cast<const sockaddr*>(&sa), sizeof(sa)) != 0) {
    const int err = errno;
    if (err == EADDRINUSE) throw TransportError(TransportErrc::AddrInUse, address.to_string());
    if (err == EACCES) throw TransportError(TransportErrc::PermissionDenied, address.to_string());
    throw_io("bind " + address.to_string(), err);
  }
  if (::listen(fd.get(), backlog) != 0) {
    const int err = errno;
    if (err == EADDRINUSE) throw TransportError(TransportErrc::AddrInUse, address.to_string());
    throw_io("listen " + address.to_string(), err);
  }
  const Address local = local_of(fd.get());
  return std::unique_ptr<TcpListener>(new TcpListener(std::move(fd), local));
}

std::unique_ptr<Endpoint> TcpListener::accept(milliseconds timeout) {
  if (!fd_.valid()) throw TransportError(TransportErrc::Closed, "listener closed");
  if (wait_for(fd_.get(), POLLIN, timeout, nullptr) == Ready::Timeout) return nullptr;
  sockaddr_in sa{};
  socklen_t len = sizeof(sa);
  Fd client(::accept4(fd_.get(), reinterpret_cast<sockaddr*>(&sa), &len, SOCK_NONBLOCK | SOCK_CLOEXEC));
  if (!client.valid()) {
    if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR || errno == ECONNABORTED) return nullptr;
    throw_io("accept", errno);
  }
  set_nodelay(client.get());
  const Address local = local_of(client.get());
  return std::make_unique<StreamEndpoint>(std::move(client), local, from_sockaddr(sa));
}

std::unique_ptr<TcpListener> listen(const Address& address) { return TcpListener::bind(address); }

// --- datagram ---------------------------------------------------------------

DatagramSocket::DatagramSocket(Fd fd, Address local)
    : fd_(std::move(fd)), local_(local), stop_(std::make_shared<Wakeup>()) {}

DatagramSocket DatagramSocket::bind(const Address& address) {
  Fd fd(::socket(AF_INET, SOCK_DGRAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0));
  if (!fd.valid()) throw_io("socket", errno);
  const auto sa = to_sockaddr(address);
  if (::bind(fd.get(), reinterpret_cast<const sockaddr*>(&sa), sizeof(sa)) != 0) {
    const int err = errno;
    if (err == EADDRINUSE) throw TransportError(TransportErrc::AddrInUse, address.to_string());
    if (err == EACCES) throw TransportError(TransportErrc::PermissionDenied, address.to_string());
    throw_io("bind " + address.to_string(), err);
  }
  const Address local = local_of(fd.get());
  return DatagramSocket(std::move(fd), local);
}

void DatagramSocket::send_to(const Address& to, ByteView datagram) const {
  const auto sa = to_sockaddr(to);
  for (;;) {
    const ssize_t n = ::sendto(fd_.get(), datagram.data(), datagram.size(), 0,
                               reinterpret_cast<const sockaddr*>(&sa), sizeof(sa));
    if (n >= 0) return;
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) {
      wait_for(fd_.get(), POLLOUT, milliseconds(1000), nullptr);
      continue;
    }
    // A refused port earlier in the flow surfaces here; datagrams are
    // fire-and-forget, so it is not an error for this send.
    if (errno == ECONNREFUSED) return;
    throw_io("sendto " + to.to_string(), errno);
  }
}

Datagram DatagramSocket::recv_from(milliseconds timeout, const Wakeup* wake) const {
  const auto deadline = Clock::now() + timeout;
  std::uint8_t buffer[65536];
  for (;;) {
    switch (wait_for(fd_.get(), POLLIN, remaining_until(deadline), wake, stop_->fd())) {
      case Ready::Timeout: return Datagram{RecvStatus::TimedOut, {}, {}};
      case Ready::Wake: return Datagram{RecvStatus::Woken, {}, {}};
      case Ready::Extra: return Datagram{RecvStatus::Closed, {}, {}};
      case Ready::Primary: break;
    }
    sockaddr_in sa{};
    socklen_t len = sizeof(sa);
    const ssize_t n = ::recvfrom(fd_.get(), buffer, sizeof(buffer), 0, reinterpret_cast<sockaddr*>(&sa), &len);
    if (n >= 0) return Datagram{RecvStatus::Frame, from_sockaddr(sa), Bytes(buffer, buffer + n)};
    if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR || errno == ECONNREFUSED) continue;
    throw_io("recvfrom", errno);
  }
}

void DatagramSocket::shutdown() const { stop_->notify(); }

void check_datagram_frame(const wire::Frame& frame) {
  if (frame.payload.size() > kMaxDatagramPayload) {
    throw TransportError(TransportErrc::FrameTooLarge, std::to_string(frame.payload.size()) +
                                                           "-byte payload exceeds the datagram limit of " +
                                                           std::to_string(kMaxDatagramPayload));
  }
}

namespace {

wire::Frame decode_whole(ByteView bytes, std::uint32_t max_payload) {
  if (bytes.size() >= wire::kHeaderSize) wire::peek_frame_size(bytes, max_payload);
  auto decoded = wire::decode_frame(bytes);
  if (decoded.unconsumed != 0) {
    throw wire::WireError(wire::WireErrc::TrailingBytes,
                          std::to_string(decoded.unconsumed) + " bytes after the frame");
  }
  return std::move(decoded.frame);
}

}  // namespace

DatagramEndpoint::DatagramEndpoint(DatagramSocket socket, std::optional<Address> remote)
    : socket_(std::move(socket)), remote_(remote) {
  max_payload_ = kMaxDatagramPayload;
}

namespace {

// Loopback peers get a loopback-bound socket so local_address() matches the
// source address the peer sees.
Address client_bind_for(const Address& remote) {
  return (remote.ip >> 24) == 127 ? Address::loopback() : Address{0, 0};
}

}  // namespace

std::unique_ptr<DatagramEndpoint> DatagramEndpoint::open(const Address& remote) {
  return std::make_unique<DatagramEndpoint>(DatagramSocket::bind(client_bind_for(remote)), remote);
}

void DatagramEndpoint::send_frame(const wire::Frame& frame) {
  const auto to = remote_ ? remote_ : last_peer_;
  if (!to) throw TransportError(TransportErrc::Closed, "datagram endpoint has no peer");
  send_frame_to(*to, frame);
}

void DatagramEndpoint::send_frame_to(const Address& to, const wire::Frame& frame) {
  check_datagram_frame(frame);
  socket_.send_to(to, wire::encode_frame(frame));
}

RecvResult DatagramEndpoint::recv_frame(milliseconds timeout, const Wakeup* wake) {
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    auto datagram = socket_.recv_from(remaining_until(deadline), wake);
    if (datagram.status != RecvStatus::Frame) return RecvResult{datagram.status, {}};
    if (remote_ && datagram.from != *remote_) continue;
    last_peer_ = datagram.from;
    return RecvResult{RecvStatus::Frame, decode_whole(datagram.data, max_payload_)};
  }
}

// --- ARQ over datagram ------------------------------------------------------

ArqDatagramEndpoint::ArqDatagramEndpoint(DatagramSocket socket, Address remote, ArqOptions options)
    : socket_(std::move(socket)),
      remote_(remote),
      options_(options),
      epoch_(Clock::now()),
      session_(options.window, options.timeout_ticks, kMaxDatagramPayload + wire::kHeaderSize) {
  max_payload_ = kMaxDatagramPayload;
}

std::unique_ptr<ArqDatagramEndpoint> ArqDatagramEndpoint::open(const Address& remote, ArqOptions options) {
  return std::make_unique<ArqDatagramEndpoint>(DatagramSocket::bind(client_bind_for(remote)), remote, options);
}

arq::Tick ArqDatagramEndpoint::now() const {
  return static_cast<arq::Tick>((Clock::now() - epoch_) / options_.tick);
}

void ArqDatagramEndpoint::emit(const arq::ArqSession::Output& out) {
  for (const auto& datagram : out.outgoing) socket_.send_to(remote_, datagram);
  for (const auto& payload : out.delivered) inbox_.push_back(payload);
}

void ArqDatagramEndpoint::pump(milliseconds budget) {
  milliseconds wait = budget;
  if (const auto deadline = session_.next_deadline()) {
    const auto tick_now = now();
    const auto ticks_left = *deadline > tick_now ? *deadline - tick_now : 0;
    wait = std::min(wait, std::chrono::duration_cast<milliseconds>(options_.tick * ticks_left));
  }
  auto datagram = socket_.recv_from(wait);
  if (datagram.status == RecvStatus::Closed) throw TransportError(TransportErrc::Closed, "endpoint shut down");
  if (datagram.status == RecvStatus::Frame && datagram.from == remote_) {
    emit(session_.on_datagram(datagram.data, now()));
  }
  emit(session_.on_tick(now()));
}

void ArqDatagramEndpoint::send_frame(const wire::Frame& frame) {
  check_datagram_frame(frame);
  emit(session_.send(wire::encode_frame(frame), now()));
  const auto deadline = Clock::now() + options_.send_timeout;
  while (session_.backlog() > 0) {
    if (Clock::now() >= deadline) {
      throw TransportError(TransportErrc::TimedOut, "send window to " + remote_.to_string() + " stayed full");
    }
    pump(remaining_until(deadline));
  }
}

RecvResult ArqDatagramEndpoint::recv_frame(milliseconds timeout, const Wakeup* wake) {
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    if (!inbox_.empty()) {
      Bytes encoded = std::move(inbox_.front());
      inbox_.pop_front();
      return RecvResult{RecvStatus::Frame, decode_whole(encoded, max_payload_)};
    }
    if (wake && wait_for(wake->fd(), POLLIN, milliseconds(0), nullptr) != Ready::Timeout) {
      return RecvResult{RecvStatus::Woken, {}};
    }
    if (Clock::now() >= deadline) return RecvResult{RecvStatus::TimedOut, {}};
    try {
      pump(std::min(remaining_until(deadline), milliseconds(10)));
    } catch (const TransportError& e) {
      if (e.code() == TransportErrc::Closed) return RecvResult{RecvStatus::Closed, {}};
      throw;
    }
  }
}

bool ArqDatagramEndpoint::flush(milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  while (!session_.idle()) {
    if (Clock::now() >= deadline) return false;
    pump(remaining_until(deadline));
  }
  return true;
}

// --- in-memory --------------------------------------------------------------

namespace {

std::atomic<std::uint16_t> g_next_memory_port{1};

struct Link {
  explicit Link(const sim::ChannelConfig& config)
      : paths{sim::Channel(config), sim::Channel(reverse_config(config))} {}

  static sim::ChannelConfig reverse_config(sim::ChannelConfig config) {
    config.seed = arq::derive_ack_seed(config.seed);
    return config;
  }

  std::mutex mu;
  sim::Tick now = 0;
  sim::Channel paths[2];  // paths[s] carries side s -> side 1-s
  std::deque<Bytes> inbox[2];
  bool closed[2] = {false, false};
  Wakeup arrivals[2];
  Address addresses[2];
};

class InMemoryEndpoint final : public Endpoint {
 public:
  InMemoryEndpoint(std::shared_ptr<Link> link, int side) : link_(std::move(link)), side_(side) {}
  ~InMemoryEndpoint() override {
    {
      std::lock_guard lock(link_->mu);
      link_->closed[side_] = true;
    }
    link_->arrivals[1 - side_].notify();
  }

  Mode mode() const override { return Mode::InMemory; }

  void send_frame(const wire::Frame& frame) override {
    {
      std::lock_guard lock(link_->mu);
      if (link_->closed[side_] || link_->closed[1 - side_]) {
        throw TransportError(TransportErrc::Closed, "in-memory peer closed");
      }
      link_->paths[side_].push(wire::encode_frame(frame), link_->now);
    }
    link_->arrivals[1 - side_].notify();
  }

  RecvResult recv_frame(milliseconds timeout, const Wakeup* wake) override {
    const auto deadline = Clock::now() + timeout;
    const int peer = 1 - side_;
    for (;;) {
      Bytes encoded;
      {
        std::lock_guard lock(link_->mu);
        auto& inbox = link_->inbox[side_];
        for (auto& d : link_->paths[peer].pop_ready(link_->now)) inbox.push_back(std::move(d));
        if (!inbox.empty()) {
          encoded = std::move(inbox.front());
          inbox.pop_front();
        } else if (link_->paths[peer].in_flight() > 0) {
          ++link_->now;
          continue;
        } else if (link_->closed[side_] || link_->closed[peer]) {
          return RecvResult{RecvStatus::Closed, {}};
        }
      }
      if (!encoded.empty()) return RecvResult{RecvStatus::Frame, decode_whole(encoded, max_payload_)};
      switch (wait_for(link_->arrivals[side_].fd(), POLLIN, remaining_until(deadline), wake)) {
        case Ready::Timeout: return RecvResult{RecvStatus::TimedOut, {}};
        case Ready::Wake: return RecvResult{RecvStatus::Woken, {}};
        default: link_->arrivals[side_].drain(); break;
      }
    }
  }

  void shutdown() override {
    {
      std::lock_guard lock(link_->mu);
      link_->closed[side_] = true;
    }
    link_->arrivals[0].notify();
    link_->arrivals[1].notify();
  }

  Address local_address() const override { return link_->addresses[side_]; }
  std::optional<Address> remote_address() const override { return link_->addresses[1 - side_]; }

 private:
  std::shared_ptr<Link> link_;
  int side_;
};

}  // namespace

std::pair<std::unique_ptr<Endpoint>, std::unique_ptr<Endpoint>> make_in_memory_pair(
    const sim::ChannelConfig& config) {
  auto link = std::make_shared<Link>(config);
  link->addresses[0] = Address{0, g_next_memory_port++};
  link->addresses[1] = Address{0, g_next_memory_port++};
  return {std::make_unique<InMemoryEndpoint>(link, 0), std::make_unique<InMemoryEndpoint>(link, 1)};
}

struct InMemoryListener::State {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::unique_ptr<Endpoint>> pending;
  bool closed = false;
  Address address{0, g_next_memory_port++};
};

InMemoryListener::InMemoryListener() : state_(std::make_shared<State>()) {}

InMemoryListener::~InMemoryListener() { close(); }

std::unique_ptr<Endpoint> InMemoryListener::connect(const sim::ChannelConfig& config) {
  auto [client, server] = make_in_memory_pair(config);
  {
    std::lock_guard lock(state_->mu);
    if (state_->closed) throw TransportError(TransportErrc::ConnectFailed, "in-memory listener closed");
    state_->pending.push_back(std::move(server));
  }
  state_->cv.notify_one();
  return std::move(client);
}

std::unique_ptr<Endpoint> InMemoryListener::accept(milliseconds timeout) {
  std::unique_lock lock(state_->mu);
  if (!state_->cv.wait_for(lock, timeout, [&] { return !state_->pending.empty() || state_->closed; })) {
    return nullptr;
  }
  if (state_->closed) throw TransportError(TransportErrc::Closed, "listener closed");
  auto endpoint = std::move(state_->pending.front());
  state_->pending.pop_front();
  return endpoint;
}

Address InMemoryListener::local_address() const { return state_->address; }

void InMemoryListener::close() {
  {
    std::lock_guard lock(state_->mu);
    state_->closed = true;
    state_->pending.clear();
  }
  state_->cv.notify_all();
}

}  // namespace csnet::net
