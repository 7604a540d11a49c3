#pragma once

// Frame endpoints: TCP streams, UDP datagrams (optionally with Go-Back-N
// underneath), and an in-memory link that routes frames through
// sim::Channel. Every receive takes a timeout; there is no blocking-forever
// API.
//
// Ownership: one endpoint belongs to one worker at a time. A stream
// endpoint tolerates one reader thread and one writer thread at once, and
// shutdown() may be called from any thread to unblock both.

#include <chrono>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "csnet/channel_sim.hpp"
#include "csnet/reliability.hpp"
#include "csnet/wire_protocol.hpp"

namespace csnet::net {

using std::chrono::milliseconds;

/// Largest frame payload carried in one datagram; keeps UDP bodies clear of
/// IP fragmentation on a 1500-byte MTU.
inline constexpr std::uint32_t kMaxDatagramPayload = 1400;
inline constexpr std::uint32_t kDefaultMaxPayload = 65536;

struct Address {
  std::uint32_t ip = 0;  // host byte order
  std::uint16_t port = 0;

  /// IPv4 "a.b.c.d:port" or "localhost:port".
  static Address parse(std::string_view text);
  static Address loopback(std::uint16_t port = 0) { return Address{0x7F000001u, port}; }
  std::string to_string() const;

  friend bool operator==(const Address&, const Address&) = default;
  friend auto operator<=>(const Address&, const Address&) = default;
};

enum class TransportErrc {
  AddrInvalid,
  AddrInUse,
  PermissionDenied,
  ConnectFailed,
  Closed,
  TimedOut,
  FrameTooLarge,
  Io,
};

std::string_view errc_name(TransportErrc code);

class TransportError : public std::runtime_error {
 public:
  TransportError(TransportErrc code, const std::string& detail);
  TransportErrc code() const noexcept { return code_; }

 private:
  TransportErrc code_;
};

/// Owning file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Fd& operator=(Fd&& other) noexcept;
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset();

 private:
  int fd_ = -1;
};

/// Level-triggered wakeup (eventfd). notify() from any thread makes fd()
/// readable until drain().
class Wakeup {
 public:
  Wakeup();
  void notify() const;
  void drain() const;
  int fd() const { return fd_.get(); }

 private:
  Fd fd_;
};

enum class RecvStatus { Frame, TimedOut, Closed, Woken };

struct RecvResult {
  RecvStatus status = RecvStatus::TimedOut;
  wire::Frame frame;

  bool has_frame() const { return status == RecvStatus::Frame; }
};

enum class Mode { Stream, Datagram, InMemory };

class Endpoint {
 public:
  virtual ~Endpoint() = default;

  virtual Mode mode() const = 0;
  virtual void send_frame(const wire::Frame& frame) = 0;
  /// Waits up to `timeout` for a frame. Returns Woken early when `wake`
  /// becomes readable (the caller drains it). Throws WireError for frames
  /// that fail validation and TransportError for I/O failures.
  virtual RecvResult recv_frame(milliseconds timeout, const Wakeup* wake = nullptr) = 0;
  /// Unblocks any pending send/recv; safe from any thread.
  virtual void shutdown() = 0;

  virtual Address local_address() const = 0;
  virtual std::optional<Address> remote_address() const = 0;

  /// Incoming frames declaring a larger payload are rejected.
  void set_max_payload(std::uint32_t limit) { max_payload_ = limit; }
  std::uint32_t max_payload() const { return max_payload_; }

 protected:
  std::uint32_t max_payload_ = kDefaultMaxPayload;
};

class Listener {
 public:
  virtual ~Listener() = default;
  /// Nullptr on timeout.
  virtual std::unique_ptr<Endpoint> accept(milliseconds timeout) = 0;
  virtual Address local_address() const = 0;
  virtual void close() = 0;
};

// --- stream (TCP) -----------------------------------------------------------

class StreamEndpoint final : public Endpoint {
 public:
  StreamEndpoint(Fd fd, Address local, Address remote);

  static std::unique_ptr<StreamEndpoint> connect(const Address& remote, milliseconds timeout = milliseconds(5000));

  Mode mode() const override { return Mode::Stream; }
  void send_frame(const wire::Frame& frame) override;
  RecvResult recv_frame(milliseconds timeout, const Wakeup* wake = nullptr) override;
  void shutdown() override;
  Address local_address() const override { return local_; }
  std::optional<Address> remote_address() const override { return remote_; }

  /// Sends block at most this long waiting for socket buffer space.
  void set_send_timeout(milliseconds timeout) { send_timeout_ = timeout; }
  /// Writes raw bytes with no framing; lets tests split a frame.
  void send_raw(ByteView bytes);

 private:
  std::optional<wire::Frame> take_buffered();

  Fd fd_;
  Address local_;
  Address remote_;
  Bytes rx_;
  std::size_t rx_start_ = 0;
  bool eof_ = false;
  milliseconds send_timeout_{10000};
};

class TcpListener final : public Listener {
 public:
  /// Throws TransportError AddrInUse / PermissionDenied naming the address.
  static std::unique_ptr<TcpListener> bind(const Address& address, int backlog = 128);

  std::unique_ptr<Endpoint> accept(milliseconds timeout) override;
  Address local_address() const override { return local_; }
  void close() override { fd_.reset(); }

 private:
  TcpListener(Fd fd, Address local) : fd_(std::move(fd)), local_(local) {}

  Fd fd_;
  Address local_;
};

std::unique_ptr<TcpListener> listen(const Address& address);

// --- datagram (UDP) ---------------------------------------------------------

struct Datagram {
  RecvStatus status = RecvStatus::TimedOut;  // Frame means `data` is valid
  Address from;
  Bytes data;
};

/// Raw UDP socket; building block for the frame endpoints below.
class DatagramSocket {
 public:
  static DatagramSocket bind(const Address& address);

  void send_to(const Address& to, ByteView datagram) const;
  /// Closed once shutdown() has been called.
  Datagram recv_from(milliseconds timeout, const Wakeup* wake = nullptr) const;
  Address local_address() const { return local_; }
  void shutdown() const;

 private:
  DatagramSocket(Fd fd, Address local);

  Fd fd_;
  Address local_;
  std::shared_ptr<Wakeup> stop_;
};

/// One frame per datagram. No retransmission, ordering, or fragmentation.
class DatagramEndpoint final : public Endpoint {
 public:
  DatagramEndpoint(DatagramSocket socket, std::optional<Address> remote);

  static std::unique_ptr<DatagramEndpoint> open(const Address& remote);

  Mode mode() const override { return Mode::Datagram; }
  void send_frame(const wire::Frame& frame) override;
  void send_frame_to(const Address& to, const wire::Frame& frame);
  RecvResult recv_frame(milliseconds timeout, const Wakeup* wake = nullptr) override;
  void shutdown() override { socket_.shutdown(); }
  Address local_address() const override { return socket_.local_address(); }
  std::optional<Address> remote_address() const override { return remote_; }
  std::optional<Address> last_peer() const { return last_peer_; }

 private:
  DatagramSocket socket_;
  std::optional<Address> remote_;
  std::optional<Address> last_peer_;
};

/// Checks the datagram frame size limit; throws TransportError FrameTooLarge.
void check_datagram_frame(const wire::Frame& frame);

struct ArqOptions {
  std::uint16_t window = 8;
  milliseconds tick{1};
  arq::Tick timeout_ticks = 50;
  milliseconds send_timeout{10000};
};

/// Frames carried as Go-Back-N segment payloads over UDP to one peer.
class ArqDatagramEndpoint final : public Endpoint {
 public:
  ArqDatagramEndpoint(DatagramSocket socket, Address remote, ArqOptions options = {});

  static std::unique_ptr<ArqDatagramEndpoint> open(const Address& remote, ArqOptions options = {});

  Mode mode() const override { return Mode::Datagram; }
  void send_frame(const wire::Frame& frame) override;
  RecvResult recv_frame(milliseconds timeout, const Wakeup* wake = nullptr) override;
  void shutdown() override { socket_.shutdown(); }
  Address local_address() const override { return socket_.local_address(); }
  std::optional<Address> remote_address() const override { return remote_; }

  /// Pumps until every queued frame is acknowledged; false on timeout.
  bool flush(milliseconds timeout);
  std::uint64_t retransmissions() const { return session_.retransmissions(); }

 private:
  arq::Tick now() const;
  void emit(const arq::ArqSession::Output& out);
  void pump(milliseconds budget);

  DatagramSocket socket_;
  Address remote_;
  ArqOptions options_;
  std::chrono::steady_clock::time_point epoch_;
  arq::ArqSession session_;
  std::deque<Bytes> inbox_;
};

// --- in-memory --------------------------------------------------------------

/// Connected pair sharing one logical clock. Each direction is a
/// sim::Channel; the clock advances by one tick whenever a reader is
/// waiting on datagrams still in flight.
std::pair<std::unique_ptr<Endpoint>, std::unique_ptr<Endpoint>> make_in_memory_pair(
    const sim::ChannelConfig& config = {});

class InMemoryListener final : public Listener {
 public:
  InMemoryListener();
  ~InMemoryListener() override;

  /// Client side of a new link; the server side is queued for accept().
  std::unique_ptr<Endpoint> connect(const sim::ChannelConfig& config = {});

  std::unique_ptr<Endpoint> accept(milliseconds timeout) override;
  Address local_address() const override;
  void close() override;

 private:
  struct State;
  std::shared_ptr<State> state_;
};

}  // namespace csnet::net
