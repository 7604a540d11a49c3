#pragma once

// Thread-per-client relay server.
//
// Each accepted connection gets a dedicated worker that runs
// handshake -> registration -> request loop -> cleanup. Workers find each
// other through the Registry (client ID -> DeliveryQueue). A worker is the
// only writer on its connection: DELIVERs queued by other workers are
// flushed by the owner between reads.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "csnet/transport.hpp"
#include "csnet/wire_protocol.hpp"

namespace csnet::relay {

using std::chrono::milliseconds;

/// Bounded multi-producer, single-consumer mailbox for one client.
class DeliveryQueue {
 public:
  explicit DeliveryQueue(std::size_t capacity = 1024);

  /// Waits up to `wait` for room. False when still full or closed.
  bool push(wire::Frame frame, milliseconds wait);
  /// Everything queued right now, oldest first. Consumer only.
  std::vector<wire::Frame> drain();
  void close();

  const net::Wakeup& wakeup() const { return wakeup_; }
  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }

 private:
  mutable std::mutex mu_;
  std::condition_variable not_full_;
  std::deque<wire::Frame> frames_;
  std::size_t capacity_;
  bool closed_ = false;
  net::Wakeup wakeup_;
};

using DeliveryHandle = std::shared_ptr<DeliveryQueue>;

enum class RegisterResult { Ok, DuplicateId, InvalidId, Full };

class Registry {
 public:
  explicit Registry(std::size_t capacity = 64) : capacity_(capacity) {}

  RegisterResult add(const std::string& id, DeliveryHandle handle);
  /// Removes `id` only while it still maps to `handle`.
  bool remove(const std::string& id, const DeliveryHandle& handle);
  DeliveryHandle find(std::string_view id) const;
  std::vector<std::pair<std::string, DeliveryHandle>> snapshot() const;
  std::vector<std::string> ids() const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, DeliveryHandle, std::less<>> entries_;
  std::size_t capacity_;
};

enum class RouteResult { Delivered, UnknownRecipient, RecipientBusy };

RouteResult route_direct(const Registry& registry, std::string_view from, std::string_view to, ByteView message,
                         milliseconds wait = milliseconds(100));

/// DELIVER to every client in a snapshot except `from`. Busy recipients
/// are skipped; returns how many copies were queued.
std::size_t broadcast(const Registry& registry, std::string_view from, ByteView message,
                      milliseconds wait = milliseconds(100));

enum class ServiceMode {
  ThreadPerClient,
  Sequential,  // one client served to completion before the next accept
};

struct ServerConfig {
  wire::HandshakeParams supported{wire::kProtocolVersion, 8, 65536};
  std::size_t max_clients = 64;
  std::size_t queue_capacity = 1024;
  milliseconds recv_timeout{200};
  milliseconds handshake_timeout{5000};
  milliseconds enqueue_wait{100};
  milliseconds accept_poll{50};
  ServiceMode mode = ServiceMode::ThreadPerClient;
  /// Simulated service time for each ECHO request.
  milliseconds echo_work{0};
  bool log_errors = true;
};

class RelayServer {
 public:
  RelayServer(std::unique_ptr<net::Listener> listener, ServerConfig config = {});
  ~RelayServer();
  RelayServer(const RelayServer&) = delete;
  RelayServer& operator=(const RelayServer&) = delete;

  /// Runs the acceptor on a background thread.
  void start();
  /// Runs the acceptor on the calling thread until stop().
  void serve();
  /// Stops accepting, unblocks and joins every worker.
  void stop();

  net::Address address() const { return listener_->local_address(); }
  Registry& registry() { return registry_; }
  const Registry& registry() const { return registry_; }
  std::size_t live_workers() const { return live_workers_.load(); }
  std::size_t total_accepted() const { return accepted_.load(); }
  const ServerConfig& config() const { return config_; }

 private:
  struct Worker {
    std::thread thread;
    std::shared_ptr<net::Endpoint> endpoint;
    std::shared_ptr<std::atomic<bool>> done;
  };

  void accept_loop();
  void reap(bool all);
  void handle_client(const std::shared_ptr<net::Endpoint>& endpoint);
  void log(const std::string& message) const;

  std::unique_ptr<net::Listener> listener_;
  ServerConfig config_;
  Registry registry_;
  std::atomic<bool> stopping_{false};
  std::atomic<std::size_t> live_workers_{0};
  std::atomic<std::size_t> accepted_{0};
  std::thread acceptor_;
  std::mutex workers_mu_;
  std::list<Worker> workers_;
  std::shared_ptr<net::Endpoint> sequential_current_;
};

// --- datagram responder -----------------------------------------------------

struct DatagramServerConfig {
  wire::HandshakeParams supported{wire::kProtocolVersion, 8, net::kMaxDatagramPayload};
  bool arq = false;
  net::ArqOptions arq_options{};
  milliseconds poll{20};
  milliseconds session_idle_expiry{30000};
  milliseconds echo_work{0};
};

/// Connectionless responder: answers HELLO and ECHO per datagram. With
/// `arq`, each peer gets its own Go-Back-N session and datagrams carry
/// segments. Registration and relaying need a connection and are refused.
class DatagramServer {
 public:
  DatagramServer(net::DatagramSocket socket, DatagramServerConfig config = {});
  ~DatagramServer();
  DatagramServer(const DatagramServer&) = delete;
  DatagramServer& operator=(const DatagramServer&) = delete;

  void start();
  void serve();
  void stop();

  net::Address address() const { return socket_.local_address(); }
  std::size_t sessions() const;

 private:
  struct Session {
    arq::ArqSession arq;
    std::chrono::steady_clock::time_point last_active;
  };

  std::optional<wire::Frame> respond(const Bytes& datagram_body);
  void serve_plain();
  void serve_arq();
  arq::Tick now() const;

  net::DatagramSocket socket_;
  DatagramServerConfig config_;
  std::chrono::steady_clock::time_point epoch_;
  std::atomic<bool> stopping_{false};
  std::thread thread_;
  mutable std::mutex sessions_mu_;
  std::map<net::Address, Session> sessions_;
};

}  // namespace csnet::relay
