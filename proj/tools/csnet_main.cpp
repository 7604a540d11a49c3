// csnet: relay server, scriptable client, ARQ simulator and benchmarks.
//
// Exit status: 0 success, 1 usage error, 2 runtime failure.

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "csnet/benchmark.hpp"
#include "csnet/channel_sim.hpp"
#include "csnet/client.hpp"
#include "csnet/relay_server.hpp"
#include "csnet/reliability.hpp"
#include "csnet/transport.hpp"
#include "csnet/wire_protocol.hpp"

namespace {

using namespace csnet;
using std::chrono::milliseconds;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

volatile std::sig_atomic_t g_interrupted = 0;

void on_signal(int) { g_interrupted = 1; }

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- serve ------------------------------------------------------------------

struct ServeOptions {
  std::string addr = "127.0.0.1:7000";
  std::string transport = "tcp";
  std::size_t max_clients = 64;
  std::uint16_t window = 8;
  std::uint32_t max_payload = 65536;
  bool arq = false;
};

int run_serve(const ServeOptions& opt) {
  if (opt.arq && opt.transport != "udp") throw UsageError("--arq requires --transport udp");
  if (opt.max_clients < 1) throw UsageError("--max-clients must be positive");
  const auto address = net::Address::parse(opt.addr);

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  auto wait_for_signal = [] {
    while (!g_interrupted) std::this_thread::sleep_for(milliseconds(50));
  };

  if (opt.transport == "tcp") {
    relay::ServerConfig config;
    config.supported = {wire::kProtocolVersion, opt.window, opt.max_payload};
    config.max_clients = opt.max_clients;
    relay::RelayServer server(net::listen(address), config);
    std::cout << "listening=" << server.address().to_string() << " transport=tcp max_clients=" << opt.max_clients
              << std::endl;
    server.start();
    wait_for_signal();
    server.stop();
  } else {
    relay::DatagramServerConfig config;
    config.supported = {wire::kProtocolVersion, opt.window, opt.max_payload};
    config.arq = opt.arq;
    config.arq_options.window = opt.window;
    relay::DatagramServer server(net::DatagramSocket::bind(address), config);
    std::cout << "listening=" << server.address().to_string() << " transport=udp arq=" << (opt.arq ? "true" : "false")
              << std::endl;
    server.start();
    wait_for_signal();
    server.stop();
  }
  std::cout << "stopped=true" << std::endl;
  return kExitOk;
}

// --- client -----------------------------------------------------------------

struct ClientOptions {
  std::string addr = "127.0.0.1:7000";
  std::string id;
  std::string script;
  std::string transport = "tcp";
  bool arq = false;
  int timeout_ms = 5000;
};

struct Command {
  enum class Verb { Msg, All, Ping, Quit } verb;
  std::string target;
  std::string text;
};

/// Parses one `/verb` line. Nullopt for blank lines and `#` comments.
std::optional<Command> parse_command(const std::string& line) {
  const auto first = line.find_first_not_of(" \t\r");
  if (first == std::string::npos || line[first] == '#') return std::nullopt;
  const std::string body = line.substr(first);
  if (body.front() != '/') throw UsageError("bare line '" + body + "'; use /msg, /all, /ping or /quit");
  const auto space = body.find(' ');
  const std::string verb = body.substr(0, space);
  const std::string rest = space == std::string::npos ? "" : body.substr(space + 1);
  if (verb == "/msg") {
    const auto gap = rest.find(' ');
    if (rest.empty() || gap == 0) throw UsageError("/msg needs <id> <text>");
    Command c{Command::Verb::Msg, rest.substr(0, gap), gap == std::string::npos ? "" : rest.substr(gap + 1)};
    if (!wire::is_valid_client_id(c.target)) throw UsageError("invalid recipient id '" + c.target + "'");
    return c;
  }
  if (verb == "/all") return Command{Command::Verb::All, "", rest};
  if (verb == "/ping") return Command{Command::Verb::Ping, "", rest};
  if (verb == "/quit") return Command{Command::Verb::Quit, "", ""};
  throw UsageError("unknown command " + verb);
}

int run_client(const ClientOptions& opt) {
  const bool udp = opt.transport == "udp";
  if (opt.arq && !udp) throw UsageError("--arq requires --transport udp");
  if (!udp && !wire::is_valid_client_id(opt.id)) throw UsageError("--id must be 1..64 bytes of UTF-8");
  if (opt.timeout_ms <= 0) throw UsageError("--timeout-ms must be positive");
  const auto address = net::Address::parse(opt.addr);

  std::vector<Command> script;
  if (!opt.script.empty()) {
    std::ifstream in(opt.script);
    if (!in) throw UsageError("cannot read script " + opt.script);
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      try {
        if (auto command = parse_command(line)) script.push_back(*command);
      } catch (const UsageError& e) {
        throw UsageError("script line " + std::to_string(n) + ": " + e.what());
      }
    }
    for (const auto& c : script) {
      if (udp && (c.verb == Command::Verb::Msg || c.verb == Command::Verb::All)) {
        throw UsageError("/msg and /all need --transport tcp");
      }
    }
  }

  const milliseconds timeout(opt.timeout_ms);
  std::unique_ptr<net::Endpoint> endpoint;
  if (!udp) {
    endpoint = net::StreamEndpoint::connect(address, timeout);
  } else if (opt.arq) {
    endpoint = net::ArqDatagramEndpoint::open(address);
  } else {
    endpoint = net::DatagramEndpoint::open(address);
  }
  auto* arq_endpoint = dynamic_cast<net::ArqDatagramEndpoint*>(endpoint.get());
  relay::Client client(std::move(endpoint));

  wire::HandshakeParams proposal;
  if (udp) proposal.max_payload = net::kMaxDatagramPayload;
  const auto agreed = client.handshake(proposal, timeout);
  std::cout << "connected=" << address.to_string() << " window=" << agreed.window
            << " max_payload=" << agreed.max_payload << std::endl;
  if (!udp) {
    client.register_id(opt.id, timeout);
    std::cout << "registered=" << opt.id << std::endl;
  }

  std::mutex io_mu;  // serializes endpoint use between the two workers
  std::mutex out_mu;
  std::atomic<bool> stop_reader{false};
  std::atomic<std::size_t> pongs{0};
  std::atomic<std::size_t> errors{0};
  std::atomic<bool> server_gone{false};

  std::thread reader([&] {
    while (!stop_reader.load()) {
      net::RecvResult received;
      try {
        std::lock_guard lock(io_mu);
        received = client.next(milliseconds(20));
      } catch (const net::TransportError& e) {
        std::lock_guard lock(out_mu);
        std::cout << "error code=0 detail=" << e.what() << std::endl;
        ++errors;
        server_gone = true;
        break;
      } catch (const std::exception& e) {
        std::lock_guard lock(out_mu);
        std::cout << "error code=0 detail=" << e.what() << std::endl;
        ++errors;
        continue;
      }
      if (received.status == net::RecvStatus::Closed) {
        server_gone = true;
        break;
      }
      if (!received.has_frame()) continue;
      const auto& frame = received.frame;
      std::lock_guard lock(out_mu);
      switch (frame.kind) {
        case wire::Kind::Deliver: {
          try {
            const auto msg = wire::parse_addressed(frame);
            std::cout << "deliver from=" << msg.peer << " text=" << to_string(msg.message) << std::endl;
          } catch (const wire::WireError& e) {
            ++errors;
            std::cout << "error code=0 detail=" << e.what() << std::endl;
          }
          break;
        }
        case wire::Kind::EchoReply:
          ++pongs;
          std::cout << "pong=" << to_string(frame.payload) << std::endl;
          break;
        case wire::Kind::Error: {
          ++errors;
          try {
            const auto err = wire::parse_error(frame);
            std::cout << "error code=" << static_cast<int>(err.code) << " detail=" << err.detail << std::endl;
          } catch (const wire::WireError& e) {
            std::cout << "error code=0 detail=" << e.what() << std::endl;
          }
          break;
        }
        default:
          std::cout << "frame kind=" << wire::kind_name(frame.kind) << std::endl;
          break;
      }
    }
  });

  std::size_t pings = 0;
  auto execute = [&](const Command& c) {
    std::lock_guard lock(io_mu);
    switch (c.verb) {
      case Command::Verb::Msg: client.send_direct(c.target, to_bytes(c.text)); break;
      case Command::Verb::All: client.send_broadcast(to_bytes(c.text)); break;
      case Command::Verb::Ping:
        client.send_echo(to_bytes(c.text.empty() ? "ping-" + std::to_string(pings) : c.text));
        ++pings;
        break;
      case Command::Verb::Quit: break;
    }
  };

  bool failed = false;
  try {
    if (!opt.script.empty()) {
      for (const auto& c : script) {
        if (c.verb == Command::Verb::Quit) break;
        execute(c);
      }
    } else {
      std::string line;
      while (std::getline(std::cin, line)) {
        std::optional<Command> c;
        try {
          c = parse_command(line);
        } catch (const UsageError& e) {
          std::lock_guard lock(out_mu);
          std::cout << "error=" << e.what() << std::endl;
          continue;
        }
        if (!c) continue;
        if (c->verb == Command::Verb::Quit) break;
        execute(*c);
      }
    }

    // Wait for every ping to come back, then linger briefly for late ERRORs.
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (pongs.load() < pings && !server_gone.load() && std::chrono::steady_clock::now() < deadline) {
      std::this_thread::sleep_for(milliseconds(5));
    }
    std::this_thread::sleep_for(milliseconds(100));
    {
      std::lock_guard lock(io_mu);
      client.send_bye();
      if (arq_endpoint) arq_endpoint->flush(timeout);
    }
  } catch (const std::exception& e) {
    std::lock_guard lock(out_mu);
    std::cout << "error code=0 detail=" << e.what() << std::endl;
    failed = true;
  }
  stop_reader = true;
  reader.join();

  const bool ok = !failed && pongs.load() == pings && errors.load() == 0;
  std::cout << "summary pings=" << pings << " pongs=" << pongs.load() << " errors=" << errors.load()
            << " ok=" << (ok ? "true" : "false") << std::endl;
  return ok ? kExitOk : kExitRuntime;
}

// --- bench / matmul / arq-sim -----------------------------------------------

struct BenchOptions {
  std::size_t clients = 8;
  int work_ms = 50;
  std::string mode = "both";
  std::size_t reps = 3;
  std::string csv;
};

int run_bench(const BenchOptions& opt) {
  if (opt.clients < 1) throw UsageError("--clients must be positive");
  if (opt.work_ms < 0) throw UsageError("--work-ms must be non-negative");
  if (opt.reps < 3) throw UsageError("--reps must be at least 3");
  const milliseconds work(opt.work_ms);
  // With --mode both, each mode gets its own file: out.csv becomes
  // out.sequential.csv and out.concurrent.csv.
  auto csv_path = [&](std::string_view mode) {
    if (opt.mode != "both") return opt.csv;
    const auto dot = opt.csv.rfind('.');
    const auto slash = opt.csv.rfind('/');
    const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
    return has_ext ? opt.csv.substr(0, dot) + "." + std::string(mode) + opt.csv.substr(dot)
                   : opt.csv + "." + std::string(mode) + ".csv";
  };
  auto write_csv = [&](const bench::BenchReport& report) {
    if (opt.csv.empty()) return;
    const auto path = csv_path(bench::mode_name(report.config.mode));
    std::ofstream out(path);
    if (!(out << bench::to_csv(report))) throw std::runtime_error("cannot write " + path);
  };

  if (opt.mode == "both") {
    const auto cmp = bench::compare_service_modes(opt.clients, work, opt.reps);
    std::cout << bench::to_key_value(cmp.sequential, "sequential_") << bench::to_key_value(cmp.concurrent, "concurrent_")
              << "sequential_median_ms=" << cmp.sequential.median_total_ms << '\n'
              << "concurrent_median_ms=" << cmp.concurrent.median_total_ms << '\n'
              << "speedup=" << cmp.speedup << std::endl;
    write_csv(cmp.sequential);
    write_csv(cmp.concurrent);
  } else {
    const auto mode = opt.mode == "sequential" ? bench::BenchMode::Sequential : bench::BenchMode::Concurrent;
    const auto report = bench::run_service_bench({opt.clients, work, mode, opt.reps});
    std::cout << bench::to_key_value(report) << std::flush;
    write_csv(report);
  }
  return kExitOk;
}

struct MatmulOptions {
  std::size_t n = 256;
  std::vector<std::size_t> threads{4};
  std::size_t reps = 3;
  bool check = false;
  std::uint64_t seed = 1;
};

int run_matmul(const MatmulOptions& opt) {
  if (opt.n < 1) throw UsageError("--n must be positive");
  for (auto t : opt.threads) {
    if (t < 1) throw UsageError("--threads values must be positive");
  }
  if (opt.seed == 0) throw UsageError("--seed must be non-zero");
  const auto result = bench::run_matmul_bench(opt.n, opt.threads, opt.reps, opt.check, opt.seed);
  std::cout << "n=" << result.n << '\n' << "serial_median_ms=" << result.serial_median_ms << '\n';
  bool monotonic = true;
  double previous = -1;
  for (const auto& t : result.parallel) {
    std::cout << "parallel_median_ms." << t.threads << '=' << t.median_ms << '\n';
    if (previous >= 0 && t.median_ms > previous * 1.15) monotonic = false;
    previous = t.median_ms;
  }
  std::cout << "advisory_monotonic=" << (monotonic ? "true" : "false") << '\n';
  if (result.checked) std::cout << "check=" << (result.matches ? "ok" : "mismatch") << '\n';
  std::cout << std::flush;
  return result.matches ? kExitOk : kExitRuntime;
}

struct ArqSimOptions {
  std::size_t segments = 1000;
  double loss = 0.0;
  double dup = 0.0;
  double corrupt = 0.0;
  std::uint32_t max_delay = 4;
  std::uint16_t window = 8;
  std::uint64_t timeout = 8;
  std::uint64_t seed = 1;
  std::uint64_t max_ticks = 1'000'000;
  std::size_t payload_size = 16;
  bool raw = false;
};

int run_arq_sim(const ArqSimOptions& opt) {
  if (opt.seed == 0) throw UsageError("--seed must be non-zero");
  if (opt.window < 1) throw UsageError("--window must be >= 1");
  if (opt.timeout < 1) throw UsageError("--timeout must be >= 1");
  if (opt.max_ticks < 1) throw UsageError("--max-ticks must be >= 1");
  if (opt.payload_size > arq::kMaxSegmentPayload) throw UsageError("--payload-size must be <= 65535");
  sim::ChannelConfig channel{opt.loss, opt.dup, opt.corrupt, opt.max_delay, opt.seed};
  try {
    channel.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto payloads = arq::make_payloads(opt.segments, opt.payload_size);
  const auto stats = arq::run_transfer(payloads, channel, opt.window, opt.timeout, opt.max_ticks);
  const bool exact = stats.delivered == payloads;
  std::cout << "completed=" << (stats.completed ? "true" : "false") << " retransmissions=" << stats.retransmissions
            << " ticks=" << stats.ticks_elapsed << '\n'
            << "delivered=" << stats.delivered_count << " segments=" << payloads.size()
            << " exact=" << (exact ? "true" : "false") << '\n';
  if (opt.raw) {
    const auto raw = arq::run_raw(payloads, channel);
    std::cout << "raw_delivered=" << raw.delivered.size() << " raw_exact=" << (raw.exact ? "true" : "false") << '\n';
  }
  std::cout << std::flush;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"csnet: client-server messaging toolkit"};
  app.require_subcommand(1);

  ServeOptions serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the relay server");
  serve_cmd->add_option("--addr", serve.addr, "Bind address host:port")->capture_default_str();
  serve_cmd->add_option("--transport", serve.transport, "tcp or udp")
      ->check(CLI::IsMember({"tcp", "udp"}))
      ->capture_default_str();
  serve_cmd->add_option("--max-clients", serve.max_clients, "Concurrent client limit")->capture_default_str();
  serve_cmd->add_option("--window", serve.window, "Largest window the server agrees to")->capture_default_str();
  serve_cmd->add_option("--max-payload", serve.max_payload, "Largest frame payload the server agrees to")
      ->capture_default_str();
  serve_cmd->add_flag("--arq", serve.arq, "Go-Back-N under UDP datagrams");

  ClientOptions client;
  auto* client_cmd = app.add_subcommand("client", "Connect, register and send commands");
  client_cmd->add_option("--addr", client.addr, "Server address host:port")->capture_default_str();
  client_cmd->add_option("--id", client.id, "Client ID (required for tcp)");
  client_cmd->add_option("--script", client.script, "File of /msg, /all, /ping, /quit lines");
  client_cmd->add_option("--transport", client.transport, "tcp or udp")
      ->check(CLI::IsMember({"tcp", "udp"}))
      ->capture_default_str();
  client_cmd->add_flag("--arq", client.arq, "Go-Back-N under UDP datagrams");
  client_cmd->add_option("--timeout-ms", client.timeout_ms, "Reply timeout")->capture_default_str();

  BenchOptions bench_opt;
  auto* bench_cmd = app.add_subcommand("bench", "Sequential vs thread-per-client service time");
  bench_cmd->add_option("--clients", bench_opt.clients, "Number of clients N")->capture_default_str();
  bench_cmd->add_option("--work-ms", bench_opt.work_ms, "Per-request service time")->capture_default_str();
  bench_cmd->add_option("--mode", bench_opt.mode, "sequential, concurrent or both")
      ->check(CLI::IsMember({"sequential", "concurrent", "both"}))
      ->capture_default_str();
  bench_cmd->add_option("--reps", bench_opt.reps, "Repetitions (>= 3)")->capture_default_str();
  bench_cmd->add_option("--csv", bench_opt.csv, "Write rep,total_ms rows here (one file per mode with --mode both)");

  MatmulOptions matmul;
  auto* matmul_cmd = app.add_subcommand("matmul", "Serial vs row-parallel integer matrix product");
  matmul_cmd->add_option("--n", matmul.n, "Matrix dimension")->capture_default_str();
  matmul_cmd->add_option("--threads", matmul.threads, "Thread counts, comma separated")
      ->delimiter(',')
      ->capture_default_str();
  matmul_cmd->add_option("--reps", matmul.reps, "Repetitions")->capture_default_str();
  matmul_cmd->add_flag("--check", matmul.check, "Compare parallel results with serial");
  matmul_cmd->add_option("--seed", matmul.seed, "Input seed")->capture_default_str();

  ArqSimOptions arq_opt;
  auto* arq_cmd = app.add_subcommand("arq-sim", "Go-Back-N transfer over a simulated lossy channel");
  arq_cmd->add_option("--segments", arq_opt.segments, "Payloads to transfer")->capture_default_str();
  arq_cmd->add_option("--loss", arq_opt.loss, "Loss probability")->capture_default_str();
  arq_cmd->add_option("--dup", arq_opt.dup, "Duplication probability")->capture_default_str();
  arq_cmd->add_option("--corrupt", arq_opt.corrupt, "Corruption probability")->capture_default_str();
  arq_cmd->add_option("--max-delay", arq_opt.max_delay, "Maximum delay in ticks")->capture_default_str();
  arq_cmd->add_option("--window", arq_opt.window, "Send window W")->capture_default_str();
  arq_cmd->add_option("--timeout", arq_opt.timeout, "Retransmission timeout in ticks")->capture_default_str();
  arq_cmd->add_option("--seed", arq_opt.seed, "Channel seed")->capture_default_str();
  arq_cmd->add_option("--max-ticks", arq_opt.max_ticks, "Give up after this many ticks")->capture_default_str();
  arq_cmd->add_option("--payload-size", arq_opt.payload_size, "Bytes per payload")->capture_default_str();
  arq_cmd->add_flag("--raw", arq_opt.raw, "Also push the stream through the channel with no ARQ");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*serve_cmd) return run_serve(serve);
    if (*client_cmd) return run_client(client);
    if (*bench_cmd) return run_bench(bench_opt);
    if (*matmul_cmd) return run_matmul(matmul);
    if (*arq_cmd) return run_arq_sim(arq_opt);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const net::TransportError& e) {
    if (e.code() == net::TransportErrc::AddrInvalid) {
      std::cerr << "usage error: " << e.what() << '\n';
      return kExitUsage;
    }
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
