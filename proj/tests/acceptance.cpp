// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Limits are fixed here and never relaxed at run time.

#include <sys/wait.h>

#include <array>
#include <atomic>
#include <cstdio>
#include <functional>
#include <iostream>
#include <latch>
#include <random>
#include <sstream>
#include <thread>

#include "csnet/benchmark.hpp"
#include "csnet/client.hpp"
#include "csnet/relay_server.hpp"
#include "csnet/reliability.hpp"
#include "csnet/wire_protocol.hpp"

using namespace csnet;
using Clock = std::chrono::steady_clock;
using std::chrono::milliseconds;

namespace {

constexpr double kCodecLimitMs = 5000;
constexpr double kReliableLimitMs = 10000;
constexpr double kRawLimitMs = 5000;
constexpr double kRegistryLimitMs = 30000;
constexpr double kMatmulLimitMs = 10000;
constexpr double kSequentialFloorMs = 360;  // 0.9 * 8 * 50
constexpr double kConcurrentCeilingMs = 150;  // 3 * 50
constexpr double kMinSpeedup = 2.5;
constexpr unsigned kThreadsForCeiling = 8;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void criterion(int number, const std::string& name, const std::function<Outcome()>& body) {
  const auto start = Clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  if (!out.pass) ++g_failures;
  std::printf("criterion %d: %s  %s  [%s] (%.0f ms)\n", number, out.pass ? "PASS" : "FAIL", name.c_str(),
              out.detail.c_str(), ms);
  std::fflush(stdout);
}

double since_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// --- 1 ----------------------------------------------------------------------

Outcome codec_soundness() {
  const auto start = Clock::now();
  std::mt19937_64 gen(20240101);
  std::size_t frames = 0, round_trip_failures = 0, mutations = 0, undetected = 0;
  for (; frames < 10000; ++frames) {
    wire::Frame f{static_cast<wire::Kind>(1 + gen() % 11), {}};
    f.payload.resize(gen() % 256);
    for (auto& b : f.payload) b = static_cast<std::uint8_t>(gen());
    auto encoded = wire::encode_frame(f);
    if (!(wire::decode_frame(encoded).frame == f)) ++round_trip_failures;
    // Every payload position, each with a fresh non-zero XOR mask; any
    // such change alters the byte-sum mod 65536.
    for (std::size_t i = 0; i < f.payload.size(); ++i) {
      auto& byte = encoded[wire::kHeaderSize + i];
      const auto original = byte;
      byte ^= static_cast<std::uint8_t>(1 + gen() % 255);
      ++mutations;
      try {
        wire::decode_frame(encoded);
        ++undetected;
      } catch (const wire::WireError& e) {
        if (e.code() != wire::WireErrc::ChecksumMismatch) ++undetected;
      }
      byte = original;
    }
  }
  const double ms = since_ms(start);
  std::ostringstream d;
  d << frames << " frames, " << round_trip_failures << " round-trip failures, " << mutations << " mutations, "
    << undetected << " undetected, " << ms << " ms < " << kCodecLimitMs;
  return {round_trip_failures == 0 && undetected == 0 && ms < kCodecLimitMs, d.str()};
}

// --- 2, 3 -------------------------------------------------------------------

Outcome reliable_column() {
  const auto start = Clock::now();
  const auto payloads = arq::make_payloads(1000, 16);
  int exact = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto stats = arq::run_transfer(payloads, sim::ChannelConfig{0.2, 0, 0, 4, seed}, 8, 8, 1'000'000);
    exact += stats.completed && stats.delivered == payloads;
  }
  const double ms = since_ms(start);
  std::ostringstream d;
  d << exact << "/20 seeds complete and exact, " << ms << " ms < " << kReliableLimitMs;
  return {exact == 20 && ms < kReliableLimitMs, d.str()};
}

Outcome unreliable_column() {
  const auto start = Clock::now();
  const auto payloads = arq::make_payloads(1000, 16);
  int inexact = 0;
  std::size_t delivered = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto raw = arq::run_raw(payloads, sim::ChannelConfig{0.2, 0, 0, 4, seed});
    inexact += !raw.exact;
    delivered += raw.delivered.size();
  }
  const double ms = since_ms(start);
  std::ostringstream d;
  d << inexact << "/20 seeds incomplete or reordered (need >= 19), mean delivered "
    << static_cast<double>(delivered) / 20 << "/1000, " << ms << " ms < " << kRawLimitMs;
  return {inexact >= 19 && ms < kRawLimitMs, d.str()};
}

// --- 4 ----------------------------------------------------------------------

Outcome gbn_traces() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) failed.push_back(what);
  };

  {  // first segment dropped, W=2
    arq::GbnSender s(2, 8);
    arq::GbnReceiver r;
    s.send(to_bytes("a"), 0);
    const auto d1 = *s.send(to_bytes("b"), 0);
    expect(!s.send(to_bytes("c"), 0).has_value(), "window of 2 full after two sends");
    auto res = r.on_segment(d1);
    expect(!res.delivered && res.ack.seq == 0, "out-of-order seq 1 discarded with ACK(0)");
    s.on_ack(res.ack.seq, 1);
    expect(s.base() == 0 && s.next_seq() == 2, "ACK(0) leaves base at 0");
    expect(s.on_tick(7).empty(), "no retransmit before expiry");
    const auto retx = s.on_tick(8);
    expect(retx.size() == 2 && retx[0].seq == 0 && retx[1].seq == 1, "timeout resends seq 0 then 1");
    if (retx.size() == 2) {
      res = r.on_segment(retx[0]);
      expect(res.delivered == to_bytes("a") && res.ack.seq == 1, "seq 0 delivered, ACK(1)");
      s.on_ack(1, 9);
      res = r.on_segment(retx[1]);
      expect(res.delivered == to_bytes("b") && res.ack.seq == 2, "seq 1 delivered, ACK(2)");
      s.on_ack(2, 9);
      expect(s.base() == 2 && !s.timer_expiry(), "all acked, timer disarmed");
    }
  }
  {  // duplicate and out-of-range acks
    arq::GbnSender s(4, 8);
    for (int i = 0; i < 3; ++i) s.send(Bytes{1}, 0);
    s.on_ack(2, 5);
    expect(s.base() == 2 && s.timer_expiry() == arq::Tick{13}, "ACK(2) moves base and restarts timer");
    s.on_ack(2, 6);
    expect(s.base() == 2 && s.timer_expiry() == arq::Tick{13}, "duplicate ACK(2) is a no-op");
    s.on_ack(7, 6);
    expect(s.base() == 2 && s.in_flight() == 1, "ACK beyond next_seq is a no-op");
  }
  {  // timeout retransmits [base, next)
    arq::GbnSender s(4, 8);
    s.send(to_bytes("x"), 0);
    s.send(to_bytes("y"), 0);
    s.send(to_bytes("z"), 0);
    s.on_ack(1, 2);
    const auto retx = s.on_tick(10);
    expect(retx.size() == 2 && retx[0].seq == 1 && retx[1].seq == 2 && retx[0].payload == to_bytes("y"),
           "expiry at 10 resends seq 1 and 2");
    expect(s.timer_expiry() == arq::Tick{18}, "timer re-armed at now + timeout");
  }
  {  // stop-and-wait
    arq::GbnSender s(1, 4);
    const bool first = s.send(to_bytes("a"), 0)->seq == 0;
    s.on_ack(1, 1);
    expect(first && s.send(to_bytes("b"), 1)->seq == 1, "W=1 sends seq 0 then 1");
  }

  std::string detail = failed.empty() ? "all trace steps match" : "mismatch: ";
  for (const auto& f : failed) detail += f + "; ";
  return {failed.empty(), detail};
}

// --- 5 ----------------------------------------------------------------------

Outcome registry_semantics() {
  const auto start = Clock::now();
  relay::ServerConfig config;
  config.log_errors = false;
  relay::RelayServer server(net::listen(net::Address::loopback()), config);
  server.start();
  const milliseconds wait(5000);
  std::ostringstream d;

  // Concurrent duplicate registration, repeated.
  int bad_rounds = 0;
  for (int round = 0; round < 10; ++round) {
    std::vector<relay::Client> clients;
    for (int i = 0; i < 4; ++i) {
      clients.push_back(relay::Client::connect_tcp(server.address(), wait));
      clients.back().handshake({}, wait);
    }
    std::atomic<int> winners{0}, duplicates{0};
    std::latch go(4);
    std::vector<std::thread> threads;
    for (auto& c : clients) {
      threads.emplace_back([&] {
        go.arrive_and_wait();
        try {
          c.register_id("dup-" + std::to_string(round), wait);
          ++winners;
        } catch (const relay::ClientError& e) {
          if (e.code() == wire::ErrorCode::DuplicateId) ++duplicates;
        }
      });
    }
    for (auto& t : threads) t.join();
    bad_rounds += !(winners == 1 && duplicates == 3);
  }
  d << "duplicate races with one winner " << 10 - bad_rounds << "/10; ";

  // Absent recipient.
  bool code2 = false;
  {
    auto alice = relay::Client::connect_tcp(server.address(), wait);
    alice.handshake({}, wait);
    alice.register_id("alice", wait);
    alice.send_direct("nobody", to_bytes("hi"));
    const auto r = alice.next(wait);
    code2 = r.has_frame() && r.frame.kind == wire::Kind::Error &&
            wire::parse_error(r.frame).code == wire::ErrorCode::UnknownRecipient;
  }
  d << "absent id -> code 2 " << (code2 ? "yes" : "no") << "; ";

  // 32-client pairwise soak.
  constexpr int kClients = 32, kMessages = 100;
  std::vector<relay::Client> clients;
  for (int i = 0; i < kClients; ++i) {
    clients.push_back(relay::Client::connect_tcp(server.address(), wait));
    clients.back().handshake({}, wait);
    clients.back().register_id("soak" + std::to_string(i), wait);
  }
  std::atomic<int> delivered{0}, cross_talk{0};
  std::latch go(kClients);
  std::vector<std::thread> threads;
  for (int i = 0; i < kClients; ++i) {
    threads.emplace_back([&, i] {
      auto& me = clients[i];
      const std::string self = "soak" + std::to_string(i);
      const std::string partner = "soak" + std::to_string(i ^ 1);
      go.arrive_and_wait();
      for (int n = 0; n < kMessages; ++n) {
        me.send_direct(partner, to_bytes(self + ">" + partner + ":" + std::to_string(n)));
      }
      int next = 0;
      const auto deadline = Clock::now() + milliseconds(25000);
      while (next < kMessages && Clock::now() < deadline) {
        auto r = me.next(milliseconds(100));
        if (!r.has_frame()) continue;
        const bool ok = r.frame.kind == wire::Kind::Deliver && [&] {
          const auto msg = wire::parse_addressed(r.frame);
          return msg.peer == partner && to_string(msg.message) == partner + ">" + self + ":" + std::to_string(next);
        }();
        cross_talk += !ok;
        ++delivered;
        ++next;
      }
    });
  }
  for (auto& t : threads) t.join();
  clients.clear();
  server.stop();

  const double ms = since_ms(start);
  d << "soak delivered " << delivered << "/" << kClients * kMessages << " with " << cross_talk << " cross-talk; " << ms
    << " ms < " << kRegistryLimitMs;
  return {bad_rounds == 0 && code2 && delivered == kClients * kMessages && cross_talk == 0 && ms < kRegistryLimitMs,
          d.str()};
}

// --- 6 ----------------------------------------------------------------------

Outcome concurrency_claim() {
  const auto cmp = bench::compare_service_modes(8, milliseconds(50), 3);
  const unsigned hw = std::thread::hardware_concurrency();
  const double seq = cmp.sequential.median_total_ms;
  const double conc = cmp.concurrent.median_total_ms;
  const bool seq_ok = seq >= kSequentialFloorMs;
  const bool speedup_ok = cmp.speedup >= kMinSpeedup;
  const bool ceiling_applies = hw >= kThreadsForCeiling;
  const bool ceiling_ok = !ceiling_applies || conc <= kConcurrentCeilingMs;
  std::ostringstream d;
  d << "sequential median " << seq << " ms >= " << kSequentialFloorMs << "; concurrent median " << conc << " ms";
  if (ceiling_applies) {
    d << " <= " << kConcurrentCeilingMs;
  } else {
    d << " (ceiling " << kConcurrentCeilingMs << " ms not applicable: " << hw << " hardware threads < "
      << kThreadsForCeiling << ")";
  }
  d << "; speedup " << cmp.speedup << " >= " << kMinSpeedup;
  return {seq_ok && speedup_ok && ceiling_ok, d.str()};
}

// --- 7 ----------------------------------------------------------------------

Outcome matmul_exactness() {
  const auto start = Clock::now();
  std::mt19937_64 gen(777);
  int pairs = 0, mismatches = 0;
  for (; pairs < 200; ++pairs) {
    const std::size_t m = 1 + gen() % 64, k = 1 + gen() % 64, n = 1 + gen() % 64;
    const auto a = bench::Matrix::random(m, k, 2 * pairs + 1, -1000, 1000);
    const auto b = bench::Matrix::random(k, n, 2 * pairs + 2, -1000, 1000);
    const auto reference = bench::matmul_serial(a, b);
    for (std::size_t threads : {1, 2, 4, 7}) mismatches += !(bench::matmul_parallel(a, b, threads) == reference);
  }
  const double ms = since_ms(start);
  std::ostringstream d;
  d << pairs << " pairs x threads {1,2,4,7}, " << mismatches << " mismatches, " << ms << " ms < " << kMatmulLimitMs;
  return {mismatches == 0 && ms < kMatmulLimitMs, d.str()};
}

// --- 8 ----------------------------------------------------------------------

std::pair<int, std::string> run_cli(const std::string& args) {
  FILE* pipe = ::popen((std::string(CSNET_CLI_PATH) + " " + args).c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  std::string out;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
  const int raw = ::pclose(pipe);
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, out};
}

Outcome end_to_end_determinism() {
  const std::string args = "arq-sim --segments 1000 --loss 0.2 --window 8 --timeout 8 --seed 42";
  const auto first = run_cli(args);
  const auto second = run_cli(args);
  const std::string pinned = "completed=true retransmissions=6017 ticks=8805\n";
  const bool identical = first == second;
  const bool matches_pin = first.second.rfind(pinned, 0) == 0;
  std::ostringstream d;
  d << "two runs " << (identical ? "byte-identical" : "differ") << " (" << first.second.size() << " bytes, exit "
    << first.first << "); first line " << (matches_pin ? "matches" : "differs from") << " pinned regression";
  return {identical && matches_pin && first.first == 0, d.str()};
}

}  // namespace

int main() {
  criterion(1, "codec soundness", codec_soundness);
  criterion(2, "reliable column: GBN delivers exactly", reliable_column);
  criterion(3, "unreliable column: raw datagrams lose or reorder", unreliable_column);
  criterion(4, "GBN state-machine traces", gbn_traces);
  criterion(5, "registry semantics", registry_semantics);
  criterion(6, "sequential vs thread-per-client service time", concurrency_claim);
  criterion(7, "matmul exactness", matmul_exactness);
  criterion(8, "end-to-end determinism", end_to_end_determinism);
  std::printf("%d of 8 criteria passed\n", 8 - g_failures);
  return g_failures == 0 ? 0 : 1;
}
