#include "csnet/reliability.hpp"
#include "doctest.h"

using namespace csnet;
using namespace csnet::arq;

namespace {

std::vector<std::uint32_t> seqs(const std::vector<Segment>& segments) {
  std::vector<std::uint32_t> out;
  for (const auto& s : segments) out.push_back(s.seq);
  return out;
}

bool is_prefix(const std::vector<Bytes>& got, const std::vector<Bytes>& sent) {
  return got.size() <= sent.size() && std::equal(got.begin(), got.end(), sent.begin());
}

}  // namespace

TEST_CASE("segment encoding") {
  const auto data = make_data_segment(0x01020304, to_bytes("ab"));
  // checksum = 1+2+3+4 + 97+98
  CHECK(data.checksum == 205);
  CHECK(encode_segment(data) == Bytes{0x10, 1, 2, 3, 4, 0, 2, 0x00, 0xCD, 'a', 'b'});
  CHECK(decode_segment(encode_segment(data)) == data);
  CHECK(data.intact());

  const auto ack = make_ack_segment(7);
  CHECK(encode_segment(ack) == Bytes{0x11, 0, 0, 0, 7, 0, 0, 0, 7});
  CHECK(decode_segment(encode_segment(ack)) == ack);

  CHECK_FALSE(decode_segment(Bytes{0x12, 0, 0, 0, 0, 0, 0, 0, 0}).has_value());
  CHECK_FALSE(decode_segment(Bytes{0x10, 0, 0, 0, 0, 0, 3, 0, 0, 'a'}).has_value());
  CHECK_FALSE(decode_segment(Bytes{0x11, 0, 0, 0, 0, 0, 1, 0, 'a', 'a'}).has_value());
  CHECK_FALSE(decode_segment(Bytes{0x10, 0, 0}).has_value());
}

TEST_CASE("a damaged seq byte fails the checksum") {
  auto bytes = encode_segment(make_data_segment(5, to_bytes("xyz")));
  bytes[4] ^= 0x01;
  const auto seg = decode_segment(bytes);
  REQUIRE(seg.has_value());
  CHECK_FALSE(seg->intact());
}

TEST_CASE("sender: send, window full, timer armed") {
  GbnSender s(2, 8);
  const auto first = s.send(to_bytes("a"), 0);
  REQUIRE(first.has_value());
  CHECK(first->seq == 0);
  CHECK(s.next_seq() == 1);
  CHECK(s.timer_expiry() == Tick{8});
  CHECK(s.send(to_bytes("b"), 1)->seq == 1);
  CHECK(s.timer_expiry() == Tick{8});  // already armed
  CHECK_FALSE(s.send(to_bytes("c"), 2).has_value());
  CHECK(s.next_seq() == 2);
}

TEST_CASE("sender: cumulative ack") {
  GbnSender s(4, 8);
  for (int i = 0; i < 3; ++i) s.send(Bytes{static_cast<std::uint8_t>(i)}, 0);
  s.on_ack(2, 5);
  CHECK(s.base() == 2);
  CHECK(s.in_flight() == 1);
  CHECK(s.timer_expiry() == Tick{13});

  s.on_ack(2, 6);  // duplicate
  CHECK(s.base() == 2);
  CHECK(s.timer_expiry() == Tick{13});

  s.on_ack(9, 6);  // beyond next_seq
  CHECK(s.base() == 2);
  CHECK(s.in_flight() == 1);

  s.on_ack(1, 6);  // stale
  CHECK(s.base() == 2);

  s.on_ack(3, 7);
  CHECK(s.base() == 3);
  CHECK_FALSE(s.timer_expiry().has_value());
}

TEST_CASE("sender: timeout retransmits [base, next) and re-arms") {
  GbnSender s(4, 8);
  CHECK(s.on_tick(100).empty());
  s.send(to_bytes("a"), 0);
  s.send(to_bytes("b"), 0);
  CHECK(s.on_tick(7).empty());
  const auto retx = s.on_tick(8);
  CHECK(seqs(retx) == std::vector<std::uint32_t>{0, 1});
  CHECK(retx[0].payload == to_bytes("a"));
  CHECK(retx[1].payload == to_bytes("b"));
  CHECK(s.timer_expiry() == Tick{16});
}

TEST_CASE("sender: stop-and-wait with W=1") {
  GbnSender s(1, 4);
  CHECK(s.send(to_bytes("a"), 0)->seq == 0);
  CHECK_FALSE(s.send(to_bytes("b"), 0).has_value());
  s.on_ack(1, 1);
  CHECK(s.send(to_bytes("b"), 1)->seq == 1);
}

TEST_CASE("sender rejects oversize payloads") {
  GbnSender s(2, 8, 4);
  CHECK_THROWS_AS(s.send(Bytes(5, 0), 0), std::length_error);
  CHECK_THROWS(GbnSender(0, 8));
  CHECK_THROWS(GbnSender(2, 0));
}

TEST_CASE("receiver: in-order, out-of-order, corrupt") {
  GbnReceiver r;
  auto res = r.on_segment(make_data_segment(1, to_bytes("b")));
  CHECK_FALSE(res.delivered.has_value());
  CHECK(res.ack.seq == 0);
  CHECK(res.ack.kind == SegmentKind::Ack);

  res = r.on_segment(make_data_segment(0, to_bytes("a")));
  CHECK(res.delivered == to_bytes("a"));
  CHECK(res.ack.seq == 1);

  for (std::uint32_t i = 1; i < 5; ++i) r.on_segment(make_data_segment(i, Bytes{1}));
  REQUIRE(r.expected() == 5);
  auto corrupt = make_data_segment(5, to_bytes("e"));
  corrupt.payload[0] ^= 0x40;
  res = r.on_segment(corrupt);
  CHECK_FALSE(res.delivered.has_value());
  CHECK(res.ack.seq == 5);

  CHECK_THROWS(r.on_segment(make_ack_segment(3)));
}

TEST_CASE("trace: first segment dropped with W=2") {
  GbnSender s(2, 8);
  GbnReceiver r;
  const auto d0 = *s.send(to_bytes("a"), 0);
  const auto d1 = *s.send(to_bytes("b"), 0);
  (void)d0;  // lost

  auto res = r.on_segment(d1);
  CHECK_FALSE(res.delivered.has_value());
  CHECK(res.ack.seq == 0);
  s.on_ack(res.ack.seq, 1);
  CHECK(s.base() == 0);
  CHECK(s.next_seq() == 2);
  CHECK(s.on_tick(7).empty());

  const auto retx = s.on_tick(8);
  REQUIRE(seqs(retx) == std::vector<std::uint32_t>{0, 1});
  res = r.on_segment(retx[0]);
  CHECK(res.delivered == to_bytes("a"));
  CHECK(res.ack.seq == 1);
  s.on_ack(1, 9);
  res = r.on_segment(retx[1]);
  CHECK(res.delivered == to_bytes("b"));
  CHECK(res.ack.seq == 2);
  s.on_ack(2, 9);
  CHECK(s.base() == 2);
  CHECK(s.in_flight() == 0);
  CHECK_FALSE(s.timer_expiry().has_value());
}

// Pinned values come from tests/oracles/gbn_oracle.py.

TEST_CASE("transfer: lossless") {
  const auto payloads = make_payloads(10, 8);
  const auto stats = run_transfer(payloads, sim::ChannelConfig{0, 0, 0, 0, 3}, 4, 8, 1000);
  CHECK(stats.completed);
  CHECK(stats.retransmissions == 0);
  CHECK(stats.delivered == payloads);
}

TEST_CASE("transfer: certain loss never completes") {
  TransferConfig cfg = symmetric_transfer({1.0, 0, 0, 0, 3}, 4, 8, 500);
  const auto stats = run_transfer(make_payloads(10, 8), cfg);
  CHECK_FALSE(stats.completed);
  CHECK(stats.delivered_count == 0);
  CHECK(stats.ticks_elapsed == 500);
}

TEST_CASE("transfer: pinned seed 7") {
  const auto payloads = make_payloads(1000, 16);
  const auto stats = run_transfer(payloads, sim::ChannelConfig{0.2, 0, 0, 0, 7}, 8, 8, 1'000'000);
  CHECK(stats.completed);
  CHECK(stats.retransmissions == 2078);
  CHECK(stats.ticks_elapsed == 2595);
  CHECK(stats.delivered == payloads);
}

TEST_CASE("transfer: pinned seed 42 with delay") {
  const auto stats = run_transfer(make_payloads(1000, 16), sim::ChannelConfig{0.2, 0, 0, 4, 42}, 8, 8, 1'000'000);
  CHECK(stats.completed);
  CHECK(stats.retransmissions == 6017);
  CHECK(stats.ticks_elapsed == 8805);
}

TEST_CASE("transfer: pinned seed 99 with loss, duplication and corruption") {
  const auto payloads = make_payloads(200, 16);
  const auto stats = run_transfer(payloads, sim::ChannelConfig{0.1, 0.1, 0.1, 3, 99}, 8, 8, 1'000'000);
  CHECK(stats.completed);
  CHECK(stats.retransmissions == 1011);
  CHECK(stats.ticks_elapsed == 1403);
  CHECK(stats.delivered == payloads);
}

TEST_CASE("ack path seed derivation") {
  CHECK(derive_ack_seed(7) == (7ULL ^ 0x9E3779B97F4A7C15ULL));
  CHECK(derive_ack_seed(0x9E3779B97F4A7C15ULL) == 1);
}

TEST_CASE("window invariant after every event") {
  auto cfg = symmetric_transfer({0.25, 0.1, 0.1, 5, 1234}, 5, 6);
  std::size_t events = 0;
  cfg.observe = [&](const GbnSender& s, const GbnReceiver& r) {
    ++events;
    REQUIRE(s.base() <= s.next_seq());
    REQUIRE(s.next_seq() - s.base() <= s.window());
    REQUIRE(s.timer_expiry().has_value() == (s.base() < s.next_seq()));
    REQUIRE(r.expected() >= s.base());
  };
  const auto stats = run_transfer(make_payloads(300, 10), cfg);
  CHECK(stats.completed);
  CHECK(events > 300);
}

TEST_CASE("safety: delivered is always an in-order prefix") {
  const auto payloads = make_payloads(200, 12);
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    const double loss = static_cast<double>(seed % 7) / 10.0;
    const sim::ChannelConfig ch{loss, 0.3, 0.3, static_cast<std::uint32_t>(seed % 6), seed};
    const auto stats = run_transfer(payloads, ch, static_cast<std::uint16_t>(1 + seed % 9), 1 + seed % 10, 3000);
    CHECK(is_prefix(stats.delivered, payloads));
    CHECK(stats.delivered_count == stats.delivered.size());
  }
}

TEST_CASE("liveness: 1000 segments over 20 seeds at loss 0.3, dup and corrupt 0.1") {
  const auto payloads = make_payloads(1000, 16);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto stats = run_transfer(payloads, sim::ChannelConfig{0.3, 0.1, 0.1, 4, seed}, 8, 8, 1'000'000);
    CHECK(stats.completed);
    CHECK(stats.delivered == payloads);
  }
}

TEST_CASE("raw datagrams lose or reorder where ARQ does not") {
  const auto payloads = make_payloads(1000, 16);
  int inexact = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const sim::ChannelConfig ch{0.2, 0, 0, 4, seed};
    inexact += !run_raw(payloads, ch).exact;
    CHECK(run_transfer(payloads, ch, 8, 8, 1'000'000).delivered == payloads);
  }
  CHECK(inexact == 20);
}

TEST_CASE("make_payloads") {
  const auto p = make_payloads(300, 6);
  REQUIRE(p.size() == 300);
  CHECK(p[258] == Bytes{0, 0, 1, 2, 0x06, 0x07});
  CHECK(make_payloads(1, 1)[0].size() == 4);
}

TEST_CASE("ArqSession pair over a lossy channel pair") {
  ArqSession a(4, 6), b(4, 6);
  sim::Channel ab({0.3, 0.1, 0.1, 3, 11}), ba({0.3, 0.1, 0.1, 3, 12});
  const auto sent_ab = make_payloads(100, 20);
  const auto sent_ba = make_payloads(60, 30);
  std::vector<Bytes> got_at_b, got_at_a;

  auto pump = [](ArqSession::Output out, sim::Channel& ch, std::vector<Bytes>& sink, Tick now) {
    for (auto& d : out.outgoing) ch.push(std::move(d), now);
    for (auto& d : out.delivered) sink.push_back(std::move(d));
  };
  for (const auto& p : sent_ab) pump(a.send(p, 0), ab, got_at_a, 0);
  for (const auto& p : sent_ba) pump(b.send(p, 0), ba, got_at_b, 0);
  CHECK(a.backlog() > 0);

  Tick now = 0;
  for (; now < 20000 && !(a.idle() && b.idle()); ++now) {
    for (auto& d : ab.pop_ready(now)) pump(b.on_datagram(d, now), ba, got_at_b, now);
    for (auto& d : ba.pop_ready(now)) pump(a.on_datagram(d, now), ab, got_at_a, now);
    pump(a.on_tick(now), ab, got_at_a, now);
    pump(b.on_tick(now), ba, got_at_b, now);
  }
  for (Tick t = now; t < now + 10; ++t) {
    for (auto& d : ab.pop_ready(t)) pump(b.on_datagram(d, t), ba, got_at_b, t);
    for (auto& d : ba.pop_ready(t)) pump(a.on_datagram(d, t), ab, got_at_a, t);
  }
  CHECK(a.idle());
  CHECK(b.idle());
  CHECK(got_at_b == sent_ab);
  CHECK(got_at_a == sent_ba);
  CHECK(a.retransmissions() > 0);
  CHECK(b.on_datagram(Bytes{1, 2, 3}, now).delivered.empty());
}
