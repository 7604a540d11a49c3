#include "csnet/reliability.hpp"

#include <limits>
#include <stdexcept>
#include <string>

namespace csnet::arq {

std::uint16_t segment_checksum(std::uint32_t seq, ByteView payload) {
  std::uint32_t sum = (seq >> 24) + ((seq >> 16) & 0xFF) + ((seq >> 8) & 0xFF) + (seq & 0xFF);
  for (std::uint8_t b : payload) sum += b;
  return static_cast<std::uint16_t>(sum & 0xFFFF);
}

bool Segment::intact() const { return checksum == segment_checksum(seq, payload); }

Segment make_data_segment(std::uint32_t seq, Bytes payload) {
  if (payload.size() > kMaxSegmentPayload) {
    throw std::length_error("segment payload exceeds 65535 bytes");
  }
  Segment s{SegmentKind::Data, seq, std::move(payload), 0};
  s.checksum = segment_checksum(s.seq, s.payload);
  return s;
}

Segment make_ack_segment(std::uint32_t next_expected) {
  return Segment{SegmentKind::Ack, next_expected, {}, segment_checksum(next_expected, {})};
}

Bytes encode_segment(const Segment& segment) {
  Bytes out;
  out.reserve(kSegmentHeaderSize + segment.payload.size());
  out.push_back(static_cast<std::uint8_t>(segment.kind));
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(segment.seq >> shift));
  const auto len = static_cast<std::uint16_t>(segment.payload.size());
  out.push_back(static_cast<std::uint8_t>(len >> 8));
  out.push_back(static_cast<std::uint8_t>(len));
  out.push_back(static_cast<std::uint8_t>(segment.checksum >> 8));
  out.push_back(static_cast<std::uint8_t>(segment.checksum));
  out.insert(out.end(), segment.payload.begin(), segment.payload.end());
  return out;
}

std::optional<Segment> decode_segment(ByteView d) {
  if (d.size() < kSegmentHeaderSize) return std::nullopt;
  if (d[0] != static_cast<std::uint8_t>(SegmentKind::Data) && d[0] != static_cast<std::uint8_t>(SegmentKind::Ack)) {
    return std::nullopt;
  }
  Segment s;
  s.kind = static_cast<SegmentKind>(d[0]);
  s.seq = (std::uint32_t{d[1]} << 24) | (std::uint32_t{d[2]} << 16) | (std::uint32_t{d[3]} << 8) | d[4];
  const std::size_t len = (std::size_t{d[5]} << 8) | d[6];
  s.checksum = static_cast<std::uint16_t>((d[7] << 8) | d[8]);
  if (d.size() != kSegmentHeaderSize + len) return std::nullopt;
  if (s.kind == SegmentKind::Ack && len != 0) return std::nullopt;
  s.payload.assign(d.begin() + kSegmentHeaderSize, d.end());
  return s;
}

// --- sender -----------------------------------------------------------------

GbnSender::GbnSender(std::uint16_t window, Tick timeout_ticks, std::uint32_t max_payload)
    : window_(window), timeout_(timeout_ticks), max_payload_(max_payload) {
  if (window_ < 1) throw std::invalid_argument("window must be >= 1");
  if (timeout_ < 1) throw std::invalid_argument("timeout_ticks must be positive");
  if (max_payload_ < 1 || max_payload_ > kMaxSegmentPayload) {
    throw std::invalid_argument("max_payload must be within 1..65535");
  }
}

std::optional<Segment> GbnSender::send(Bytes payload, Tick now) {
  if (payload.size() > max_payload_) {
    throw std::length_error("payload of " + std::to_string(payload.size()) + " bytes exceeds max_payload " +
                            std::to_string(max_payload_));
  }
  if (window_full()) return std::nullopt;
  if (next_seq_ == std::numeric_limits<std::uint32_t>::max()) {
    throw std::length_error("sequence space exhausted; transfers may not wrap");
  }
  Segment segment = make_data_segment(next_seq_, std::move(payload));
  unacked_.push_back(segment);
  ++next_seq_;
  if (!timer_expiry_) timer_expiry_ = now + timeout_;
  return segment;
}

void GbnSender::on_ack(std::uint32_t ack_seq, Tick now) {
  if (ack_seq <= base_ || ack_seq > next_seq_) return;
  unacked_.erase(unacked_.begin(), unacked_.begin() + (ack_seq - base_));
  base_ = ack_seq;
  if (base_ < next_seq_) {
    timer_expiry_ = now + timeout_;
  } else {
    timer_expiry_.reset();
  }
}

std::vector<Segment> GbnSender::on_tick(Tick now) {
  if (!timer_expiry_ || now < *timer_expiry_) return {};
  timer_expiry_ = now + timeout_;
  return {unacked_.begin(), unacked_.end()};
}

// --- receiver ---------------------------------------------------------------

GbnReceiver::Result GbnReceiver::on_segment(const Segment& segment) {
  if (segment.kind != SegmentKind::Data) throw std::invalid_argument("receiver accepts DATA segments only");
  Result result;
  if (segment.intact() && segment.seq == expected_) {
    result.delivered = segment.payload;
    ++expected_;
  }
  result.ack = make_ack_segment(expected_);
  return result;
}

// --- transfer harness -------------------------------------------------------

std::uint64_t derive_ack_seed(std::uint64_t data_seed) {
  const std::uint64_t seed = data_seed ^ 0x9E3779B97F4A7C15ULL;
  return seed == 0 ? 1 : seed;
}

TransferConfig symmetric_transfer(const sim::ChannelConfig& channel, std::uint16_t window, Tick timeout_ticks,
                                  Tick max_ticks) {
  TransferConfig config;
  config.data_path = channel;
  config.ack_path = channel;
  config.ack_path.seed = derive_ack_seed(channel.seed);
  config.window = window;
  config.timeout_ticks = timeout_ticks;
  config.max_ticks = max_ticks;
  return config;
}

TransferStats run_transfer(const std::vector<Bytes>& payloads, const TransferConfig& config) {
  if (config.max_ticks == 0) throw std::invalid_argument("max_ticks must be positive");
  if (payloads.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw std::length_error("transfer too large for 32-bit sequence numbers");
  }

  sim::Channel data_path(config.data_path);
  sim::Channel ack_path(config.ack_path);
  GbnSender sender(config.window, config.timeout_ticks);
  GbnReceiver receiver;
  auto observe = [&] {
    if (config.observe) config.observe(sender, receiver);
  };

  TransferStats stats;
  std::size_t next_payload = 0;
  for (Tick now = 0; now < config.max_ticks; ++now) {
    for (const auto& datagram : ack_path.pop_ready(now)) {
      const auto ack = decode_segment(datagram);
      if (!ack || ack->kind != SegmentKind::Ack || !ack->intact()) continue;
      sender.on_ack(ack->seq, now);
      observe();
    }
    for (const auto& datagram : data_path.pop_ready(now)) {
      const auto data = decode_segment(datagram);
      if (!data || data->kind != SegmentKind::Data) continue;
      auto result = receiver.on_segment(*data);
      if (result.delivered) stats.delivered.push_back(std::move(*result.delivered));
      ack_path.push(encode_segment(result.ack), now);
      observe();
    }
    if (stats.delivered.size() == payloads.size()) {
      stats.completed = true;
      stats.ticks_elapsed = now;
      break;
    }
    for (const auto& segment : sender.on_tick(now)) {
      ++stats.retransmissions;
      data_path.push(encode_segment(segment), now);
    }
    while (next_payload < payloads.size()) {
      auto segment = sender.send(payloads[next_payload], now);
      if (!segment) break;
      data_path.push(encode_segment(*segment), now);
      ++next_payload;
      observe();
    }
  }
  if (!stats.completed) stats.ticks_elapsed = config.max_ticks;
  stats.delivered_count = stats.delivered.size();
  return stats;
}

TransferStats run_transfer(const std::vector<Bytes>& payloads, const sim::ChannelConfig& channel,
                           std::uint16_t window, Tick timeout_ticks, Tick max_ticks) {
  return run_transfer(payloads, symmetric_transfer(channel, window, timeout_ticks, max_ticks));
}

RawStats run_raw(const std::vector<Bytes>& payloads, const sim::ChannelConfig& channel) {
  sim::Channel path(channel);
  RawStats stats;
  Tick now = 0;
  for (; now < payloads.size(); ++now) {
    path.push(payloads[now], now);
    for (auto& d : path.pop_ready(now)) stats.delivered.push_back(std::move(d));
  }
  for (; path.in_flight() > 0; ++now) {
    for (auto& d : path.pop_ready(now)) stats.delivered.push_back(std::move(d));
  }
  stats.exact = stats.delivered == payloads;
  return stats;
}

std::vector<Bytes> make_payloads(std::size_t count, std::size_t size) {
  if (size < 4) size = 4;
  std::vector<Bytes> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Bytes p(size);
    const auto index = static_cast<std::uint32_t>(i);
    p[0] = static_cast<std::uint8_t>(index >> 24);
    p[1] = static_cast<std::uint8_t>(index >> 16);
    p[2] = static_cast<std::uint8_t>(index >> 8);
    p[3] = static_cast<std::uint8_t>(index);
    for (std::size_t j = 4; j < size; ++j) p[j] = static_cast<std::uint8_t>(i + j);
    out.push_back(std::move(p));
  }
  return out;
}

// --- session ----------------------------------------------------------------

ArqSession::ArqSession(std::uint16_t window, Tick timeout_ticks, std::uint32_t max_payload)
    : sender_(window, timeout_ticks, max_payload), max_payload_(max_payload) {}

void ArqSession::flush_backlog(Tick now, Output& out) {
  while (!backlog_.empty()) {
    auto segment = sender_.send(backlog_.front(), now);
    if (!segment) break;
    backlog_.pop_front();
    out.outgoing.push_back(encode_segment(*segment));
  }
}

ArqSession::Output ArqSession::send(Bytes payload, Tick now) {
  if (payload.size() > max_payload_) throw std::length_error("payload exceeds session max_payload");
  backlog_.push_back(std::move(payload));
  Output out;
  flush_backlog(now, out);
  return out;
}

ArqSession::Output ArqSession::on_datagram(ByteView datagram, Tick now) {
  Output out;
  const auto segment = decode_segment(datagram);
  if (!segment) return out;
  if (segment->kind == SegmentKind::Data) {
    auto result = receiver_.on_segment(*segment);
    if (result.delivered) out.delivered.push_back(std::move(*result.delivered));
    out.outgoing.push_back(encode_segment(result.ack));
  } else if (segment->intact()) {
    sender_.on_ack(segment->seq, now);
    flush_backlog(now, out);
  }
  return out;
}

ArqSession::Output ArqSession::on_tick(Tick now) {
  Output out;
  for (const auto& segment : sender_.on_tick(now)) {
    ++retransmissions_;
    out.outgoing.push_back(encode_segment(segment));
  }
  flush_backlog(now, out);
  return out;
}

}  // namespace csnet::arq
