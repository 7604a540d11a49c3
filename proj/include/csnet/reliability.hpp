#pragma once

// Go-Back-N ARQ over an unreliable datagram service.
//
// The sender and receiver are pure state machines: no I/O and no clocks.
// Time arrives as tick arguments and segments leave as return values.
//
// Segment layout:
//   kind (1B) | seq (4B BE) | payload-length (2B BE) | checksum (2B BE) | payload
//
// The checksum is a byte-sum mod 65536 over the four seq bytes and the
// payload. Covering seq means a single damaged byte can never turn a valid
// DATA into a different in-order segment, nor make an ACK acknowledge data
// the receiver never saw. Damage to kind or length is caught by decode.

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "csnet/channel_sim.hpp"
#include "csnet/wire_protocol.hpp"

namespace csnet::arq {

using sim::Tick;

inline constexpr std::size_t kSegmentHeaderSize = 9;
inline constexpr std::uint32_t kMaxSegmentPayload = 0xFFFF;

enum class SegmentKind : std::uint8_t { Data = 0x10, Ack = 0x11 };

struct Segment {
  SegmentKind kind = SegmentKind::Data;
  std::uint32_t seq = 0;  // DATA: index; ACK: next expected index
  Bytes payload;
  std::uint16_t checksum = 0;

  bool intact() const;
  friend bool operator==(const Segment&, const Segment&) = default;
};

std::uint16_t segment_checksum(std::uint32_t seq, ByteView payload);
Segment make_data_segment(std::uint32_t seq, Bytes payload);
Segment make_ack_segment(std::uint32_t next_expected);

Bytes encode_segment(const Segment& segment);
/// Nullopt when the datagram cannot be a segment (kind, length, or an ACK
/// carrying a payload). Checksum validity is left to the consumer.
std::optional<Segment> decode_segment(ByteView datagram);

class GbnSender {
 public:
  GbnSender(std::uint16_t window, Tick timeout_ticks, std::uint32_t max_payload = kMaxSegmentPayload);

  /// Emits DATA(next_seq) or returns nullopt when the window is full.
  std::optional<Segment> send(Bytes payload, Tick now);
  /// Cumulative ACK carrying the receiver's next expected seq.
  void on_ack(std::uint32_t ack_seq, Tick now);
  /// On expiry returns copies of [base, next_seq) in order and re-arms.
  std::vector<Segment> on_tick(Tick now);

  bool window_full() const { return next_seq_ - base_ >= window_; }
  std::uint32_t base() const { return base_; }
  std::uint32_t next_seq() const { return next_seq_; }
  std::uint16_t window() const { return window_; }
  Tick timeout_ticks() const { return timeout_; }
  std::optional<Tick> timer_expiry() const { return timer_expiry_; }
  std::size_t in_flight() const { return unacked_.size(); }

 private:
  std::uint16_t window_;
  Tick timeout_;
  std::uint32_t max_payload_;
  std::uint32_t base_ = 0;
  std::uint32_t next_seq_ = 0;
  std::optional<Tick> timer_expiry_;
  std::deque<Segment> unacked_;
};

class GbnReceiver {
 public:
  struct Result {
    std::optional<Bytes> delivered;
    Segment ack;
  };

  /// Accepts only an intact DATA whose seq equals expected(); everything
  /// else is discarded. Always answers ACK(expected()).
  Result on_segment(const Segment& segment);
  std::uint32_t expected() const { return expected_; }

 private:
  std::uint32_t expected_ = 0;
};

// --- transfer harness -------------------------------------------------------

struct TransferConfig {
  sim::ChannelConfig data_path;
  sim::ChannelConfig ack_path;
  std::uint16_t window = 8;
  Tick timeout_ticks = 8;
  Tick max_ticks = 1'000'000;
  /// Called after every sender/receiver event; used by invariant tests.
  std::function<void(const GbnSender&, const GbnReceiver&)> observe;
};

/// Same channel behaviour in both directions. The ACK path runs on
/// `seed ^ 0x9E3779B97F4A7C15` (or 1 if that is zero) so the two paths draw
/// independent streams.
TransferConfig symmetric_transfer(const sim::ChannelConfig& channel, std::uint16_t window = 8,
                                  Tick timeout_ticks = 8, Tick max_ticks = 1'000'000);

std::uint64_t derive_ack_seed(std::uint64_t data_seed);

struct TransferStats {
  std::size_t delivered_count = 0;
  std::uint64_t retransmissions = 0;
  Tick ticks_elapsed = 0;
  bool completed = false;
  std::vector<Bytes> delivered;
};

/// Drives one sender and one receiver over two channels on a shared tick
/// loop. Each tick runs, in order: ACK arrivals, DATA arrivals (plus their
/// ACK replies), the completion check, timer retransmissions, then new
/// sends while the window allows. `ticks_elapsed` is the tick on which the
/// last payload was delivered, or max_ticks when incomplete.
TransferStats run_transfer(const std::vector<Bytes>& payloads, const TransferConfig& config);
TransferStats run_transfer(const std::vector<Bytes>& payloads, const sim::ChannelConfig& channel,
                           std::uint16_t window, Tick timeout_ticks, Tick max_ticks);

struct RawStats {
  std::vector<Bytes> delivered;
  bool exact = false;  // delivered == sent
};

/// Pushes payload i at tick i straight through one channel with no ARQ and
/// collects whatever arrives until the channel drains.
RawStats run_raw(const std::vector<Bytes>& payloads, const sim::ChannelConfig& channel);

/// `count` distinct payloads: a 4-byte BE index followed by filler bytes,
/// `size` bytes each (at least 4).
std::vector<Bytes> make_payloads(std::size_t count, std::size_t size);

// --- bidirectional session --------------------------------------------------

/// One GBN sender plus one GBN receiver sharing a datagram path, for running
/// ARQ over a real socket. Datagrams in and out are encoded segments.
class ArqSession {
 public:
  struct Output {
    std::vector<Bytes> delivered;  // in-order payloads from the peer
    std::vector<Bytes> outgoing;   // datagrams to put on the wire
  };

  ArqSession(std::uint16_t window, Tick timeout_ticks, std::uint32_t max_payload = kMaxSegmentPayload);

  /// Queues a payload; it goes out as soon as the window has room.
  Output send(Bytes payload, Tick now);
  Output on_datagram(ByteView datagram, Tick now);
  Output on_tick(Tick now);

  bool idle() const { return backlog_.empty() && sender_.in_flight() == 0; }
  std::size_t backlog() const { return backlog_.size(); }
  std::optional<Tick> next_deadline() const { return sender_.timer_expiry(); }
  std::uint64_t retransmissions() const { return retransmissions_; }
  const GbnSender& sender() const { return sender_; }
  const GbnReceiver& receiver() const { return receiver_; }

 private:
  void flush_backlog(Tick now, Output& out);

  GbnSender sender_;
  GbnReceiver receiver_;
  std::deque<Bytes> backlog_;
  std::uint32_t max_payload_;
  std::uint64_t retransmissions_ = 0;
};

}  // namespace csnet::arq
