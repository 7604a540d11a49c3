#pragma once

// Deterministic unreliable datagram channel driven by a logical clock.
//
// Every push makes its random draws in a fixed order so traces are stable:
//   1. loss        (u < loss_prob drops the datagram, nothing else is drawn)
//   2. delay       (uniform over 0..max_delay)
//   3. duplicate   (u < dup_prob)
//   4. dup delay   (only when duplicated)
//   5. corrupt     (u < corrupt_prob), then byte index and XOR mask 1..255
//                  when the payload is non-empty
// Corruption is applied before scheduling, so a duplicate carries the same
// damage as the original.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "csnet/wire_protocol.hpp"

namespace csnet::sim {

using Tick = std::uint64_t;

class ZeroSeedError : public std::invalid_argument {
 public:
  ZeroSeedError() : std::invalid_argument("xorshift64* state must be non-zero") {}
};

struct RngStep {
  std::uint64_t state;
  std::uint64_t output;
};

/// One xorshift64* step. Throws ZeroSeedError for state 0.
RngStep rng_next(std::uint64_t state);

/// Maps a raw output onto [0, 1) as output / 2^64.
double to_unit(std::uint64_t output);

class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform() { return to_unit(next()); }
  /// Uniform integer in [0, n) as floor(u * n). n must be positive.
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t state_;
};

struct ChannelConfig {
  double loss_prob = 0.0;
  double dup_prob = 0.0;
  double corrupt_prob = 0.0;
  std::uint32_t max_delay = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct InFlight {
  Bytes payload;
  Tick deliver_at = 0;
};

class Channel {
 public:
  explicit Channel(const ChannelConfig& config);

  void push(Bytes payload, Tick now);
  /// Removes and returns everything due at or before `now`, ordered by
  /// (deliver_at, insertion order).
  std::vector<Bytes> pop_ready(Tick now);

  std::size_t in_flight() const { return queue_.size(); }
  const ChannelConfig& config() const { return config_; }

 private:
  void schedule(Bytes payload, Tick at);

  ChannelConfig config_;
  Rng rng_;
  std::uint64_t inserted_ = 0;
  std::map<std::pair<Tick, std::uint64_t>, Bytes> queue_;
};

}  // namespace csnet::sim
