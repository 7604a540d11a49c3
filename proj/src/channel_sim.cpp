#include "csnet/channel_sim.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

namespace csnet::sim {

RngStep rng_next(std::uint64_t state) {
  if (state == 0) throw ZeroSeedError();
  std::uint64_t x = state;
  x ^= x >> 12;
  x ^= x << 25;
  x ^= x >> 27;
  return RngStep{x, x * 0x2545F4914F6CDD1DULL};
}

// Outputs within 2^10 of 2^64 round up to 1.0 as doubles; pin those just
// below 1 so a probability of 1 always fires.
double to_unit(std::uint64_t output) {
  return std::min(std::ldexp(static_cast<double>(output), -64), std::nextafter(1.0, 0.0));
}

Rng::Rng(std::uint64_t seed) : state_(seed) {
  if (seed == 0) throw ZeroSeedError();
}

std::uint64_t Rng::next() {
  const auto step = rng_next(state_);
  state_ = step.state;
  return step.output;
}

std::uint64_t Rng::below(std::uint64_t n) {
  const auto value = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  // u * n can round up to n when u is within one ulp of 1.
  return value < n ? value : n - 1;
}

void ChannelConfig::validate() const {
  auto check = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument(std::string(name) + " must be within [0, 1]");
    }
  };
  check(loss_prob, "loss_prob");
  check(dup_prob, "dup_prob");
  check(corrupt_prob, "corrupt_prob");
  if (seed == 0) throw ZeroSeedError();
}

Channel::Channel(const ChannelConfig& config) : config_(config), rng_(config.seed) {
  config_.validate();
}

void Channel::schedule(Bytes payload, Tick at) {
  queue_.emplace(std::make_pair(at, inserted_++), std::move(payload));
}

void Channel::push(Bytes payload, Tick now) {
  if (rng_.uniform() < config_.loss_prob) return;
  const Tick delay = rng_.below(std::uint64_t{config_.max_delay} + 1);
  std::optional<Tick> dup_delay;
  if (rng_.uniform() < config_.dup_prob) dup_delay = rng_.below(std::uint64_t{config_.max_delay} + 1);
  if (rng_.uniform() < config_.corrupt_prob && !payload.empty()) {
    const auto index = rng_.below(payload.size());
    const auto mask = static_cast<std::uint8_t>(1 + rng_.below(255));
    payload[index] ^= mask;
  }
  if (!dup_delay) {
    schedule(std::move(payload), now + delay);
    return;
  }
  schedule(payload, now + delay);
  schedule(std::move(payload), now + *dup_delay);
}

std::vector<Bytes> Channel::pop_ready(Tick now) {
  std::vector<Bytes> ready;
  auto it = queue_.begin();
  while (it != queue_.end() && it->first.first <= now) {
    ready.push_back(std::move(it->second));
    it = queue_.erase(it);
  }
  return ready;
}

}  // namespace csnet::sim
