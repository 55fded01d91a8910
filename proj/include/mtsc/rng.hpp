// Counter-based splittable PRNG.
//
// Every draw is a pure function of (seed, stream_id, counter), so a stream
// replays bit-identically on any platform and independent components never
// collide as long as they use distinct stream ids.

#pragma once

#include <cstdint>

namespace mtsc {

// SplitMix64 finalizer; used both for drawing and for deriving stream ids.
uint64_t mix64(uint64_t x);

// Hash-combine for building stream ids out of structured coordinates
// (round, client, step, ...).
uint64_t stream_id_of(uint64_t a, uint64_t b = 0, uint64_t c = 0, uint64_t d = 0);

class RngStream {
 public:
  RngStream(uint64_t seed, uint64_t stream_id)
      : seed_(seed), stream_(stream_id) {}

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_; }
  uint64_t counter() const { return counter_; }

  uint64_t next_u64();

  // Uniform on [0, 1).
  double uniform();

  // Uniform on [lo, hi).
  double uniform_range(double lo, double hi);

  // Uniform integer on [lo, hi] inclusive.
  int uniform_int(int lo, int hi);

  // Standard normal via Box-Muller. Draws two uniforms per pair and caches
  // the second deviate, so consumption stays deterministic.
  double normal();

  // Independent stream derived from this one; children with distinct tags
  // never overlap with the parent or each other.
  RngStream substream(uint64_t tag) const;

 private:
  uint64_t seed_;
  uint64_t stream_;
  uint64_t counter_ = 0;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace mtsc
