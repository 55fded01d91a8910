#include "mtsc/rng.hpp"

#include <cmath>

namespace mtsc {

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t stream_id_of(uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
  uint64_t h = mix64(a);
  h = mix64(h ^ (b + 0x9e3779b97f4a7c15ULL));
  h = mix64(h ^ (c + 0xc2b2ae3d27d4eb4fULL));
  h = mix64(h ^ (d + 0x165667b19e3779f9ULL));
  return h;
}

uint64_t RngStream::next_u64() {
  uint64_t z = mix64(mix64(mix64(seed_) ^ stream_) ^ counter_);
  ++counter_;
  return z;
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_range(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

int RngStream::uniform_int(int lo, int hi) {
  // Rejection-free modulo is fine here; ranges are tiny relative to 2^64.
  uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

double RngStream::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  // u1 in (0, 1] so the log is finite.
  double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  cached_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

RngStream RngStream::substream(uint64_t tag) const {
  return RngStream(seed_, stream_id_of(stream_, tag ^ 0xa5a5a5a5a5a5a5a5ULL));
}

}  // namespace mtsc
