#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string_view>

namespace mio {

std::uint64_t splitmix64(std::uint64_t x);

// FNV-1a over bytes; stable across platforms.
std::uint64_t hash_bytes(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

// Combines a running hash with another value (order sensitive).
std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v);

// Seeded random stream. The engine is std::mt19937_64, whose output sequence
// is fixed by the standard; all real-valued draws are derived here rather than
// through <random> distributions, which are implementation-defined.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi] inclusive (rejection sampling, unbiased).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Standard normal via the Marsaglia polar method.
  double normal();

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

}  // namespace mio
