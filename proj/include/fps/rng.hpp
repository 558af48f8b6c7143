#pragma once

#include <cstdint>
#include <random>

namespace fps {

/// Seedable generator used for every stochastic draw in the library.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// C++ standard. Uniform and normal variates are derived here rather than
/// through <random> distributions so that draws are identical across
/// standard library implementations.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "mt19937_64/u52-open/box-muller";

  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on the open interval (0, 1): (k + 0.5) * 2^-52 for k in [0, 2^52).
  // Every value is exact in binary64, so neither endpoint is reachable.
  double uniform01() {
    const std::uint64_t k = engine_() >> 12;
    return (static_cast<double>(k) + 0.5) * 0x1.0p-52;
  }

  double normal();

  // Uniform integer in [0, n). Requires n > 0.
  std::uint64_t below(std::uint64_t n);

  // Child generator with an independent stream, derived from one draw.
  Rng split() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ULL); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fps
