#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace promptsan {

// Mixes a root seed with a stream name. Streams derived under different
// names are independent; the same (seed, name) pair always yields the
// same stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);

// Deterministic RNG with named substreams. All conversions from raw
// engine output to doubles and bounded ints are done by hand so the
// produced values do not depend on the standard library's distribution
// implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  // Derived from the construction seed, not the current engine state.
  Rng substream(std::string_view name) const {
    return Rng(derive_seed(seed_, name));
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double normal();
  double normal(double mean, double stddev) {
    return mean + stddev * normal();
  }

  // [0, n), n >= 1
  std::uint64_t bounded(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // inclusive range
  std::size_t uniform_index(std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(bounded(hi - lo + 1));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[bounded(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace promptsan
