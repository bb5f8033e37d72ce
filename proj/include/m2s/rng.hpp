#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace m2s {

// Seed-keyed RNG with hand-rolled bounded draws and shuffling.
// std::shuffle and std::uniform_int_distribution are implementation-defined,
// so using them would make committed golden outputs stdlib-specific;
// mt19937_64 itself is fully specified by the standard.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  // Uniform draw in [0, bound). bound must be > 0.
  std::uint64_t next_below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    std::uint64_t x = engine_();
    while (x < threshold) {
      x = engine_();
    }
    return x % bound;
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[next_below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace m2s
