#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace irmlab {

/// Counter-based deterministic generator. Every draw is a pure function of
/// (key, counter), so streams can be replayed or split without shared state.
/// The mixer is the splitmix64 finalizer over key + counter * golden ratio.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : key_(seed) {}

  static std::uint64_t mix(std::uint64_t key, std::uint64_t counter) {
    std::uint64_t z = key + (counter + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Derives an independent stream for a named purpose.
  CounterRng derive(std::string_view tag) const {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (char c : tag) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ULL;
    }
    return CounterRng(mix(key_, h));
  }

  CounterRng derive(std::uint64_t tag) const { return CounterRng(mix(key_, tag)); }

  std::uint64_t next_u64() { return mix(key_, counter_++); }

  /// Uniform in [0, 1), 53-bit resolution.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

  /// Uniform integer in [0, n). Lemire multiply-shift; deterministic, no rejection.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool next_coin(double p_true) { return next_uniform() < p_true; }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Seeded in-place Fisher-Yates shuffle.
template <typename T>
void deterministic_shuffle(std::vector<T>& items, CounterRng& rng) {
  if (items.size() < 2) return;
  for (std::size_t i = items.size() - 1; i > 0; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_below(i + 1));
    std::swap(items[i], items[j]);
  }
}

}  // namespace irmlab
