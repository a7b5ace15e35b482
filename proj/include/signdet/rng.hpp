#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace signdet {

/// Portable seeded generator used for every documented random choice.
///
/// Raw bits come from std::mt19937_64, whose output sequence is fixed by
/// the C++ standard. The standard distributions are implementation-defined,
/// so bounded integers and unit doubles are derived here:
///   below(n):  draw r; reject while r >= 2^64 - (2^64 mod n); return r mod n
///   unit():    (r >> 11) * 2^-53, uniform on [0, 1)
///   shuffle(): Fisher-Yates from the back, swapping i with below(i + 1)
/// Any implementation following these three rules reproduces our splits.
class SeededRng {
public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  std::uint64_t below(std::uint64_t n) {
    // 2^64 mod n, computed without overflow.
    const std::uint64_t rem = (0 - n) % n;
    const std::uint64_t limit = 0 - rem; // 2^64 - rem; 0 means "no rejection"
    for (;;) {
      std::uint64_t r = engine_();
      if (limit == 0 || r < limit)
        return r % n;
    }
  }

  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  template <typename T> void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      using std::swap;
      swap(items[i - 1], items[j]);
    }
  }

private:
  std::mt19937_64 engine_;
};

} // namespace signdet
