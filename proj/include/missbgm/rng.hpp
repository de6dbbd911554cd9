#ifndef MISSBGM_RNG_HPP
#define MISSBGM_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "missbgm/normal.hpp"

namespace missbgm {

// Deterministic RNG. All draw paths are hand-rolled (no std distributions,
// whose output is implementation defined), so equal seeds give equal streams
// on any platform. Substreams are derived from (seed, name, index) so that
// independent parts of a run never share a stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1p-53;
  }

  // Standard normal via the inverse CDF, so draws depend only on the
  // uniform stream and the quantile function.
  double normal() { return normal_quantile(uniform()); }

  // Uniform integer in [0, n), n >= 1. Rejection sampling, unbiased.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  static Rng substream(std::uint64_t seed, std::string_view name,
                       std::uint64_t index = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the name
    for (char ch : name) {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ULL;
    }
    return Rng(mix(mix(seed ^ h) + index));
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {  // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 gen_;
};

// Fisher-Yates with the rejection-sampled integer draw above.
inline void shuffle_indices(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_int(i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace missbgm

#endif  // MISSBGM_RNG_HPP
