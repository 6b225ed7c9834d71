#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace faultfree {

// splitmix64 finalizer, used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// FNV-1a over bytes; used for config hashes and named streams.
std::uint64_t fnv1a64(std::string_view bytes);

// Deterministic generator. The std distributions are implementation
// defined, so every draw here is derived from raw engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                  // [0, 1)
  double normal();                   // standard normal
  std::size_t below(std::size_t n);  // [0, n), unbiased
  bool coin() { return (engine_() >> 63) != 0; }

  Rng split(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }
  Rng split(std::string_view name) const { return split(fnv1a64(name)); }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace faultfree
