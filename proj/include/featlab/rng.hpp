#pragma once

#include <cstdint>
#include <string_view>

namespace featlab {

// Seeds go through splitmix64, draws come from xoshiro256**. Normals use
// Box-Muller on 53-bit uniforms. Everything here is specified bit-for-bit so
// another language can regenerate the same datasets.
inline constexpr std::string_view kPrngId = "xoshiro256ss-splitmix64-boxmuller-v1";

std::uint64_t splitmix64(std::uint64_t& state);

// Derive an independent stream seed from a base seed and a purpose tag.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  Rng(std::uint64_t seed, std::string_view tag) : Rng(derive_seed(seed, tag)) {}

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double normal();   // N(0, 1)
  double normal(double mean, double sd) { return mean + sd * normal(); }
  // Rad(delta): -1 with probability delta, +1 otherwise.
  int rademacher(double delta) { return uniform() < delta ? -1 : 1; }
  int sign_half() { return uniform() < 0.5 ? -1 : 1; }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace featlab
