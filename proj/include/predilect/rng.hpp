// Deterministic named random streams.
#ifndef PREDILECT_RNG_HPP_
#define PREDILECT_RNG_HPP_

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace predilect {

// Identifier recorded in run metadata so results can be tied to the generator.
inline constexpr std::string_view kRngAlgorithm =
    "mt19937_64/seed_seq(seed_lo,seed_hi,fnv1a64(stream)_lo,_hi)";

std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t hash = 0xcbf29ce484222325ULL);

// Wraps mt19937_64 with distribution helpers implemented here rather than
// through <random> distributions, whose outputs vary between standard
// library vendors.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view stream);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  int uniform_int(int lo, int hi_inclusive);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  std::string save_state() const;
  void restore_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Rng seeded_rng(std::uint64_t seed, std::string_view stream) {
  return Rng(seed, stream);
}

}  // namespace predilect

#endif  // PREDILECT_RNG_HPP_
