#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace hsrgan {

// Seeded generator with a serializable state. Normal draws use Box-Muller
// without caching, so the engine state alone determines the stream.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  // Independent stream for item `index` of a job seeded with `seed`.
  static Rng substream(uint64_t seed, uint64_t index);

  uint64_t next_u64() { return engine_(); }
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  int64_t below(int64_t n);  // [0, n)
  bool bernoulli(double p) { return uniform() < p; }

  std::string state() const;
  void set_state(const std::string& state);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

uint64_t splitmix64(uint64_t x);

}  // namespace hsrgan
