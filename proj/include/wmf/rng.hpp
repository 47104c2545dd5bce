#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "wmf/tensor.hpp"

namespace wmf {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream seed for item `index` of a run seeded with `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

// mt19937_64 with platform-independent draws (no std distributions).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do v = engine_(); while (v >= limit);
    return v % n;
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }
  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    require(!is.fail(), ErrorKind::Format, "malformed RNG state");
  }

 private:
  std::mt19937_64 engine_;
};

inline Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi,
                             DType dtype = default_dtype()) {
  Tensor t = Tensor::zeros(std::move(shape), dtype);
  for (std::size_t i = 0; i < static_cast<std::size_t>(t.numel()); ++i) t.set(i, rng.uniform(lo, hi));
  return t;
}

}  // namespace wmf
