#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>

namespace seqrec {

#ifdef SEQREC_REAL_FLOAT
using real = float;
#else
using real = double;
#endif

// Error taxonomy. Shape/dimension problems, bad configuration values,
// malformed input data, evaluation-protocol violations, non-finite num
// values, and filesystem failures are kept distinct so callers can attach
// the right context.
struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct protocol_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a master seed and a list of salts
// (layer index, site tag, epoch, ...). Every randomized component of a run
// draws from a seed derived this way, so streams never depend on the order
// in which other components consume randomness.
inline std::uint64_t mix_seed(std::uint64_t master,
                              std::initializer_list<std::uint64_t> salts) {
  std::uint64_t h = splitmix64(master);
  for (std::uint64_t s : salts) h = splitmix64(h ^ s);
  return h;
}

// Seeded generator with explicit bit-stable mappings. mt19937_64 output is
// specified by the standard; the uniform/normal mappings below avoid
// std::*_distribution, whose sequences vary across library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return mean + stddev * r * std::cos(a);
  }

  // Uniform index in [0, n). Multiply-shift keeps the mapping unbiased for
  // any n far below 2^64.
  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(gen_()) * n) >> 64);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Global switch for NaN/Inf detection after every tensor primitive.
// On by default; long timed runs may opt out.
inline bool& finite_checks_flag() {
  static bool on = true;
  return on;
}
inline void set_finite_checks(bool on) { finite_checks_flag() = on; }
inline bool finite_checks_enabled() { return finite_checks_flag(); }

}  // namespace seqrec
