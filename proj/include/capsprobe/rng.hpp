#pragma once

#include <cstdint>
#include <string_view>

namespace capsprobe {

/// Deterministic splittable generator. All run randomness flows from one
/// seed; components derive their own stream via a label so that adding a
/// consumer never shifts another component's draws. Distribution code is
/// written out explicitly (not std::*_distribution) so sequences are
/// stable across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // avoid the all-zero fixed point and decorrelate small seeds
    next();
    next();
  }

  Rng split(std::string_view label) const;
  Rng split(std::uint64_t salt) const;

  std::uint64_t next();

  double uniform01();                       // [0,1)
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);  // Box-Muller
  std::uint64_t uniform_int(std::uint64_t n);             // [0,n)

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a, used for rng stream labels and manifest content digests.
std::uint64_t fnv1a(const void* data, std::size_t len,
                    std::uint64_t seed = 1469598103934665603ull);

}  // namespace capsprobe
