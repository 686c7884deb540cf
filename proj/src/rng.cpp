#include "capsprobe/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace capsprobe {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

// splitmix64 step
std::uint64_t mix(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

Rng Rng::split(std::string_view label) const {
  return split(fnv1a(label.data(), label.size()));
}

Rng Rng::split(std::uint64_t salt) const {
  std::uint64_t s = state_;
  std::uint64_t a = mix(s);
  return Rng(a ^ (salt * 0x9e3779b97f4a7c15ull + 0x7f4a7c15ull));
}

std::uint64_t Rng::next() { return mix(state_); }

double Rng::uniform01() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform01();
}

double Rng::normal(double mean, double stddev) {
  if (have_spare_) {
    have_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1 = uniform01(), u2 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 6.28318530717958647692 * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return mean + stddev * r * std::cos(a);
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: empty range");
  // rejection sampling for unbiased draws
  std::uint64_t limit = ~0ull - (~0ull % n);
  std::uint64_t x = next();
  while (x >= limit) x = next();
  return x % n;
}

}  // namespace capsprobe
