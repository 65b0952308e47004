#include "precog/rng.hpp"

namespace precog {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Rng::Rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32)};
  engine_.seed(seq);
}

Rng Rng::stream(std::uint64_t seed, std::string_view name) {
  const std::uint64_t h = fnv1a(name);
  Rng r;
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h),
                    static_cast<std::uint32_t>(h >> 32)};
  r.engine_.seed(seq);
  return r;
}

Rng Rng::substream(std::string_view name) {
  return stream(next_u64(), name);
}

double Rng::normal() { return normal_(engine_); }

double Rng::normal(double mean, double stddev) {
  return mean + stddev * normal();
}

double Rng::uniform() {
  return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
}

double Rng::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

std::uint64_t Rng::next_u64() { return engine_(); }

std::size_t Rng::index(std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

Eigen::ArrayXd Rng::normals(Eigen::Index n) {
  Eigen::ArrayXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = normal();
  return out;
}

}  // namespace precog
