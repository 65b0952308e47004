#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <string_view>

namespace precog {

// Seeded random source. Independent named sub-streams are derived from one
// run seed so every consumer (dataset, init, shuffle, ...) is reproducible
// on its own.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  static Rng stream(std::uint64_t seed, std::string_view name);
  Rng substream(std::string_view name);

  double normal();
  double normal(double mean, double stddev);
  double uniform();
  double uniform(double lo, double hi);
  bool bernoulli(double p);
  std::uint64_t next_u64();
  std::size_t index(std::size_t n);

  Eigen::ArrayXd normals(Eigen::Index n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t fnv1a(std::string_view text);

}  // namespace precog
