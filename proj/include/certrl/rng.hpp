#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace certrl {

// Seeded random stream. Streams derived from the same (seed, stream_id) pair
// are identical across runs on the same platform; streams with distinct ids
// are statistically independent. All stochastic code takes an RngStream so
// that experiments are replayable from a single 64-bit seed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  // Child stream keyed by index, independent of draws made on the parent.
  static RngStream derive(std::uint64_t seed, std::uint64_t stream_id) {
    return RngStream(mix(seed + 0x9e3779b97f4a7c15ULL * (stream_id + 1)));
  }

  double normal() {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(gen_);
  }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }

  // Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(gen_);
  }

  Eigen::VectorXd normal_vec(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Eigen::VectorXd uniform_vec(int n, double lo, double hi) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 gen_;
};

}  // namespace certrl
