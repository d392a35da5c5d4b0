#pragma once

#include <cstdint>
#include <limits>
#include <random>

#include "bnn/tensor.hpp"

namespace bnn {

// Counter-based generator: the output stream is a pure function of
// (seed, stream, counter), so any point of a run can be regenerated without
// replaying what came before it. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  std::uint64_t counter() const noexcept { return counter_; }

  // Derive an independent generator for a sub-task (a training step, a
  // posterior sample, ...).
  CounterRng split(std::uint64_t stream) const { return CounterRng(key_, stream); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(*this); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(*this); }

 private:
  // SplitMix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline Tensor standard_normal(const Shape& shape, CounterRng& rng) {
  Tensor t(shape);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal(rng);
  return t;
}

// Entries in {-1, +1} with equal probability.
inline Tensor random_signs(const Shape& shape, CounterRng& rng) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (rng() >> 63) ? 1.0 : -1.0;
  return t;
}

}  // namespace bnn
