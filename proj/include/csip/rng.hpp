#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "csip/tensor.hpp"

namespace csip {

// All randomness in the project flows from one base seed through named
// streams, so results are independent of evaluation order.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view name, std::uint64_t a = 0,
                              std::uint64_t b = 0) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  auto feed = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (i * 8)) & 0xFFu;
      h *= 1099511628211ULL;
    }
  };
  feed(seed);
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  feed(a);
  feed(b);
  return splitmix64(h);
}

inline std::mt19937_64 rng_stream(std::uint64_t seed, std::string_view name, std::uint64_t a = 0,
                                  std::uint64_t b = 0) {
  return std::mt19937_64(mix_seed(seed, name, a, b));
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Tensor rand_uniform(Shape s, double lo, double hi, std::mt19937_64& rng,
                           bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(s), requires_grad);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : *t.data) v = dist(rng);
  return t;
}

inline Tensor rand_normal(Shape s, double mean, double stddev, std::mt19937_64& rng,
                          bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(s), requires_grad);
  std::normal_distribution<double> dist(mean, stddev);
  for (double& v : *t.data) v = dist(rng);
  return t;
}

}  // namespace csip
