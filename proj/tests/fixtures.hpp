#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gridlearn/autodiff.hpp"
#include "gridlearn/grid.hpp"
#include "gridlearn/rng.hpp"

namespace gridlearn::testing {

// Two unit-inertia nodes joined by one lossless unit line.
inline GridNetwork two_node(double damping = 0.0, double injection = 0.0) {
  return GridNetwork({NodeParams{1.0, damping, injection, 1.0}, NodeParams{1.0, damping, -injection, 1.0}},
                     {Line{0, 1, 0.0, 1.0}});
}

inline GridNetwork grid68() { return load_network(std::filesystem::path(GRIDLEARN_DATA_DIR) / "grid68.json"); }

inline std::vector<double> uniform_values(Rng& rng, std::size_t count, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(count);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Values bounded away from zero, either sign.
inline std::vector<double> nonzero_values(Rng& rng, std::size_t count, double lo = 0.2, double hi = 1.5) {
  std::vector<double> v(count);
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return v;
}

inline ad::Tensor random_param(Rng& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  const auto n = ad::shape_size(shape);
  return ad::Tensor::parameter(std::move(shape), uniform_values(rng, n, lo, hi));
}

// sum(w * t) with fixed random weights, so every output coordinate matters.
inline ad::Tensor weighted_sum(const ad::Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  auto w = ad::Tensor::constant(t.shape(), nonzero_values(rng, t.size(), 0.5, 1.5));
  return ad::sum(ad::mul(t, w));
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("gridlearn_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace gridlearn::testing
