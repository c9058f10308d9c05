#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "spikekd/snn.hpp"
#include "spikekd/tensor.hpp"

namespace testsupport {

inline spikekd::snn::TemporalLogits to_temporal(const oracle::Batch& z) {
  const std::size_t B = z.size(), T = z[0].size(), C = z[0][0].size();
  std::vector<double> flat;
  flat.reserve(B * T * C);
  for (const auto& seq : z)
    for (const auto& v : seq) flat.insert(flat.end(), v.begin(), v.end());
  return {spikekd::Tensor({B, T, C}, std::move(flat))};
}

inline spikekd::Tensor to_matrix(const std::vector<oracle::Vec>& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return spikekd::Tensor::matrix(rows.size(), rows[0].size(), std::move(flat));
}

inline oracle::Vec random_vec(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  oracle::Vec v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline oracle::Batch random_batch(std::mt19937_64& rng, std::size_t B, std::size_t T, std::size_t C, double scale) {
  oracle::Batch z(B, oracle::Seq(T));
  for (auto& seq : z)
    for (auto& v : seq) v = random_vec(rng, C, -scale, scale);
  return z;
}

inline std::vector<std::size_t> random_labels(std::mt19937_64& rng, std::size_t B, std::size_t C) {
  std::uniform_int_distribution<std::size_t> d(0, C - 1);
  std::vector<std::size_t> y(B);
  for (auto& v : y) v = d(rng);
  return y;
}

}  // namespace testsupport
