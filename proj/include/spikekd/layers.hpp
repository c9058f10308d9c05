#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "spikekd/autodiff.hpp"
#include "spikekd/tensor.hpp"

namespace spikekd {

/// y = x W + b with W stored row-major as (in x out).
struct AffineLayer {
  Tensor weight;
  Tensor bias;

  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }

  friend bool operator==(const AffineLayer&, const AffineLayer&) = default;
};

/// Uniform(-1/sqrt(in), 1/sqrt(in)) for weights and biases.
AffineLayer init_affine(std::size_t in, std::size_t out, std::mt19937_64& rng);

/// Layers for widths {w0, w1, ..., wn}; throws if fewer than two widths.
std::vector<AffineLayer> init_layers(std::span<const std::size_t> widths, std::uint64_t seed);

/// Throws std::invalid_argument when consecutive layers do not chain.
void check_chain(std::span<const AffineLayer> layers);

/// Leaves for every weight and bias, in layer order.
struct BoundLayers {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
};
BoundLayers bind_layers(ad::Tape& tape, std::span<const AffineLayer> layers);

// Layer list JSON: [{"in": n, "out": m, "weight": [n*m row-major], "bias": [m]}, ...]
nlohmann::json layers_to_json(std::span<const AffineLayer> layers);
std::vector<AffineLayer> layers_from_json(const nlohmann::json& j);

/// Deterministic sub-stream seed for a named module within one run.
std::uint64_t stream_seed(std::uint64_t run_seed, std::uint64_t stream);

}  // namespace spikekd
