#include "spikekd/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace spikekd {

AffineLayer init_affine(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  AffineLayer layer{Tensor(Shape{in, out}), Tensor(Shape{out})};
  for (double& w : layer.weight.data()) w = dist(rng);
  for (double& b : layer.bias.data()) b = dist(rng);
  return layer;
}

std::vector<AffineLayer> init_layers(std::span<const std::size_t> widths, std::uint64_t seed) {
  if (widths.size() < 2) throw std::invalid_argument("init_layers: need at least input and output widths");
  for (std::size_t w : widths)
    if (w == 0) throw std::invalid_argument("init_layers: zero width");
  std::mt19937_64 rng(seed);
  std::vector<AffineLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) layers.push_back(init_affine(widths[i], widths[i + 1], rng));
  return layers;
}

void check_chain(std::span<const AffineLayer> layers) {
  if (layers.empty()) throw std::invalid_argument("network has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.size() != l.out()) {
      throw std::invalid_argument("layer " + std::to_string(i) + ": weight " + shape_string(l.weight.shape()) +
                                  " and bias " + shape_string(l.bias.shape()) + " are inconsistent");
    }
    if (i > 0 && layers[i - 1].out() != l.in()) {
      throw std::invalid_argument("layer " + std::to_string(i) + " expects " + std::to_string(l.in()) +
                                  " inputs but previous layer emits " + std::to_string(layers[i - 1].out()));
    }
  }
}

BoundLayers bind_layers(ad::Tape& tape, std::span<const AffineLayer> layers) {
  BoundLayers b;
  for (const auto& l : layers) {
    b.weights.push_back(tape.leaf(l.weight));
    b.biases.push_back(tape.leaf(l.bias));
  }
  return b;
}

nlohmann::json layers_to_json(std::span<const AffineLayer> layers) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& l : layers) {
    arr.push_back({{"in", l.in()}, {"out", l.out()}, {"weight", l.weight.values()}, {"bias", l.bias.values()}});
  }
  return arr;
}

std::vector<AffineLayer> layers_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("layers: expected an array");
  std::vector<AffineLayer> layers;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    const auto in = e.at("in").get<std::size_t>();
    const auto out = e.at("out").get<std::size_t>();
    auto w = e.at("weight").get<std::vector<double>>();
    auto b = e.at("bias").get<std::vector<double>>();
    if (w.size() != in * out || b.size() != out) {
      throw std::invalid_argument("layer " + std::to_string(i) + ": value arrays do not match in=" +
                                  std::to_string(in) + " out=" + std::to_string(out));
    }
    layers.push_back(AffineLayer{Tensor(Shape{in, out}, std::move(w)), Tensor(Shape{out}, std::move(b))});
  }
  check_chain(layers);
  return layers;
}

std::uint64_t stream_seed(std::uint64_t run_seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(run_seed), static_cast<std::uint32_t>(run_seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint64_t out[1];
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out[0];
}

}  // namespace spikekd
