#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "spikekd/tensor.hpp"

namespace spikekd::data {

enum class Split { train, test };
const char* split_name(Split s);

struct Dataset {
  Tensor features;  // N x D, every value in [0, 1]
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  void validate() const;

  /// Rows in the given order, keeping the split tag.
  Dataset subset(std::span<const std::size_t> rows) const;
  Tensor rows(std::span<const std::size_t> rows) const;
};

struct SyntheticSpec {
  std::size_t classes = 5;
  std::size_t dim = 16;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 100;
  double spread = 0.25;          // std of the Gaussian around each centroid
  double centroid_low = 0.25;    // centroids are drawn uniformly from [low, high]^D
  double centroid_high = 0.75;
  std::uint64_t seed = 0;

  void validate() const;
};

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, std::uint64_t seed);
nlohmann::json to_json(const SyntheticSpec& s);

struct SyntheticData {
  Dataset train;
  Dataset test;
  Tensor centroids;  // C x D
};

/// Gaussian clusters clipped to [0, 1]. Train and test draw from separate streams.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

/// Rows of `x0,...,x{D-1},label`. A first line whose last field is `label`
/// is read as a header. When `classes` is unset it is max(label) + 1.
/// Errors name the 1-based line number.
Dataset load_csv(const std::filesystem::path& path, Split split, std::optional<std::size_t> classes = std::nullopt);
/// Writes a header line and 17 significant digits per value.
std::string to_csv(const Dataset& d);
void write_csv(const Dataset& d, const std::filesystem::path& path);

}  // namespace spikekd::data
