#include "spikekd/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "spikekd/io.hpp"
#include "spikekd/layers.hpp"

namespace spikekd::data {

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

void Dataset::validate() const {
  if (features.rank() != 2) throw std::invalid_argument("dataset: features must be (N x D)");
  if (features.rows() != labels.size()) {
    throw std::invalid_argument("dataset: " + std::to_string(features.rows()) + " feature rows but " +
                                std::to_string(labels.size()) + " labels");
  }
  if (classes < 2) throw std::invalid_argument("dataset: need at least 2 classes");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= classes)
      throw std::invalid_argument("dataset: label " + std::to_string(labels[i]) + " of row " + std::to_string(i) +
                                  " is outside [0, " + std::to_string(classes) + ")");
  for (double v : features.values())
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("dataset: feature values must lie in [0, 1]");
}

Tensor Dataset::rows(std::span<const std::size_t> idx) const {
  const std::size_t D = dim();
  std::vector<double> out;
  out.reserve(idx.size() * D);
  for (std::size_t r : idx) {
    if (r >= size()) throw std::out_of_range("dataset: row index out of range");
    const auto row = features.row(r);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor::matrix(idx.size(), D, std::move(out));
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  Dataset d;
  d.features = rows(idx);
  for (std::size_t r : idx) d.labels.push_back(labels[r]);
  d.classes = classes;
  d.split = split;
  return d;
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw std::invalid_argument("synthetic: classes must be >= 2");
  if (dim < 1) throw std::invalid_argument("synthetic: dim must be >= 1");
  if (train_per_class < 1 || test_per_class < 1) throw std::invalid_argument("synthetic: need samples in both splits");
  if (!(spread > 0) || !std::isfinite(spread)) throw std::invalid_argument("synthetic: spread must be > 0");
  if (!(centroid_low >= 0 && centroid_low <= centroid_high && centroid_high <= 1))
    throw std::invalid_argument("synthetic: need 0 <= centroid_low <= centroid_high <= 1");
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, std::uint64_t seed) {
  io::require_known_keys(j, {"classes", "dim", "train_per_class", "test_per_class", "spread", "centroid_low",
                             "centroid_high"},
                         "data");
  SyntheticSpec s;
  s.classes = j.value("classes", s.classes);
  s.dim = j.value("dim", s.dim);
  s.train_per_class = j.value("train_per_class", s.train_per_class);
  s.test_per_class = j.value("test_per_class", s.test_per_class);
  s.spread = j.value("spread", s.spread);
  s.centroid_low = j.value("centroid_low", s.centroid_low);
  s.centroid_high = j.value("centroid_high", s.centroid_high);
  s.seed = seed;
  s.validate();
  return s;
}

nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"classes", s.classes},          {"dim", s.dim},
          {"train_per_class", s.train_per_class}, {"test_per_class", s.test_per_class},
          {"spread", s.spread},            {"centroid_low", s.centroid_low},
          {"centroid_high", s.centroid_high}};
}

namespace {

Dataset draw(const SyntheticSpec& spec, const Tensor& centroids, std::size_t per_class, std::uint64_t seed,
             Split split) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset d;
  d.classes = spec.classes;
  d.split = split;
  std::vector<double> x;
  x.reserve(spec.classes * per_class * spec.dim);
  // Interleave classes so every prefix of the dataset is roughly balanced.
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < spec.classes; ++c) {
      for (std::size_t k = 0; k < spec.dim; ++k)
        x.push_back(std::clamp(centroids.at(c, k) + spec.spread * noise(rng), 0.0, 1.0));
      d.labels.push_back(c);
    }
  d.features = Tensor::matrix(d.labels.size(), spec.dim, std::move(x));
  return d;
}

}  // namespace

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(stream_seed(spec.seed, 0));
  std::uniform_real_distribution<double> u(spec.centroid_low, spec.centroid_high);
  Tensor centroids({spec.classes, spec.dim});
  for (double& v : centroids.data()) v = u(rng);
  SyntheticData out;
  out.train = draw(spec, centroids, spec.train_per_class, stream_seed(spec.seed, 1), Split::train);
  out.test = draw(spec, centroids, spec.test_per_class, stream_seed(spec.seed, 2), Split::test);
  out.centroids = std::move(centroids);
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

[[noreturn]] void row_error(const std::filesystem::path& path, std::size_t line, const std::string& msg) {
  throw std::invalid_argument(path.string() + ": line " + std::to_string(line) + ": " + msg);
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, Split split, std::optional<std::size_t> classes) {
  const std::string text = io::read_text(path);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0, width = 0;
  std::vector<double> x;
  std::vector<std::size_t> labels;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (lineno == 1 && fields.back() == "label") continue;
    if (fields.size() < 2) row_error(path, lineno, "need at least one feature and a label");
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      row_error(path, lineno,
                "ragged row: " + std::to_string(fields.size()) + " fields, expected " + std::to_string(width));
    }
    for (std::size_t k = 0; k + 1 < fields.size(); ++k) {
      double v = 0;
      const auto f = fields[k];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || f.empty())
        row_error(path, lineno, "non-numeric cell '" + std::string(f) + "' in column " + std::to_string(k));
      if (!(v >= 0.0 && v <= 1.0)) row_error(path, lineno, "feature in column " + std::to_string(k) + " outside [0, 1]");
      x.push_back(v);
    }
    const auto lf = fields.back();
    long long label = -1;
    const auto [ptr, ec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (ec != std::errc() || ptr != lf.data() + lf.size() || lf.empty())
      row_error(path, lineno, "label '" + std::string(lf) + "' is not an integer");
    if (label < 0) row_error(path, lineno, "negative label");
    if (classes && static_cast<std::size_t>(label) >= *classes)
      row_error(path, lineno, "label " + std::to_string(label) + " outside [0, " + std::to_string(*classes) + ")");
    labels.push_back(static_cast<std::size_t>(label));
  }
  if (labels.empty()) throw std::invalid_argument(path.string() + ": no data rows");
  Dataset d;
  d.features = Tensor::matrix(labels.size(), width - 1, std::move(x));
  d.classes = classes ? *classes : *std::max_element(labels.begin(), labels.end()) + 1;
  d.labels = std::move(labels);
  d.split = split;
  d.validate();
  return d;
}

std::string to_csv(const Dataset& d) {
  d.validate();
  std::string out;
  for (std::size_t k = 0; k < d.dim(); ++k) out += "x" + std::to_string(k) + ",";
  out += "label\n";
  for (std::size_t r = 0; r < d.size(); ++r) {
    for (double v : d.features.row(r)) {
      out += io::format_double(v);
      out += ',';
    }
    out += std::to_string(d.labels[r]);
    out += '\n';
  }
  return out;
}

void write_csv(const Dataset& d, const std::filesystem::path& path) { io::write_atomic(path, to_csv(d)); }

}  // namespace spikekd::data
