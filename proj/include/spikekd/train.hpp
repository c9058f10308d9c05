#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "spikekd/data.hpp"
#include "spikekd/layers.hpp"
#include "spikekd/losses.hpp"
#include "spikekd/snn.hpp"

namespace spikekd::train {

struct TrainPlan {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool cosine = true;
  std::uint64_t seed = 0;

  void validate() const;
};

TrainPlan plan_from_json(const nlohmann::json& j, std::uint64_t seed);
nlohmann::json to_json(const TrainPlan& p);

/// Half-period cosine from `base` at step 0 down to 0 at the last step.
/// Constant when `cosine` is false.
double cosine_lr(double base, std::size_t step, std::size_t total_steps, bool cosine = true);

/// v <- momentum * v + lr * (g + weight_decay * x);  x <- x - v
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);
  const std::vector<Tensor>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocity_;
};

/// Weight and bias of every layer, in that order.
std::vector<Tensor*> parameters(std::vector<AffineLayer>& layers);

// ---------------------------------------------------------------------------
// Teacher: a ReLU multilayer perceptron over the raw features.

struct Mlp {
  std::vector<AffineLayer> layers;

  std::size_t input_dim() const { return layers.front().in(); }
  std::size_t classes() const { return layers.back().out(); }
  friend bool operator==(const Mlp&, const Mlp&) = default;
};

Mlp make_mlp(std::span<const std::size_t> widths, std::uint64_t seed);
ad::Var mlp_forward(const BoundLayers& params, const ad::Var& x);
/// (N x D) -> (N x C).
Tensor mlp_logits(const Mlp& net, const Tensor& x);

// {"kind": "mlp", "layers": [...]}
nlohmann::json to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);

struct TeacherEpoch {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;  // mean cross-entropy over the train set after the epoch
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
};

nlohmann::json to_json(const TeacherEpoch& e);

struct TeacherResult {
  Mlp net;
  std::vector<TeacherEpoch> metrics;
};

/// Mini-batch momentum SGD on cross-entropy. Throws std::runtime_error naming
/// the epoch when the loss stops being finite.
TeacherResult train_teacher(const data::Dataset& train, const TrainPlan& plan, std::span<const std::size_t> widths,
                            const data::Dataset* test = nullptr);

double accuracy(const Tensor& logits, std::span<const std::size_t> labels);

/// One JSON record per line: {"index": i, "logits": [...]}.
std::string teacher_logits_jsonl(const Tensor& logits);
void export_teacher_logits(const Tensor& logits, const std::filesystem::path& path);
/// An empty file yields a (0 x 0) tensor.
Tensor import_teacher_logits(const std::filesystem::path& path, std::optional<std::size_t> expected_count = {},
                             std::optional<std::size_t> expected_classes = {});

// ---------------------------------------------------------------------------
// Student.

struct StudentOptions {
  snn::Encoding encoding = snn::Encoding::constant_current;
  std::size_t eval_batch = 256;
  /// Keep a copy of the weights every this many epochs (0 keeps none).
  std::size_t checkpoint_every = 0;
};

struct LossSummary {
  double total = 0.0;
  double cls = 0.0;
  double kd = 0.0;
  double ela = 0.0;
  double sta = 0.0;
};

struct AccuracySummary {
  std::vector<double> per_timestep;
  double aggregated = 0.0;
};

AccuracySummary temporal_accuracy(const snn::TemporalLogits& logits, std::span<const std::size_t> labels);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;  // rate used by the last step of the epoch
  LossSummary loss;  // over the full train set, after the epoch
  AccuracySummary train;
  std::optional<AccuracySummary> test;
};

nlohmann::json to_json(const EpochMetrics& m);

struct Checkpoint {
  std::size_t epoch = 0;
  snn::SpikingNet net;
};

struct StudentResult {
  snn::SpikingNet net;
  std::vector<EpochMetrics> metrics;
  std::vector<Checkpoint> checkpoints;
};

/// Seed used to encode evaluation batch `batch` under rate coding.
std::uint64_t eval_seed(std::uint64_t seed, std::size_t batch);

/// Logits for every sample, in dataset order.
snn::TemporalLogits predict(const snn::SpikingNet& net, const data::Dataset& d, snn::Encoding encoding,
                            std::uint64_t seed, std::size_t eval_batch = 256, snn::SpikeRecord* record = nullptr);

/// Sample-weighted mean of the objective over the dataset with fixed weights.
LossSummary evaluate_objective(const snn::SpikingNet& net, const data::Dataset& d, const Tensor& teacher_logits,
                               const distill::DistillConfig& config, snn::Encoding encoding, std::uint64_t seed,
                               std::size_t eval_batch = 256);

/// `teacher_logits` holds one row per training sample; it may be empty when
/// the method needs no teacher. Throws std::runtime_error on a non-finite loss.
StudentResult train_student(const data::Dataset& train, const Tensor& teacher_logits, snn::SpikingNet init,
                            const TrainPlan& plan, const distill::DistillConfig& config,
                            const StudentOptions& options = {}, const data::Dataset* test = nullptr);

}  // namespace spikekd::train
