#pragma once

// Layer-wise gradient statistics of the distillation objectives and
// per-timestep accuracy analytics for a trained spiking student.
//
// Per-layer gradients are taken with respect to each affine layer's weight
// matrix (biases excluded). Every statistic looks at a single timestep t, so
// losses are restricted to their timestep-t term.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spikekd/losses.hpp"
#include "spikekd/snn.hpp"

namespace spikekd::diag {

enum class TimestepCondition { erroneous, weak, correct };
const char* condition_name(TimestepCondition c);

/// Erroneous: argmax != label. Weak: correct with a margin strictly below the
/// median margin over all correct (sample, timestep) entries. Correct: the rest.
struct ConditionMap {
  std::size_t batch = 0;
  std::size_t timesteps = 0;
  std::vector<TimestepCondition> condition;
  std::vector<double> margin;  // z[label] - z[top false class]
  double median_correct_margin = 0.0;

  TimestepCondition at(std::size_t b, std::size_t t) const { return condition[b * timesteps + t]; }
  double margin_at(std::size_t b, std::size_t t) const { return margin[b * timesteps + t]; }
};
ConditionMap classify_timesteps(const snn::TemporalLogits& logits, std::span<const std::size_t> labels);

/// One sample presented to the network: its encoded input steps, label and
/// (for distilled methods) teacher logits.
struct Probe {
  std::vector<Tensor> encoded;  // T tensors of shape (1 x D)
  std::size_t label = 0;
  Tensor teacher;               // (1 x C); empty for ce-only
};

/// Per-layer values; std::nullopt where the statistic is undefined.
using LayerValues = std::vector<std::optional<double>>;

/// (D_true + D_false) / (D_true + D_false + D_rest), with D_x = |<grad L_align, grad x>|
/// and x the truth logit, the false logit and the mean of the remaining logits.
/// L_align is the ELA term for methods that use ELA, the KD term otherwise.
LayerValues pair_share(const snn::SpikingNet& net, const Probe& probe, std::size_t t,
                       const distill::DistillConfig& config);

/// Cosine between grad L_temporal and grad (m_t - m_ref)^2 where
/// m_ref = sum_{t' != t} w[t, t'] m_{t'} is held constant. L_temporal is the
/// STA (or UTA) term for methods with temporal alignment, the KD term otherwise.
LayerValues ref_align(const snn::SpikingNet& net, const Probe& probe, std::size_t t,
                      const distill::DistillConfig& config);

/// ||grad L_distill|| / ||grad L_cls|| at timestep t, where L_distill is the
/// method's weighted non-classification part of the objective.
LayerValues kd_ratio(const snn::SpikingNet& net, const Probe& probe, std::size_t t,
                     const distill::DistillConfig& config);

struct LayerStat {
  std::size_t layer = 0;
  std::vector<std::optional<double>> values;  // one per probed (sample, timestep)
  std::size_t defined = 0;
  std::optional<double> mean;
  std::optional<double> std;  // population standard deviation of the defined values
};

/// Combines per-probe LayerValues into one LayerStat per layer.
std::vector<LayerStat> summarize(const std::vector<LayerValues>& per_probe);

struct TemporalAccuracyReport {
  std::vector<double> per_timestep;
  double aggregated = 0.0;
  std::size_t samples = 0;
  std::size_t finally_correct = 0;
  /// histogram[k]: finally-correct samples with exactly k correct timesteps, k in [0, T].
  std::vector<std::size_t> histogram;
  /// Share of finally-correct samples with at least one erroneous timestep.
  double with_erroneous_fraction = 0.0;
};
TemporalAccuracyReport temporal_accuracy_report(const snn::TemporalLogits& logits,
                                                std::span<const std::size_t> labels);
nlohmann::json to_json(const TemporalAccuracyReport& r);

struct DiagnosticsSettings {
  std::size_t samples = 5;
  std::uint64_t seed = 0;
};

struct StatisticReport {
  std::string statistic;  // "pair_share", "ref_align" or "kd_ratio"
  TimestepCondition condition = TimestepCondition::erroneous;
  std::vector<std::pair<std::size_t, std::size_t>> probes;  // (sample, timestep)
  std::vector<LayerStat> layers;
};

struct DiagnosticsReport {
  std::string method;
  std::vector<StatisticReport> statistics;
  TemporalAccuracyReport accuracy;
};

/// Picks `samples` (sample, timestep) pairs per condition uniformly at random
/// with a seeded generator and evaluates the matching statistic on each.
/// `encoded` holds the dataset's encoded steps, one (N x D) tensor per timestep.
DiagnosticsReport run_diagnostics(const snn::SpikingNet& net, std::span<const Tensor> encoded,
                                  std::span<const std::size_t> labels, const Tensor& teacher_logits,
                                  const distill::DistillConfig& config, const DiagnosticsSettings& settings);

/// JSONL records: one per (statistic, layer), then one accuracy record.
///   {"record": "layer_stat", "method", "statistic", "condition", "layer",
///    "mean", "std", "defined", "values": [...], "probes": [[sample, t], ...]}
///   {"record": "temporal_accuracy", "method", "per_timestep_accuracy", ...}
/// Undefined values are written as null.
std::vector<nlohmann::json> to_jsonl(const DiagnosticsReport& r);

/// CSV: header `timestep,0,1,...,C-1`, then one row per timestep.
std::string heatmap_csv(const Tensor& logits_tc);
void export_logit_heatmap(const Tensor& logits_tc, const std::filesystem::path& path);
Tensor read_logit_heatmap(const std::filesystem::path& path);

}  // namespace spikekd::diag
