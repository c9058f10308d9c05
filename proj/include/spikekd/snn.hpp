#pragma once

// Leaky integrate-and-fire dynamics and the time-unrolled spiking classifier.
//
// Per timestep each hidden neuron integrates v = leak_alpha * u + I, fires
// s = 1 iff v >= v_threshold, and soft-resets u' = v - v_threshold * s.
// Membranes start at zero. The final affine layer is a non-spiking readout
// that turns the last hidden spike vector into real-valued logits.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "spikekd/autodiff.hpp"
#include "spikekd/layers.hpp"
#include "spikekd/tensor.hpp"

namespace spikekd::snn {

struct LIFParams {
  double leak_alpha = 0.5;
  double v_threshold = 1.0;
  double surrogate_width = 1.0;

  void validate() const;
  friend bool operator==(const LIFParams&, const LIFParams&) = default;
};

struct LIFState {
  Tensor membrane;
};

struct LifStepResult {
  Tensor spikes;
  LIFState state;
};

/// One recurrence step on plain values.
LifStepResult lif_step(const LIFState& state, const Tensor& input_current, const LIFParams& params);

/// Rectangular surrogate: (1/width) on |x| < width/2, else 0.
double surrogate_derivative(double x, double width);

/// Heaviside forward (x >= 0 fires), rectangular surrogate backward.
ad::Var surrogate_spike(const ad::Var& v_minus_threshold, double width);

/// Spike nonlinearity used inside the unroll. Tests swap in smooth stand-ins.
using SpikeFn = std::function<ad::Var(const ad::Var& v_minus_threshold, double width)>;

struct SpikingNet {
  std::vector<AffineLayer> layers;  // hidden LIF layers then the readout
  std::size_t timesteps = 4;
  LIFParams lif;

  std::size_t input_dim() const { return layers.front().in(); }
  std::size_t classes() const { return layers.back().out(); }
  std::size_t hidden_layers() const { return layers.size() - 1; }
  void validate() const;

  friend bool operator==(const SpikingNet&, const SpikingNet&) = default;
};

/// widths = {input, hidden..., classes}.
SpikingNet make_spiking_net(std::span<const std::size_t> widths, std::size_t timesteps, const LIFParams& lif,
                            std::uint64_t seed);

/// Student logits per sample: values has shape (batch x T x C).
struct TemporalLogits {
  Tensor values;

  std::size_t batch() const { return values.dim(0); }
  std::size_t timesteps() const { return values.dim(1); }
  std::size_t classes() const { return values.dim(2); }
  std::span<const double> at(std::size_t b, std::size_t t) const {
    return values.data().subspan((b * timesteps() + t) * classes(), classes());
  }
  /// (T x C) slice for one sample.
  Tensor sample(std::size_t b) const;
};

/// One graph node per timestep, each (batch x C).
using TemporalVars = std::vector<ad::Var>;

TemporalLogits collect(const TemporalVars& steps);
/// Leaf per timestep from stored values.
TemporalVars bind_logits(ad::Tape& tape, const TemporalLogits& logits);

/// spikes[layer][t] is the (batch x N_layer) spike matrix of hidden layer `layer`.
struct SpikeRecord {
  std::vector<std::vector<Tensor>> spikes;
};

struct ForwardOptions {
  SpikeFn spike;                    // defaults to surrogate_spike
  SpikeRecord* record = nullptr;    // filled when set
};

/// `encoded` holds one (batch x D) current per timestep; its length must equal net.timesteps.
TemporalVars forward_temporal(ad::Tape& tape, const SpikingNet& net, const BoundLayers& params,
                              std::span<const Tensor> encoded, const ForwardOptions& options = {});

/// Forward pass without keeping the tape.
TemporalLogits forward_values(const SpikingNet& net, std::span<const Tensor> encoded, SpikeRecord* record = nullptr);

/// Mean over the time axis: (T x C) -> (C), or (B x T x C) -> (B x C).
Tensor aggregate_logits(const Tensor& logits);
ad::Var aggregate(const TemporalVars& steps);

enum class Encoding { constant_current, rate_poisson };
Encoding parse_encoding(const std::string& name);
const char* encoding_name(Encoding e);

/// samples: (batch x D) or (D). Returns `timesteps` tensors shaped (batch x D).
std::vector<Tensor> encode_input(const Tensor& samples, Encoding mode, std::size_t timesteps, std::uint64_t seed);

// Checkpoint document:
// {"kind": "snn", "timesteps": T,
//  "lif": {"leak_alpha": a, "v_threshold": v, "surrogate_width": w},
//  "layers": [ ...see layers_to_json... ]}
nlohmann::json to_json(const SpikingNet& net);
SpikingNet spiking_net_from_json(const nlohmann::json& j);

}  // namespace spikekd::snn
