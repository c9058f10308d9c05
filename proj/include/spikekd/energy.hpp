#pragma once

// Synaptic-operation energy accounting. Spiking layers cost one accumulate
// per activated outgoing synapse; the analog first layer costs one
// multiply-accumulate per connection.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "spikekd/snn.hpp"

namespace spikekd::energy {

struct EnergyModel {
  double e_ac = 0.9;   // pJ per accumulate
  double e_mac = 4.6;  // pJ per multiply-accumulate

  void validate() const;
};

/// Spikes of one layer, laid out (samples x timesteps x neurons), each 0 or 1.
struct LayerTrace {
  std::vector<std::uint64_t> fanout;  // one entry per neuron
  std::size_t samples = 0;
  std::size_t timesteps = 0;
  std::vector<std::uint8_t> spikes;

  std::size_t neurons() const { return fanout.size(); }
  std::uint8_t at(std::size_t s, std::size_t t, std::size_t i) const {
    return spikes[(s * timesteps + t) * neurons() + i];
  }
  void validate() const;
};

struct SpikeTrace {
  std::vector<LayerTrace> layers;
};

/// Fan-outs of the connections counted as MACs, one vector per layer.
struct Topology {
  std::vector<std::vector<std::uint64_t>> fanout;
};

std::uint64_t count_acs(const SpikeTrace& trace);
std::uint64_t count_acs(const LayerTrace& layer);
std::uint64_t count_macs(const Topology& topology);
std::uint64_t count_spikes(const LayerTrace& layer);

/// e_ac * ac + e_mac * mac. Counts may be per-sample averages.
double sop(double ac, double mac, const EnergyModel& model = {});

/// Spikes over neuron-timesteps, pooled across layers. Throws on an empty trace.
double fire_rate(const SpikeTrace& trace);
double fire_rate(const LayerTrace& layer);

/// Hidden layer l fans out to every neuron of layer l + 1.
SpikeTrace trace_from_record(const snn::SpikingNet& net, const snn::SpikeRecord& record);
/// The first affine layer: input_dim neurons, each fanning out to its output width.
Topology mac_topology(const snn::SpikingNet& net);

struct LayerEnergy {
  std::size_t layer = 0;
  std::size_t neurons = 0;
  double acs = 0.0;  // per sample
  double fire_rate = 0.0;
};

/// AC counts are averaged over samples. MACs do not depend on the input.
struct EnergyReport {
  std::size_t samples = 0;
  std::size_t timesteps = 0;
  double acs = 0.0;
  double macs = 0.0;
  double sop_pj = 0.0;
  double fire_rate = 0.0;
  std::vector<LayerEnergy> per_layer;
};

EnergyReport energy_report(const SpikeTrace& trace, const Topology& topology, const EnergyModel& model = {});

// {"acs", "macs", "sop_pj", "fire_rate", "samples", "timesteps",
//  "counts": "per-sample average", "e_ac_pj", "e_mac_pj",
//  "per_layer": [{"layer", "neurons", "acs", "fire_rate"}]}
nlohmann::json to_json(const EnergyReport& report, const EnergyModel& model);

}  // namespace spikekd::energy
