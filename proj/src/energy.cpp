#include "spikekd/energy.hpp"

#include <stdexcept>
#include <string>

namespace spikekd::energy {

void EnergyModel::validate() const {
  if (!(e_ac > 0) || !(e_mac > 0)) throw std::invalid_argument("energy: e_ac and e_mac must be > 0");
}

void LayerTrace::validate() const {
  if (spikes.size() != samples * timesteps * neurons()) {
    throw std::invalid_argument("energy: layer trace holds " + std::to_string(spikes.size()) + " entries, expected " +
                                std::to_string(samples * timesteps * neurons()));
  }
  for (auto s : spikes)
    if (s > 1) throw std::invalid_argument("energy: spikes must be 0 or 1");
}

std::uint64_t count_spikes(const LayerTrace& layer) {
  layer.validate();
  std::uint64_t n = 0;
  for (auto s : layer.spikes) n += s;
  return n;
}

std::uint64_t count_acs(const LayerTrace& layer) {
  layer.validate();
  const std::size_t N = layer.neurons();
  std::uint64_t total = 0;
  for (std::size_t k = 0; k < layer.spikes.size(); ++k)
    if (layer.spikes[k]) total += layer.fanout[k % N];
  return total;
}

std::uint64_t count_acs(const SpikeTrace& trace) {
  std::uint64_t total = 0;
  for (const auto& l : trace.layers) total += count_acs(l);
  return total;
}

std::uint64_t count_macs(const Topology& topology) {
  std::uint64_t total = 0;
  for (const auto& layer : topology.fanout)
    for (auto f : layer) total += f;
  return total;
}

double sop(double ac, double mac, const EnergyModel& model) {
  model.validate();
  if (ac < 0 || mac < 0) throw std::invalid_argument("sop: counts must be >= 0");
  return model.e_ac * ac + model.e_mac * mac;
}

double fire_rate(const LayerTrace& layer) {
  if (layer.spikes.empty()) throw std::invalid_argument("fire_rate: empty trace");
  return static_cast<double>(count_spikes(layer)) / static_cast<double>(layer.spikes.size());
}

double fire_rate(const SpikeTrace& trace) {
  std::uint64_t spikes = 0, slots = 0;
  for (const auto& l : trace.layers) {
    spikes += count_spikes(l);
    slots += l.spikes.size();
  }
  if (slots == 0) throw std::invalid_argument("fire_rate: empty trace");
  return static_cast<double>(spikes) / static_cast<double>(slots);
}

SpikeTrace trace_from_record(const snn::SpikingNet& net, const snn::SpikeRecord& record) {
  if (record.spikes.size() != net.hidden_layers()) {
    throw std::invalid_argument("trace_from_record: record has " + std::to_string(record.spikes.size()) +
                                " layers, network has " + std::to_string(net.hidden_layers()) + " hidden layers");
  }
  SpikeTrace trace;
  for (std::size_t l = 0; l < record.spikes.size(); ++l) {
    const auto& steps = record.spikes[l];
    LayerTrace lt;
    const std::size_t N = net.layers[l].out();
    lt.fanout.assign(N, net.layers[l + 1].out());
    lt.timesteps = steps.size();
    lt.samples = steps.empty() ? 0 : steps.front().rows();
    lt.spikes.resize(lt.samples * lt.timesteps * N);
    for (std::size_t t = 0; t < lt.timesteps; ++t) {
      const Tensor& s = steps[t];
      if (s.rows() != lt.samples || s.cols() != N) {
        throw std::invalid_argument("trace_from_record: spike matrix " + shape_string(s.shape()) + " at layer " +
                                    std::to_string(l) + " does not match the network");
      }
      for (std::size_t b = 0; b < lt.samples; ++b)
        for (std::size_t i = 0; i < N; ++i) {
          const double v = s.at(b, i);
          if (v != 0.0 && v != 1.0) throw std::invalid_argument("trace_from_record: non-binary spike value");
          lt.spikes[(b * lt.timesteps + t) * N + i] = static_cast<std::uint8_t>(v);
        }
    }
    trace.layers.push_back(std::move(lt));
  }
  return trace;
}

Topology mac_topology(const snn::SpikingNet& net) {
  const AffineLayer& first = net.layers.front();
  return Topology{{std::vector<std::uint64_t>(first.in(), first.out())}};
}

EnergyReport energy_report(const SpikeTrace& trace, const Topology& topology, const EnergyModel& model) {
  EnergyReport r;
  if (trace.layers.empty()) throw std::invalid_argument("energy_report: trace has no spiking layers");
  r.samples = trace.layers.front().samples;
  r.timesteps = trace.layers.front().timesteps;
  if (r.samples == 0) throw std::invalid_argument("energy_report: trace has no samples");
  for (const auto& l : trace.layers)
    if (l.samples != r.samples || l.timesteps != r.timesteps)
      throw std::invalid_argument("energy_report: layers disagree on samples or timesteps");

  const double n = static_cast<double>(r.samples);
  r.acs = static_cast<double>(count_acs(trace)) / n;
  r.macs = static_cast<double>(count_macs(topology));
  r.sop_pj = sop(r.acs, r.macs, model);
  r.fire_rate = fire_rate(trace);
  for (std::size_t l = 0; l < trace.layers.size(); ++l) {
    const auto& lt = trace.layers[l];
    r.per_layer.push_back({l, lt.neurons(), static_cast<double>(count_acs(lt)) / n, fire_rate(lt)});
  }
  return r;
}

nlohmann::json to_json(const EnergyReport& r, const EnergyModel& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.per_layer)
    layers.push_back({{"layer", l.layer}, {"neurons", l.neurons}, {"acs", l.acs}, {"fire_rate", l.fire_rate}});
  return {{"acs", r.acs},
          {"macs", r.macs},
          {"sop_pj", r.sop_pj},
          {"fire_rate", r.fire_rate},
          {"samples", r.samples},
          {"timesteps", r.timesteps},
          {"counts", "per-sample average"},
          {"e_ac_pj", model.e_ac},
          {"e_mac_pj", model.e_mac},
          {"per_layer", layers}};
}

}  // namespace spikekd::energy
