#include <random>
#include <stdexcept>

#include "doctest.h"
#include "spikekd/energy.hpp"

using namespace spikekd;
using namespace spikekd::energy;

namespace {

LayerTrace random_layer(std::mt19937_64& rng, std::size_t samples, std::size_t T, std::size_t N, double p) {
  std::bernoulli_distribution spike(p);
  std::uniform_int_distribution<std::uint64_t> fan(0, 12);
  LayerTrace l;
  l.samples = samples;
  l.timesteps = T;
  for (std::size_t i = 0; i < N; ++i) l.fanout.push_back(fan(rng));
  for (std::size_t k = 0; k < samples * T * N; ++k) l.spikes.push_back(spike(rng) ? 1 : 0);
  return l;
}

std::uint64_t brute_acs(const SpikeTrace& tr) {
  std::uint64_t n = 0;
  for (const auto& l : tr.layers)
    for (std::size_t s = 0; s < l.samples; ++s)
      for (std::size_t t = 0; t < l.timesteps; ++t)
        for (std::size_t i = 0; i < l.neurons(); ++i) n += l.fanout[i] * l.at(s, t, i);
  return n;
}

}  // namespace

TEST_CASE("count_acs examples") {
  LayerTrace none{{4, 4}, 1, 3, std::vector<std::uint8_t>(6, 0)};
  CHECK(count_acs(SpikeTrace{{none}}) == 0);

  LayerTrace one{{7}, 1, 5, {1, 0, 1, 0, 1}};
  CHECK(count_acs(SpikeTrace{{one}}) == 21);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    SpikeTrace tr;
    for (int l = 0; l < 3; ++l) tr.layers.push_back(random_layer(rng, 2, 4, 5 + l, 0.3));
    CHECK(count_acs(tr) == brute_acs(tr));
  }
}

TEST_CASE("count_acs is monotone and bounded") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    LayerTrace l = random_layer(rng, 1, 6, 8, 0.4);
    const auto base = count_acs(l);
    for (auto& s : l.spikes)
      if (!s) {
        s = 1;
        break;
      }
    CHECK(count_acs(l) >= base);
    CHECK(count_acs(l) <= count_macs(Topology{{l.fanout}}) * l.timesteps);
    for (auto& s : l.spikes) s = 0;
    CHECK(count_acs(l) == 0);
  }
}

TEST_CASE("count_macs and sop") {
  CHECK(count_macs(Topology{}) == 0);
  CHECK(count_macs(Topology{{{3, 3}, {2}}}) == 8);
  CHECK(sop(100, 10) == 136.0);
  CHECK(sop(0, 0) == 0.0);
  CHECK(sop(200, 20) == 2 * sop(100, 10));
  CHECK(sop(3, 0, {1.5, 2.0}) == 4.5);
  CHECK_THROWS_AS(sop(1, 1, {0.0, 4.6}), std::invalid_argument);
  CHECK_THROWS_AS(sop(-1, 1), std::invalid_argument);
}

TEST_CASE("fire_rate") {
  LayerTrace ones{{1, 1}, 2, 5, std::vector<std::uint8_t>(20, 1)};
  LayerTrace zeros{{1, 1}, 2, 5, std::vector<std::uint8_t>(20, 0)};
  CHECK(fire_rate(SpikeTrace{{ones}}) == 1.0);
  CHECK(fire_rate(SpikeTrace{{zeros}}) == 0.0);
  zeros.spikes[1] = zeros.spikes[7] = zeros.spikes[19] = 1;
  CHECK(fire_rate(SpikeTrace{{zeros}}) == 0.15);
  CHECK_THROWS_AS(fire_rate(SpikeTrace{}), std::invalid_argument);
  LayerTrace bad{{1}, 1, 2, {1, 2}};
  CHECK_THROWS_AS(count_acs(bad), std::invalid_argument);
}

TEST_CASE("live trace matches an offline recount") {
  const std::vector<std::size_t> widths{6, 9, 7, 3};
  snn::LIFParams lif;
  lif.v_threshold = 0.3;
  auto net = snn::make_spiking_net(widths, 5, lif, 3);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor x({4, 6});
  for (auto& v : x.data()) v = u(rng);
  const auto enc = snn::encode_input(x, snn::Encoding::constant_current, 5, 0);

  snn::SpikeRecord rec;
  ad::Tape tape;
  snn::forward_temporal(tape, net, bind_layers(tape, net.layers), enc, {.spike = {}, .record = &rec});
  const SpikeTrace live = trace_from_record(net, rec);

  // Offline re-simulation with lif_step and hand-rolled affine maps.
  std::uint64_t acs = 0, spikes = 0, slots = 0;
  std::vector<snn::LIFState> state(2);
  for (std::size_t l = 0; l < 2; ++l) state[l].membrane = Tensor({4, widths[l + 1]});
  for (std::size_t t = 0; t < 5; ++t) {
    Tensor in = enc[t];
    for (std::size_t l = 0; l < 2; ++l) {
      const auto& L = net.layers[l];
      Tensor cur({4, L.out()});
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t j = 0; j < L.out(); ++j) {
          double s = L.bias[j];
          for (std::size_t i = 0; i < L.in(); ++i) s += in.at(b, i) * L.weight.at(i, j);
          cur.at(b, j) = s;
        }
      auto step = snn::lif_step(state[l], cur, lif);
      state[l] = step.state;
      for (double v : step.spikes.values()) {
        spikes += static_cast<std::uint64_t>(v);
        acs += static_cast<std::uint64_t>(v) * widths[l + 2];
        ++slots;
      }
      in = step.spikes;
    }
  }
  CHECK(spikes > 0);
  CHECK(count_acs(live) == acs);
  CHECK(fire_rate(live) == static_cast<double>(spikes) / static_cast<double>(slots));
  CHECK(count_macs(mac_topology(net)) == 6 * 9);

  const auto report = energy_report(live, mac_topology(net));
  CHECK(report.samples == 4);
  CHECK(report.acs == static_cast<double>(acs) / 4);
  CHECK(report.sop_pj == sop(report.acs, report.macs));
  const auto j = to_json(report, EnergyModel{});
  CHECK(j.at("sop_pj").get<double>() == 0.9 * j.at("acs").get<double>() + 4.6 * j.at("macs").get<double>());
  CHECK(j.at("per_layer").size() == 2);
}
