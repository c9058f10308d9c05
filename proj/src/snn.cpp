#include "spikekd/snn.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace spikekd::snn {

void LIFParams::validate() const {
  if (!(leak_alpha > 0.0 && leak_alpha < 1.0)) throw std::invalid_argument("leak_alpha must lie in (0, 1)");
  if (!(v_threshold > 0.0)) throw std::invalid_argument("v_threshold must be > 0");
  if (!(surrogate_width > 0.0)) throw std::invalid_argument("surrogate_width must be > 0");
}

LifStepResult lif_step(const LIFState& state, const Tensor& input_current, const LIFParams& params) {
  require_same_shape(state.membrane, input_current, "lif_step");
  if (!input_current.all_finite()) throw std::invalid_argument("lif_step: non-finite input current");
  LifStepResult r{Tensor(input_current.shape()), LIFState{Tensor(input_current.shape())}};
  for (std::size_t i = 0; i < input_current.size(); ++i) {
    const double v = params.leak_alpha * state.membrane[i] + input_current[i];
    const double s = v >= params.v_threshold ? 1.0 : 0.0;
    r.spikes[i] = s;
    r.state.membrane[i] = v - params.v_threshold * s;
  }
  return r;
}

double surrogate_derivative(double x, double width) { return std::abs(x) < width / 2.0 ? 1.0 / width : 0.0; }

ad::Var surrogate_spike(const ad::Var& x, double width) {
  if (!(width > 0.0)) throw std::invalid_argument("surrogate_spike: width must be > 0");
  ad::Tape& tape = *x.tape();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] >= 0.0 ? 1.0 : 0.0;
  const std::size_t ix = x.id();
  return tape.record(std::move(out), "spike", [ix, width, &tape](const Tensor& g, ad::GradSink& sink) {
    auto xv = tape.value(ix).data();
    auto gx = sink.at(ix).data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * surrogate_derivative(xv[i], width);
  });
}

void SpikingNet::validate() const {
  check_chain(layers);
  if (timesteps < 1) throw std::invalid_argument("timesteps must be >= 1");
  if (classes() < 2) throw std::invalid_argument("network must emit at least 2 classes");
  lif.validate();
}

SpikingNet make_spiking_net(std::span<const std::size_t> widths, std::size_t timesteps, const LIFParams& lif,
                            std::uint64_t seed) {
  SpikingNet net{init_layers(widths, seed), timesteps, lif};
  net.validate();
  return net;
}

Tensor TemporalLogits::sample(std::size_t b) const {
  const std::size_t n = timesteps() * classes();
  auto src = values.data().subspan(b * n, n);
  return Tensor(Shape{timesteps(), classes()}, std::vector<double>(src.begin(), src.end()));
}

TemporalLogits collect(const TemporalVars& steps) {
  if (steps.empty()) throw std::invalid_argument("collect: no timesteps");
  const Tensor& first = steps.front().value();
  const std::size_t B = first.rows(), C = first.cols(), T = steps.size();
  Tensor out(Shape{B, T, C});
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor& z = steps[t].value();
    if (z.rows() != B || z.cols() != C) throw std::invalid_argument("collect: timesteps disagree in shape");
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) out[(b * T + t) * C + c] = z.at(b, c);
  }
  return TemporalLogits{std::move(out)};
}

TemporalVars bind_logits(ad::Tape& tape, const TemporalLogits& logits) {
  const std::size_t B = logits.batch(), T = logits.timesteps(), C = logits.classes();
  TemporalVars steps;
  for (std::size_t t = 0; t < T; ++t) {
    Tensor z(Shape{B, C});
    for (std::size_t b = 0; b < B; ++b) {
      auto row = logits.at(b, t);
      for (std::size_t c = 0; c < C; ++c) z.at(b, c) = row[c];
    }
    steps.push_back(tape.leaf(std::move(z)));
  }
  return steps;
}

TemporalVars forward_temporal(ad::Tape& tape, const SpikingNet& net, const BoundLayers& params,
                              std::span<const Tensor> encoded, const ForwardOptions& options) {
  if (net.timesteps < 1) throw std::invalid_argument("forward_temporal: timesteps must be >= 1");
  if (encoded.size() != net.timesteps) {
    throw std::invalid_argument("forward_temporal: got " + std::to_string(encoded.size()) + " input steps for T=" +
                                std::to_string(net.timesteps));
  }
  const SpikeFn spike = options.spike ? options.spike : SpikeFn(surrogate_spike);
  const std::size_t hidden = net.hidden_layers();
  const LIFParams& lif = net.lif;
  if (options.record) options.record->spikes.assign(hidden, {});

  std::vector<ad::Var> membrane(hidden);
  TemporalVars logits;
  for (std::size_t t = 0; t < net.timesteps; ++t) {
    const Tensor& x = encoded[t];
    if (x.rank() != 2 || x.cols() != net.input_dim()) {
      throw std::invalid_argument("forward_temporal: input step " + std::to_string(t) + " has shape " +
                                  shape_string(x.shape()) + ", expected (batch x " + std::to_string(net.input_dim()) +
                                  ")");
    }
    ad::Var h = tape.constant(x);
    for (std::size_t l = 0; l < hidden; ++l) {
      ad::Var current = ad::add_row(ad::matmul(h, params.weights[l]), params.biases[l]);
      ad::Var v = t == 0 ? current : ad::add(ad::scale(membrane[l], lif.leak_alpha), current);
      ad::Var s = spike(ad::add_scalar(v, -lif.v_threshold), lif.surrogate_width);
      membrane[l] = ad::sub(v, ad::scale(s, lif.v_threshold));
      if (options.record) options.record->spikes[l].push_back(s.value());
      h = s;
    }
    logits.push_back(ad::add_row(ad::matmul(h, params.weights[hidden]), params.biases[hidden]));
  }
  return logits;
}

TemporalLogits forward_values(const SpikingNet& net, std::span<const Tensor> encoded, SpikeRecord* record) {
  ad::Tape tape;
  BoundLayers params = bind_layers(tape, net.layers);
  ForwardOptions opts;
  opts.record = record;
  return collect(forward_temporal(tape, net, params, encoded, opts));
}

Tensor aggregate_logits(const Tensor& logits) {
  if (logits.rank() == 2) {
    const std::size_t T = logits.dim(0), C = logits.dim(1);
    if (T == 0) throw std::invalid_argument("aggregate_logits: T must be >= 1");
    Tensor out(Shape{C});
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c) out[c] += logits.at(t, c);
    for (double& v : out.data()) v /= static_cast<double>(T);
    return out;
  }
  if (logits.rank() == 3) {
    const std::size_t B = logits.dim(0), T = logits.dim(1), C = logits.dim(2);
    if (T == 0) throw std::invalid_argument("aggregate_logits: T must be >= 1");
    Tensor out(Shape{B, C});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c) out.at(b, c) += logits[(b * T + t) * C + c];
    for (double& v : out.data()) v /= static_cast<double>(T);
    return out;
  }
  throw std::invalid_argument("aggregate_logits: expected (T x C) or (B x T x C), got " + shape_string(logits.shape()));
}

ad::Var aggregate(const TemporalVars& steps) {
  if (steps.empty()) throw std::invalid_argument("aggregate: T must be >= 1");
  ad::Var acc = steps.front();
  for (std::size_t t = 1; t < steps.size(); ++t) acc = ad::add(acc, steps[t]);
  return ad::scale(acc, 1.0 / static_cast<double>(steps.size()));
}

Encoding parse_encoding(const std::string& name) {
  if (name == "constant-current") return Encoding::constant_current;
  if (name == "rate-poisson") return Encoding::rate_poisson;
  throw std::invalid_argument("unknown encoding '" + name + "' (expected constant-current or rate-poisson)");
}

const char* encoding_name(Encoding e) {
  return e == Encoding::constant_current ? "constant-current" : "rate-poisson";
}

std::vector<Tensor> encode_input(const Tensor& samples, Encoding mode, std::size_t timesteps, std::uint64_t seed) {
  if (timesteps < 1) throw std::invalid_argument("encode_input: timesteps must be >= 1");
  const Tensor batch = samples.rank() == 1 ? samples.reshaped(Shape{1, samples.size()}) : samples;
  if (batch.rank() != 2) throw std::invalid_argument("encode_input: expected (batch x D), got " + shape_string(samples.shape()));
  if (mode == Encoding::constant_current) return std::vector<Tensor>(timesteps, batch);

  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!(batch[i] >= 0.0 && batch[i] <= 1.0)) {
      throw std::invalid_argument("encode_input: rate mode needs values in [0,1], entry " + std::to_string(i) +
                                  " is " + std::to_string(batch[i]));
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < timesteps; ++t) {
    Tensor step(batch.shape());
    // u in [0,1): p = 0 never fires, p = 1 always fires.
    for (std::size_t i = 0; i < step.size(); ++i) step[i] = u(rng) < batch[i] ? 1.0 : 0.0;
    out.push_back(std::move(step));
  }
  return out;
}

nlohmann::json to_json(const SpikingNet& net) {
  return {{"kind", "snn"},
          {"timesteps", net.timesteps},
          {"lif",
           {{"leak_alpha", net.lif.leak_alpha},
            {"v_threshold", net.lif.v_threshold},
            {"surrogate_width", net.lif.surrogate_width}}},
          {"layers", layers_to_json(net.layers)}};
}

SpikingNet spiking_net_from_json(const nlohmann::json& j) {
  if (j.value("kind", std::string()) != "snn") throw std::invalid_argument("checkpoint is not a spiking network");
  SpikingNet net;
  net.timesteps = j.at("timesteps").get<std::size_t>();
  const auto& lif = j.at("lif");
  net.lif.leak_alpha = lif.at("leak_alpha").get<double>();
  net.lif.v_threshold = lif.at("v_threshold").get<double>();
  net.lif.surrogate_width = lif.at("surrogate_width").get<double>();
  net.layers = layers_from_json(j.at("layers"));
  net.validate();
  return net;
}

}  // namespace spikekd::snn
