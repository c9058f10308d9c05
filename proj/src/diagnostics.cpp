#include "spikekd/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "spikekd/io.hpp"

namespace spikekd::diag {

using distill::Method;

const char* condition_name(TimestepCondition c) {
  switch (c) {
    case TimestepCondition::erroneous: return "erroneous";
    case TimestepCondition::weak: return "weak";
    case TimestepCondition::correct: return "correct";
  }
  return "?";
}

ConditionMap classify_timesteps(const snn::TemporalLogits& logits, std::span<const std::size_t> labels) {
  ConditionMap m;
  m.batch = logits.batch();
  m.timesteps = logits.timesteps();
  if (labels.size() != m.batch) throw std::invalid_argument("classify_timesteps: label count mismatch");
  std::vector<double> correct_margins;
  for (std::size_t b = 0; b < m.batch; ++b)
    for (std::size_t t = 0; t < m.timesteps; ++t) {
      const auto z = logits.at(b, t);
      const double mg = distill::margin(z, labels[b]);
      m.margin.push_back(mg);
      const bool ok = distill::argmax(z) == labels[b];
      m.condition.push_back(ok ? TimestepCondition::correct : TimestepCondition::erroneous);
      if (ok) correct_margins.push_back(mg);
    }
  if (!correct_margins.empty()) {
    std::sort(correct_margins.begin(), correct_margins.end());
    const std::size_t n = correct_margins.size();
    m.median_correct_margin =
        n % 2 ? correct_margins[n / 2] : 0.5 * (correct_margins[n / 2 - 1] + correct_margins[n / 2]);
    for (std::size_t k = 0; k < m.condition.size(); ++k)
      if (m.condition[k] == TimestepCondition::correct && m.margin[k] < m.median_correct_margin)
        m.condition[k] = TimestepCondition::weak;
  }
  return m;
}

namespace {

struct ProbeGraph {
  ad::Tape tape;
  BoundLayers params;
  snn::TemporalVars z;
  ad::Var teacher;
  std::vector<std::size_t> label;
};

void build(ProbeGraph& g, const snn::SpikingNet& net, const Probe& p, std::size_t t) {
  if (t >= net.timesteps) throw std::invalid_argument("diagnostics: timestep out of range");
  if (p.label >= net.classes()) throw std::invalid_argument("diagnostics: label out of range");
  g.params = bind_layers(g.tape, net.layers);
  g.z = snn::forward_temporal(g.tape, net, g.params, p.encoded);
  if (g.z.front().value().rows() != 1) throw std::invalid_argument("diagnostics: a probe holds exactly one sample");
  if (!p.teacher.empty()) g.teacher = g.tape.constant(p.teacher);
  g.label = {p.label};
}

bool uses_ela(Method m) { return m == Method::ela || m == Method::seal; }
bool uses_sta(Method m) { return m == Method::sta || m == Method::seal; }

ad::Var require_teacher(const ProbeGraph& g) {
  if (!g.teacher.valid()) throw std::invalid_argument("diagnostics: method needs teacher logits");
  return g.teacher;
}

std::vector<Tensor> layer_grads(const ProbeGraph& g, const ad::Var& scalar) {
  const auto grads = g.tape.backward(scalar);
  std::vector<Tensor> out;
  for (const auto& w : g.params.weights) out.push_back(grads[w]);
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

ad::Var logit(const ad::Var& z_t, std::size_t c) {
  const std::vector<std::size_t> r{0}, col{c};
  return ad::sum(ad::gather(z_t, r, col));
}

Tensor time_weights(const ProbeGraph& g, double tau, distill::StaVariant variant) {
  return distill::sta_weights(snn::collect(g.z), tau, variant);
}

// The method's teacher-alignment term at t.
std::optional<ad::Var> align_term(const ProbeGraph& g, std::size_t t, const distill::DistillConfig& c) {
  if (c.method == Method::ce_only) return std::nullopt;
  if (uses_ela(c.method)) return distill::ela_term(g.z[t], require_teacher(g), g.label, c.temperature, c.ela_variant);
  return distill::kd_term(g.z[t], require_teacher(g), c.temperature);
}

std::optional<ad::Var> temporal_term(ProbeGraph& g, std::size_t t, const distill::DistillConfig& c) {
  if (uses_sta(c.method)) {
    const ad::Var w = g.tape.constant(time_weights(g, c.sta_temperature, c.sta_variant));
    return distill::sta_term(g.z, t, w, c.sta_temperature);
  }
  if (c.method == Method::uta) {
    const ad::Var w = g.tape.constant(distill::uniform_weights(1, g.z.size()));
    return distill::sta_term(g.z, t, w, c.sta_temperature);
  }
  if (c.method == Method::ce_only) return std::nullopt;
  return distill::kd_term(g.z[t], require_teacher(g), c.temperature);
}

// Weighted non-classification part of the objective at t; nullopt when it is identically zero.
std::optional<ad::Var> distill_part(ProbeGraph& g, std::size_t t, const distill::DistillConfig& c) {
  std::optional<ad::Var> acc;
  auto add = [&acc](const ad::Var& term, double w) {
    const ad::Var v = ad::scale(term, w);
    acc = acc ? ad::add(*acc, v) : v;
  };
  const bool temporal = g.z.size() >= 2;
  switch (c.method) {
    case Method::ce_only: break;
    case Method::timestep_kd: add(distill::kd_term(g.z[t], require_teacher(g), c.temperature), c.lambda_kd); break;
    case Method::ela:
      add(distill::ela_term(g.z[t], require_teacher(g), g.label, c.temperature, c.ela_variant), c.alpha_ela);
      break;
    case Method::sta:
    case Method::uta:
      add(distill::kd_term(g.z[t], require_teacher(g), c.temperature), c.lambda_kd);
      if (temporal) add(*temporal_term(g, t, c), c.beta_sta);
      break;
    case Method::seal:
      add(distill::ela_term(g.z[t], require_teacher(g), g.label, c.temperature, c.ela_variant), c.alpha_ela);
      if (temporal) add(*temporal_term(g, t, c), c.beta_sta);
      break;
  }
  return acc;
}

}  // namespace

LayerValues pair_share(const snn::SpikingNet& net, const Probe& probe, std::size_t t,
                       const distill::DistillConfig& config) {
  ProbeGraph g;
  build(g, net, probe, t);
  const std::size_t L = net.layers.size();
  const auto loss = align_term(g, t, config);
  if (!loss) return LayerValues(L);
  const auto zt = g.z[t].value().row(0);
  const std::size_t y = probe.label;
  const std::size_t f = distill::top_false_class(zt, y);
  std::vector<std::size_t> rest_cols;
  for (std::size_t c = 0; c < zt.size(); ++c)
    if (c != y && c != f) rest_cols.push_back(c);

  const auto gl = layer_grads(g, *loss);
  const auto gt = layer_grads(g, logit(g.z[t], y));
  const auto gf = layer_grads(g, logit(g.z[t], f));
  std::vector<Tensor> gr;
  if (!rest_cols.empty()) {
    const std::vector<std::size_t> rows(rest_cols.size(), 0);
    gr = layer_grads(g, ad::mean(ad::gather(g.z[t], rows, rest_cols)));
  }
  LayerValues out(L);
  for (std::size_t l = 0; l < L; ++l) {
    const double dt = std::abs(dot(gl[l], gt[l]));
    const double df = std::abs(dot(gl[l], gf[l]));
    const double dr = gr.empty() ? 0.0 : std::abs(dot(gl[l], gr[l]));
    const double denom = dt + df + dr;
    if (denom > 0) out[l] = (dt + df) / denom;
  }
  return out;
}

LayerValues ref_align(const snn::SpikingNet& net, const Probe& probe, std::size_t t,
                      const distill::DistillConfig& config) {
  ProbeGraph g;
  build(g, net, probe, t);
  const std::size_t L = net.layers.size();
  const std::size_t T = g.z.size();
  if (T < 2) return LayerValues(L);
  const auto loss = temporal_term(g, t, config);
  if (!loss) return LayerValues(L);

  const snn::TemporalLogits logits = snn::collect(g.z);
  const Tensor w = time_weights(g, config.sta_temperature, config.sta_variant);
  const std::size_t y = probe.label;
  double m_ref = 0;
  for (std::size_t u = 0; u < T; ++u)
    if (u != t) m_ref += w[t * T + u] * distill::margin(logits.at(0, u), y);
  const std::size_t f = distill::top_false_class(logits.at(0, t), y);
  const ad::Var gap = ad::add_scalar(ad::sub(logit(g.z[t], y), logit(g.z[t], f)), -m_ref);
  const auto gs = layer_grads(g, *loss);
  const auto gm = layer_grads(g, ad::mul(gap, gap));
  LayerValues out(L);
  for (std::size_t l = 0; l < L; ++l) {
    const double na = norm(gs[l]), nb = norm(gm[l]);
    if (na >= 1e-12 && nb >= 1e-12) out[l] = std::clamp(dot(gs[l], gm[l]) / (na * nb), -1.0, 1.0);
  }
  return out;
}

LayerValues kd_ratio(const snn::SpikingNet& net, const Probe& probe, std::size_t t,
                     const distill::DistillConfig& config) {
  ProbeGraph g;
  build(g, net, probe, t);
  const std::size_t L = net.layers.size();
  const auto gc = layer_grads(g, distill::cls_term(g.z[t], g.label, config.cls_temperature));
  const auto part = distill_part(g, t, config);
  std::vector<Tensor> gd;
  if (part) gd = layer_grads(g, *part);
  LayerValues out(L);
  for (std::size_t l = 0; l < L; ++l) {
    const double task = norm(gc[l]);
    if (task < 1e-12) continue;
    out[l] = part ? norm(gd[l]) / task : 0.0;
  }
  return out;
}

std::vector<LayerStat> summarize(const std::vector<LayerValues>& per_probe) {
  std::vector<LayerStat> out;
  if (per_probe.empty()) return out;
  const std::size_t L = per_probe.front().size();
  for (std::size_t l = 0; l < L; ++l) {
    LayerStat s;
    s.layer = l;
    double sum = 0;
    for (const auto& p : per_probe) {
      if (p.size() != L) throw std::invalid_argument("summarize: layer counts differ");
      s.values.push_back(p[l]);
      if (p[l]) {
        ++s.defined;
        sum += *p[l];
      }
    }
    if (s.defined) {
      const double mean = sum / static_cast<double>(s.defined);
      double var = 0;
      for (const auto& v : s.values)
        if (v) var += (*v - mean) * (*v - mean);
      s.mean = mean;
      s.std = std::sqrt(var / static_cast<double>(s.defined));
    }
    out.push_back(std::move(s));
  }
  return out;
}

TemporalAccuracyReport temporal_accuracy_report(const snn::TemporalLogits& logits,
                                                std::span<const std::size_t> labels) {
  const std::size_t B = logits.batch(), T = logits.timesteps(), C = logits.classes();
  if (B == 0) throw std::invalid_argument("temporal_accuracy_report: empty dataset");
  if (labels.size() != B) throw std::invalid_argument("temporal_accuracy_report: label count mismatch");
  TemporalAccuracyReport r;
  r.samples = B;
  r.per_timestep.assign(T, 0.0);
  r.histogram.assign(T + 1, 0);
  std::size_t with_error = 0;
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> mean(C, 0.0);
    std::size_t k = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const auto z = logits.at(b, t);
      const bool ok = distill::argmax(z) == labels[b];
      k += ok;
      r.per_timestep[t] += ok;
      for (std::size_t c = 0; c < C; ++c) mean[c] += z[c];
    }
    for (double& v : mean) v /= static_cast<double>(T);
    if (distill::argmax(mean) == labels[b]) {
      ++r.finally_correct;
      ++r.histogram[k];
      with_error += k < T;
    }
  }
  for (double& v : r.per_timestep) v /= static_cast<double>(B);
  r.aggregated = static_cast<double>(r.finally_correct) / static_cast<double>(B);
  r.with_erroneous_fraction =
      r.finally_correct ? static_cast<double>(with_error) / static_cast<double>(r.finally_correct) : 0.0;
  return r;
}

nlohmann::json to_json(const TemporalAccuracyReport& r) {
  return {{"per_timestep_accuracy", r.per_timestep},
          {"aggregated_accuracy", r.aggregated},
          {"samples", r.samples},
          {"finally_correct", r.finally_correct},
          {"correct_timestep_histogram", r.histogram},
          {"with_erroneous_fraction", r.with_erroneous_fraction}};
}

DiagnosticsReport run_diagnostics(const snn::SpikingNet& net, std::span<const Tensor> encoded,
                                  std::span<const std::size_t> labels, const Tensor& teacher_logits,
                                  const distill::DistillConfig& config, const DiagnosticsSettings& settings) {
  config.validate();
  const auto logits = snn::forward_values(net, encoded);
  const std::size_t N = logits.batch();
  if (config.needs_teacher() && (teacher_logits.rank() != 2 || teacher_logits.rows() != N))
    throw std::invalid_argument("run_diagnostics: need one teacher logit row per sample");
  const ConditionMap cond = classify_timesteps(logits, labels);

  DiagnosticsReport report;
  report.method = distill::to_string(config.method);
  report.accuracy = temporal_accuracy_report(logits, labels);

  auto probe_for = [&](std::size_t b) {
    Probe p;
    for (const Tensor& step : encoded) {
      const auto row = step.row(b);
      p.encoded.push_back(Tensor::matrix(1, step.cols(), {row.begin(), row.end()}));
    }
    p.label = labels[b];
    if (config.needs_teacher()) {
      const auto row = teacher_logits.row(b);
      p.teacher = Tensor::matrix(1, teacher_logits.cols(), {row.begin(), row.end()});
    }
    return p;
  };

  struct Spec {
    const char* name;
    TimestepCondition condition;
    LayerValues (*fn)(const snn::SpikingNet&, const Probe&, std::size_t, const distill::DistillConfig&);
  };
  const Spec specs[] = {{"pair_share", TimestepCondition::erroneous, &pair_share},
                        {"ref_align", TimestepCondition::weak, &ref_align},
                        {"kd_ratio", TimestepCondition::correct, &kd_ratio}};
  std::uint64_t stream = 0;
  for (const Spec& s : specs) {
    StatisticReport sr;
    sr.statistic = s.name;
    sr.condition = s.condition;
    std::vector<std::pair<std::size_t, std::size_t>> pool;
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t t = 0; t < cond.timesteps; ++t)
        if (cond.at(b, t) == s.condition) pool.emplace_back(b, t);
    std::mt19937_64 rng(stream_seed(settings.seed, 30 + stream++));
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(std::min(pool.size(), settings.samples));
    std::vector<LayerValues> values;
    for (const auto& [b, t] : pool) values.push_back(s.fn(net, probe_for(b), t, config));
    sr.probes = pool;
    sr.layers = summarize(values);
    if (sr.layers.empty()) {
      for (std::size_t l = 0; l < net.layers.size(); ++l) sr.layers.push_back(LayerStat{l, {}, 0, {}, {}});
    }
    report.statistics.push_back(std::move(sr));
  }
  return report;
}

namespace {

nlohmann::json optional_number(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

std::vector<nlohmann::json> to_jsonl(const DiagnosticsReport& r) {
  std::vector<nlohmann::json> out;
  for (const auto& s : r.statistics) {
    nlohmann::json probes = nlohmann::json::array();
    for (const auto& [b, t] : s.probes) probes.push_back({b, t});
    for (const auto& l : s.layers) {
      nlohmann::json values = nlohmann::json::array();
      for (const auto& v : l.values) values.push_back(optional_number(v));
      out.push_back({{"record", "layer_stat"},
                     {"method", r.method},
                     {"statistic", s.statistic},
                     {"condition", condition_name(s.condition)},
                     {"layer", l.layer},
                     {"mean", optional_number(l.mean)},
                     {"std", optional_number(l.std)},
                     {"defined", l.defined},
                     {"values", values},
                     {"probes", probes}});
    }
  }
  nlohmann::json acc = to_json(r.accuracy);
  acc["record"] = "temporal_accuracy";
  acc["method"] = r.method;
  out.push_back(acc);
  return out;
}

std::string heatmap_csv(const Tensor& logits_tc) {
  if (logits_tc.rank() != 2 || logits_tc.empty())
    throw std::invalid_argument("heatmap: expected a non-empty (T x C) tensor");
  std::string out = "timestep";
  for (std::size_t c = 0; c < logits_tc.cols(); ++c) out += "," + std::to_string(c);
  out += '\n';
  for (std::size_t t = 0; t < logits_tc.rows(); ++t) {
    out += std::to_string(t);
    for (double v : logits_tc.row(t)) out += "," + io::format_double(v);
    out += '\n';
  }
  return out;
}

void export_logit_heatmap(const Tensor& logits_tc, const std::filesystem::path& path) {
  io::write_atomic(path, heatmap_csv(logits_tc));
}

Tensor read_logit_heatmap(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(path.string() + ": empty heatmap");
  const std::size_t C = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cell;
    std::getline(fields, cell, ',');
    std::size_t n = 0;
    while (std::getline(fields, cell, ',')) {
      values.push_back(std::stod(cell));
      ++n;
    }
    if (n != C) throw std::invalid_argument(path.string() + ": ragged heatmap row " + std::to_string(rows));
    ++rows;
  }
  return Tensor::matrix(rows, C, std::move(values));
}

}  // namespace spikekd::diag
