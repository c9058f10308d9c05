#include "spikekd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace spikekd::distill {

namespace {

constexpr double kNormFloor = 1e-12;

void require_labels(std::span<const std::size_t> labels, std::size_t batch, std::size_t classes) {
  if (labels.size() != batch) {
    throw std::invalid_argument("expected " + std::to_string(batch) + " labels, got " + std::to_string(labels.size()));
  }
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] >= classes) {
      throw std::invalid_argument("label " + std::to_string(labels[b]) + " of sample " + std::to_string(b) +
                                  " outside [0," + std::to_string(classes) + ")");
    }
  }
}

void require_2d(const ad::Var& z, const char* what) {
  if (z.value().rank() != 2) {
    throw std::invalid_argument(std::string(what) + ": expected (batch x C) logits, got " + shape_string(z.shape()));
  }
}

void require_steps(const TemporalVars& z, const char* what) {
  if (z.empty()) throw std::invalid_argument(std::string(what) + ": no timesteps");
  for (const auto& s : z) require_2d(s, what);
  for (const auto& s : z) require_same_shape(s.value(), z.front().value(), what);
}

Tensor softmax_rows(const Tensor& z, double tau) {
  Tensor out(z.shape());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto p = softmax(z.row(r), tau);
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return out;
}

Tensor log_or_zero(const Tensor& p) {
  Tensor out(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] > 0.0 ? std::log(p[i]) : 0.0;
  return out;
}

// sum over rows and classes of P * (log P - log q), P constant. Rows may carry weights
// already folded into `weighted_p` while `p` holds the plain distribution for the log.
ad::Var kl_from_constant(ad::Tape& tape, const Tensor& p, const Tensor& weighted_p, const ad::Var& logq) {
  ad::Var lp = tape.constant(log_or_zero(p));
  ad::Var wp = tape.constant(weighted_p);
  return ad::sum(ad::mul(wp, ad::sub(lp, logq)));
}

Tensor teacher_values(const ad::Var& teacher, std::size_t batch, std::size_t classes) {
  // Targets never feed gradient back into the teacher.
  const Tensor t = ad::stop_gradient(teacher).value();
  if (t.rank() != 2 || t.rows() != batch || t.cols() != classes) {
    throw std::invalid_argument("teacher logits " + shape_string(t.shape()) + " do not match student (" +
                                std::to_string(batch) + " x " + std::to_string(classes) + ")");
  }
  return t;
}

// Equalize the listed class sets (2 or 3 classes per row) to their minimum on the graph.
ad::Var equalize_graph(const ad::Var& z, const std::vector<std::vector<std::size_t>>& sets) {
  ad::Var out = z;
  for (std::size_t width : {std::size_t{2}, std::size_t{3}}) {
    std::vector<std::size_t> rows;
    std::vector<std::vector<std::size_t>> cols(width);
    for (std::size_t r = 0; r < sets.size(); ++r) {
      if (sets[r].size() != width) continue;
      rows.push_back(r);
      for (std::size_t k = 0; k < width; ++k) cols[k].push_back(sets[r][k]);
    }
    if (rows.empty()) continue;
    ad::Var m = ad::gather(z, rows, cols[0]);
    for (std::size_t k = 1; k < width; ++k) m = ad::minimum(m, ad::gather(z, rows, cols[k]));
    for (std::size_t k = 0; k < width; ++k) out = ad::scatter(out, rows, cols[k], m);
  }
  return out;
}

ad::Var time_mean(const std::vector<ad::Var>& terms) {
  ad::Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
  return ad::scale(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

// ---------------------------------------------------------------------------

Method parse_method(const std::string& s) {
  if (s == "ce-only") return Method::ce_only;
  if (s == "timestep-kd") return Method::timestep_kd;
  if (s == "ela") return Method::ela;
  if (s == "sta") return Method::sta;
  if (s == "uta") return Method::uta;
  if (s == "seal") return Method::seal;
  throw std::invalid_argument("unknown method '" + s + "' (expected ce-only, timestep-kd, ela, sta, uta, seal)");
}

ElaVariant parse_ela_variant(const std::string& s) {
  if (s == "ours") return ElaVariant::ours;
  if (s == "S") return ElaVariant::student_only;
  if (s == "A") return ElaVariant::teacher_only;
  if (s == "AS") return ElaVariant::teacher_driven;
  if (s == "Both") return ElaVariant::three_class;
  throw std::invalid_argument("unknown ela_variant '" + s + "' (expected ours, S, A, AS, Both)");
}

StaVariant parse_sta_variant(const std::string& s) {
  if (s == "ours") return StaVariant::ours;
  if (s == "no-conf") return StaVariant::no_conf;
  if (s == "no-sim") return StaVariant::no_sim;
  if (s == "dist") return StaVariant::dist;
  throw std::invalid_argument("unknown sta_variant '" + s + "' (expected ours, no-conf, no-sim, dist)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::ce_only: return "ce-only";
    case Method::timestep_kd: return "timestep-kd";
    case Method::ela: return "ela";
    case Method::sta: return "sta";
    case Method::uta: return "uta";
    case Method::seal: return "seal";
  }
  return "?";
}

std::string to_string(ElaVariant v) {
  switch (v) {
    case ElaVariant::ours: return "ours";
    case ElaVariant::student_only: return "S";
    case ElaVariant::teacher_only: return "A";
    case ElaVariant::teacher_driven: return "AS";
    case ElaVariant::three_class: return "Both";
  }
  return "?";
}

std::string to_string(StaVariant v) {
  switch (v) {
    case StaVariant::ours: return "ours";
    case StaVariant::no_conf: return "no-conf";
    case StaVariant::no_sim: return "no-sim";
    case StaVariant::dist: return "dist";
  }
  return "?";
}

void DistillConfig::validate() const {
  if (!(temperature > 0.0) || !(cls_temperature > 0.0) || !(sta_temperature > 0.0)) {
    throw std::invalid_argument("distill: temperatures must be > 0");
  }
  if (!(lambda_kd >= 0.0) || !(alpha_ela >= 0.0) || !(beta_sta >= 0.0)) {
    throw std::invalid_argument("distill: loss weights must be >= 0");
  }
}

DistillConfig distill_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"temperature", "cls_temperature", "sta_temperature", "lambda_kd",
                                              "alpha_ela",   "beta_sta",        "method",          "ela_variant",
                                              "sta_variant"};
  if (!j.is_object()) throw std::invalid_argument("distill: expected an object");
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw std::invalid_argument("distill: unknown key '" + k + "'");
  DistillConfig c;
  c.temperature = j.value("temperature", c.temperature);
  c.cls_temperature = j.value("cls_temperature", c.cls_temperature);
  c.sta_temperature = j.value("sta_temperature", c.sta_temperature);
  c.lambda_kd = j.value("lambda_kd", c.lambda_kd);
  c.alpha_ela = j.value("alpha_ela", c.alpha_ela);
  c.beta_sta = j.value("beta_sta", c.beta_sta);
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  if (j.contains("ela_variant")) c.ela_variant = parse_ela_variant(j.at("ela_variant").get<std::string>());
  if (j.contains("sta_variant")) c.sta_variant = parse_sta_variant(j.at("sta_variant").get<std::string>());
  c.validate();
  return c;
}

nlohmann::json to_json(const DistillConfig& c) {
  return {{"temperature", c.temperature},         {"cls_temperature", c.cls_temperature},
          {"sta_temperature", c.sta_temperature}, {"lambda_kd", c.lambda_kd},
          {"alpha_ela", c.alpha_ela},             {"beta_sta", c.beta_sta},
          {"method", to_string(c.method)},        {"ela_variant", to_string(c.ela_variant)},
          {"sta_variant", to_string(c.sta_variant)}};
}

// ---------------------------------------------------------------------------

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax: empty vector");
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t top_false_class(std::span<const double> v, std::size_t label) {
  if (v.size() < 2 || label >= v.size()) throw std::invalid_argument("top_false_class: need C >= 2 and a valid label");
  std::size_t best = label == 0 ? 1 : 0;
  for (std::size_t c = 0; c < v.size(); ++c)
    if (c != label && v[c] > v[best]) best = c;
  return best;
}

double margin(std::span<const double> v, std::size_t label) { return v[label] - v[top_false_class(v, label)]; }

std::vector<double> softmax(std::span<const double> z, double tau) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) mx = std::max(mx, v / tau);
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] / tau - mx);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

ErrorMask error_mask(const TemporalLogits& logits, std::span<const std::size_t> labels) {
  ErrorMask m;
  m.batch = logits.batch();
  m.timesteps = logits.timesteps();
  require_labels(labels, m.batch, logits.classes());
  m.erroneous.assign(m.batch * m.timesteps, 0);
  m.c_false.assign(m.batch * m.timesteps, 0);
  for (std::size_t b = 0; b < m.batch; ++b)
    for (std::size_t t = 0; t < m.timesteps; ++t) {
      const std::size_t pred = argmax(logits.at(b, t));
      if (pred != labels[b]) {
        m.erroneous[b * m.timesteps + t] = 1;
        m.c_false[b * m.timesteps + t] = pred;
      }
    }
  return m;
}

ElaModification ela_modify(std::span<const double> student_t, std::span<const double> teacher, std::size_t label,
                           ElaVariant variant) {
  if (student_t.size() != teacher.size()) {
    throw std::invalid_argument("ela_modify: student has " + std::to_string(student_t.size()) + " classes, teacher " +
                                std::to_string(teacher.size()));
  }
  if (label >= student_t.size()) throw std::invalid_argument("ela_modify: label out of range");
  ElaModification m;
  m.student.assign(student_t.begin(), student_t.end());
  m.teacher.assign(teacher.begin(), teacher.end());
  const std::size_t s_pred = argmax(student_t);
  const std::size_t a_pred = argmax(teacher);
  m.student_erroneous = s_pred != label;
  if (m.student_erroneous) m.c_false = s_pred;

  std::vector<std::size_t> set;
  bool touch_student = true, touch_teacher = true;
  switch (variant) {
    case ElaVariant::ours:
    case ElaVariant::student_only:
    case ElaVariant::teacher_only:
      if (m.student_erroneous) set = {label, s_pred};
      touch_student = variant != ElaVariant::teacher_only;
      touch_teacher = variant != ElaVariant::student_only;
      break;
    case ElaVariant::teacher_driven:
      if (a_pred != label) set = {label, a_pred};
      break;
    case ElaVariant::three_class:
      if (m.student_erroneous) {
        set = {label, s_pred};
        if (a_pred != label && a_pred != s_pred) set.push_back(a_pred);
      }
      break;
  }
  if (touch_student) m.student_equalized = set;
  if (touch_teacher) m.teacher_equalized = set;
  m.student = ela_equalize(m.student, m.student_equalized);
  m.teacher = ela_equalize(m.teacher, m.teacher_equalized);
  return m;
}

std::vector<double> ela_equalize(std::span<const double> z, std::span<const std::size_t> classes) {
  std::vector<double> out(z.begin(), z.end());
  if (classes.empty()) return out;
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t c : classes) {
    if (c >= out.size()) throw std::invalid_argument("ela_equalize: class index out of range");
    m = std::min(m, out[c]);
  }
  for (std::size_t c : classes) out[c] = m;
  return out;
}

double sta_confidence(std::span<const double> logits_t, double tau) {
  if (logits_t.size() < 2) throw std::invalid_argument("sta_confidence: need C >= 2");
  const auto p = softmax(logits_t, tau);
  return 1.0 - entropy(p) / std::log(static_cast<double>(logits_t.size()));
}

double sta_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("sta_similarity: length mismatch");
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < kNormFloor || nb < kNormFloor) return 0.0;
  return d / (na * nb);
}

Tensor sta_weights(const Tensor& logits_tc, double tau, StaVariant variant) {
  if (logits_tc.rank() != 2) throw std::invalid_argument("sta_weights: expected (T x C), got " + shape_string(logits_tc.shape()));
  const std::size_t T = logits_tc.dim(0);
  if (T < 2) throw std::invalid_argument("sta_weights: need T >= 2 (got " + std::to_string(T) + ")");
  std::vector<double> conf(T);
  for (std::size_t t = 0; t < T; ++t) conf[t] = sta_confidence(logits_tc.row(t), tau);
  Tensor w(Shape{T, T});
  std::vector<double> score(T);
  for (std::size_t t = 0; t < T; ++t) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < T; ++s) {
      if (s == t) continue;
      const double sim = sta_similarity(logits_tc.row(t), logits_tc.row(s));
      switch (variant) {
        case StaVariant::ours: score[s] = conf[s] * sim; break;
        case StaVariant::no_conf: score[s] = sim; break;
        case StaVariant::no_sim: score[s] = conf[s]; break;
        case StaVariant::dist: score[s] = conf[s] * (1.0 - sim); break;
      }
      mx = std::max(mx, score[s]);
    }
    double z = 0.0;
    for (std::size_t s = 0; s < T; ++s) {
      if (s == t) continue;
      w.at(t, s) = std::exp(score[s] - mx);
      z += w.at(t, s);
    }
    for (std::size_t s = 0; s < T; ++s) w.at(t, s) /= z;
  }
  return w;
}

Tensor sta_weights(const TemporalLogits& logits, double tau, StaVariant variant) {
  const std::size_t B = logits.batch(), T = logits.timesteps();
  Tensor out(Shape{B, T, T});
  for (std::size_t b = 0; b < B; ++b) {
    const Tensor w = sta_weights(logits.sample(b), tau, variant);
    std::copy(w.data().begin(), w.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * T * T));
  }
  return out;
}

Tensor uniform_weights(std::size_t batch, std::size_t timesteps) {
  if (timesteps < 2) throw std::invalid_argument("uniform_weights: need T >= 2");
  Tensor out(Shape{batch, timesteps, timesteps});
  const double w = 1.0 / static_cast<double>(timesteps - 1);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < timesteps; ++t)
      for (std::size_t s = 0; s < timesteps; ++s)
        if (s != t) out[(b * timesteps + t) * timesteps + s] = w;
  return out;
}

// ---------------------------------------------------------------------------

ad::Var cls_term(const ad::Var& z_t, std::span<const std::size_t> labels, double tau) {
  require_2d(z_t, "cls_term");
  const std::size_t B = z_t.value().rows();
  require_labels(labels, B, z_t.value().cols());
  std::vector<std::size_t> rows(B);
  for (std::size_t b = 0; b < B; ++b) rows[b] = b;
  ad::Var picked = ad::gather(ad::log_softmax(z_t, tau), rows, labels);
  return ad::scale(ad::sum(picked), -1.0 / static_cast<double>(B));
}

ad::Var cls_loss(const TemporalVars& z, std::span<const std::size_t> labels, double tau) {
  require_steps(z, "cls_loss");
  std::vector<ad::Var> terms;
  for (const auto& s : z) terms.push_back(cls_term(s, labels, tau));
  return time_mean(terms);
}

ad::Var kd_term(const ad::Var& z_t, const ad::Var& teacher, double tau) {
  require_2d(z_t, "kd_term");
  ad::Tape& tape = *z_t.tape();
  const std::size_t B = z_t.value().rows(), C = z_t.value().cols();
  const Tensor p = softmax_rows(teacher_values(teacher, B, C), tau);
  ad::Var kl = kl_from_constant(tape, p, p, ad::log_softmax(z_t, tau));
  return ad::scale(kl, 1.0 / static_cast<double>(B));
}

ad::Var kd_loss(const TemporalVars& z, const ad::Var& teacher, double tau) {
  require_steps(z, "kd_loss");
  std::vector<ad::Var> terms;
  for (const auto& s : z) terms.push_back(kd_term(s, teacher, tau));
  return time_mean(terms);
}

ad::Var ela_term(const ad::Var& z_t, const ad::Var& teacher, std::span<const std::size_t> labels, double tau,
                 ElaVariant variant) {
  require_2d(z_t, "ela_term");
  ad::Tape& tape = *z_t.tape();
  const Tensor& zs = z_t.value();
  const std::size_t B = zs.rows(), C = zs.cols();
  require_labels(labels, B, C);
  Tensor target = teacher_values(teacher, B, C);
  std::vector<std::vector<std::size_t>> student_sets(B);
  for (std::size_t b = 0; b < B; ++b) {
    ElaModification m = ela_modify(zs.row(b), target.row(b), labels[b], variant);
    student_sets[b] = std::move(m.student_equalized);
    std::copy(m.teacher.begin(), m.teacher.end(), target.row(b).begin());
  }
  const Tensor p = softmax_rows(target, tau);
  ad::Var z_mod = equalize_graph(z_t, student_sets);
  ad::Var kl = kl_from_constant(tape, p, p, ad::log_softmax(z_mod, tau));
  return ad::scale(kl, 1.0 / static_cast<double>(B));
}

ad::Var ela_loss(const TemporalVars& z, const ad::Var& teacher, std::span<const std::size_t> labels, double tau,
                 ElaVariant variant) {
  require_steps(z, "ela_loss");
  std::vector<ad::Var> terms;
  for (const auto& s : z) terms.push_back(ela_term(s, teacher, labels, tau, variant));
  return time_mean(terms);
}

ad::Var sta_term(const TemporalVars& z, std::size_t t, const ad::Var& weights, double tau) {
  require_steps(z, "sta_term");
  const std::size_t T = z.size();
  if (T < 2) throw std::invalid_argument("sta_term: need T >= 2");
  if (t >= T) throw std::invalid_argument("sta_term: target timestep out of range");
  ad::Tape& tape = *z.front().tape();
  const std::size_t B = z.front().value().rows();
  const Tensor w = ad::stop_gradient(weights).value();
  if (w.shape() != Shape{B, T, T}) {
    throw std::invalid_argument("sta_term: weights " + shape_string(w.shape()) + " expected " +
                                shape_string(Shape{B, T, T}));
  }
  ad::Var logq = ad::log_softmax(z[t], tau);
  std::vector<ad::Var> parts;
  for (std::size_t s = 0; s < T; ++s) {
    if (s == t) continue;
    const Tensor p = softmax_rows(ad::stop_gradient(z[s]).value(), tau);
    Tensor wp = p;
    for (std::size_t b = 0; b < B; ++b)
      for (double& v : wp.row(b)) v *= w[(b * T + t) * T + s];
    parts.push_back(kl_from_constant(tape, p, wp, logq));
  }
  ad::Var acc = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) acc = ad::add(acc, parts[i]);
  return ad::scale(acc, 1.0 / static_cast<double>(B));
}

ad::Var sta_loss_weighted(const TemporalVars& z, const ad::Var& weights, double tau) {
  require_steps(z, "sta_loss");
  if (z.size() < 2) throw std::invalid_argument("sta_loss: need T >= 2");
  std::vector<ad::Var> terms;
  for (std::size_t t = 0; t < z.size(); ++t) terms.push_back(sta_term(z, t, weights, tau));
  return time_mean(terms);
}

ad::Var sta_loss(const TemporalVars& z, double tau, StaVariant variant) {
  require_steps(z, "sta_loss");
  if (z.size() < 2) throw std::invalid_argument("sta_loss: need T >= 2");
  ad::Var w = z.front().tape()->constant(sta_weights(snn::collect(z), tau, variant));
  return sta_loss_weighted(z, w, tau);
}

ad::Var uta_loss(const TemporalVars& z, double tau) {
  require_steps(z, "uta_loss");
  if (z.size() < 2) throw std::invalid_argument("uta_loss: need T >= 2");
  ad::Var w = z.front().tape()->constant(uniform_weights(z.front().value().rows(), z.size()));
  return sta_loss_weighted(z, w, tau);
}

// ---------------------------------------------------------------------------

ObjectiveTerms objective(const TemporalVars& z, const ad::Var& teacher, std::span<const std::size_t> labels,
                         const DistillConfig& config) {
  config.validate();
  require_steps(z, "objective");
  ObjectiveTerms out;
  ad::Var total = cls_loss(z, labels, config.cls_temperature);
  out.cls = total.value().item();
  const bool temporal = z.size() >= 2;
  if (config.needs_teacher() && !teacher.valid()) {
    throw std::invalid_argument("method " + to_string(config.method) + " requires teacher logits");
  }
  auto add_weighted = [&total](const ad::Var& term, double w) { total = ad::add(total, ad::scale(term, w)); };

  if (config.method == Method::timestep_kd || config.method == Method::sta || config.method == Method::uta) {
    ad::Var kd = kd_loss(z, teacher, config.temperature);
    out.kd = kd.value().item();
    add_weighted(kd, config.lambda_kd);
  }
  if (config.method == Method::ela || config.method == Method::seal) {
    ad::Var ela = ela_loss(z, teacher, labels, config.temperature, config.ela_variant);
    out.ela = ela.value().item();
    add_weighted(ela, config.alpha_ela);
  }
  if (temporal && (config.method == Method::sta || config.method == Method::seal)) {
    ad::Var sta = sta_loss(z, config.sta_temperature, config.sta_variant);
    out.sta = sta.value().item();
    add_weighted(sta, config.beta_sta);
  }
  if (temporal && config.method == Method::uta) {
    ad::Var uta = uta_loss(z, config.sta_temperature);
    out.sta = uta.value().item();
    add_weighted(uta, config.beta_sta);
  }
  out.total = total;
  return out;
}

double weighted_total(const ObjectiveTerms& t, const DistillConfig& c) {
  return t.cls + c.lambda_kd * t.kd + c.alpha_ela * t.ela + c.beta_sta * t.sta;
}

ad::Var baseline_objective(const TemporalVars& z, const ad::Var& teacher, std::span<const std::size_t> labels,
                           const DistillConfig& config) {
  DistillConfig c = config;
  c.method = Method::timestep_kd;
  return objective(z, teacher, labels, c).total;
}

ObjectiveTerms seal_objective(const TemporalVars& z, const ad::Var& teacher, std::span<const std::size_t> labels,
                              const DistillConfig& config) {
  DistillConfig c = config;
  c.method = Method::seal;
  return objective(z, teacher, labels, c);
}

}  // namespace spikekd::distill
