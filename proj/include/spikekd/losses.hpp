#pragma once

// Distillation objectives over per-timestep student logits.
//
// All losses average over timesteps and then over the batch. Teacher logits,
// modified teacher targets, STA source distributions and STA weights are
// constants: they never connect to the student side of the graph.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spikekd/autodiff.hpp"
#include "spikekd/snn.hpp"

namespace spikekd::distill {

using snn::TemporalLogits;
using snn::TemporalVars;

enum class Method { ce_only, timestep_kd, ela, sta, uta, seal };
enum class ElaVariant { ours, student_only, teacher_only, teacher_driven, three_class };
enum class StaVariant { ours, no_conf, no_sim, dist };

Method parse_method(const std::string& s);
ElaVariant parse_ela_variant(const std::string& s);
StaVariant parse_sta_variant(const std::string& s);
std::string to_string(Method m);
std::string to_string(ElaVariant v);
std::string to_string(StaVariant v);

struct DistillConfig {
  double temperature = 4.0;      // teacher-student KD and ELA
  double cls_temperature = 1.0;
  double sta_temperature = 1.0;  // STA/UTA alignment and confidence
  double lambda_kd = 1.0;
  double alpha_ela = 0.6;
  double beta_sta = 0.15;
  Method method = Method::seal;
  ElaVariant ela_variant = ElaVariant::ours;
  StaVariant sta_variant = StaVariant::ours;

  void validate() const;
  bool needs_teacher() const { return method != Method::ce_only; }
};

/// Unknown keys are rejected.
DistillConfig distill_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DistillConfig& c);

// ---------------------------------------------------------------------------
// Value-level helpers.

/// First index of the maximum.
std::size_t argmax(std::span<const double> v);
/// Largest logit among classes other than `label` (first on ties).
std::size_t top_false_class(std::span<const double> v, std::size_t label);
/// z[label] - z[top false class].
double margin(std::span<const double> v, std::size_t label);
std::vector<double> softmax(std::span<const double> z, double tau);
/// sum_i p_i log(p_i / q_i), with 0 log 0 = 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);
double entropy(std::span<const double> p);

/// Per (sample, timestep): erroneous iff argmax != label; c_false is the predicted class there.
struct ErrorMask {
  std::size_t batch = 0;
  std::size_t timesteps = 0;
  std::vector<char> erroneous;
  std::vector<std::size_t> c_false;

  bool at(std::size_t b, std::size_t t) const { return erroneous[b * timesteps + t] != 0; }
  std::optional<std::size_t> false_class(std::size_t b, std::size_t t) const {
    if (!at(b, t)) return std::nullopt;
    return c_false[b * timesteps + t];
  }
};
ErrorMask error_mask(const TemporalLogits& logits, std::span<const std::size_t> labels);

struct ElaModification {
  std::vector<double> student;
  std::vector<double> teacher;
  bool student_erroneous = false;
  std::optional<std::size_t> c_false;           // student's predicted false class
  std::vector<std::size_t> student_equalized;   // classes set to their common minimum
  std::vector<std::size_t> teacher_equalized;
};

/// Error-aware equalization for one timestep. Variants:
///   ours            student errs: both sides equalize {label, student false class}
///   student_only    as ours, teacher untouched
///   teacher_only    as ours, student untouched
///   teacher_driven  teacher errs: both sides equalize {label, teacher false class}
///   three_class     as ours; when the teacher also errs on a different class,
///                   {label, student false, teacher false} are equalized
ElaModification ela_modify(std::span<const double> student_t, std::span<const double> teacher, std::size_t label,
                           ElaVariant variant);

/// Sets every listed class to the minimum over the listed classes. Applying it
/// twice with the same classes is the same as applying it once. Note that
/// ela_modify itself is not idempotent: once the false logit is lowered,
/// another class may become the new argmax.
std::vector<double> ela_equalize(std::span<const double> z, std::span<const std::size_t> classes);

double sta_confidence(std::span<const double> logits_t, double tau);
/// Cosine similarity; 0 when either norm is below 1e-12.
double sta_similarity(std::span<const double> a, std::span<const double> b);
/// (T x C) -> (T x T) source weights. Row t is a softmax over t' != t; diagonal 0.
Tensor sta_weights(const Tensor& logits_tc, double tau, StaVariant variant);
/// (B x T x T) weights for every sample.
Tensor sta_weights(const TemporalLogits& logits, double tau, StaVariant variant);
/// Uniform 1/(T-1) off-diagonal weights, (B x T x T).
Tensor uniform_weights(std::size_t batch, std::size_t timesteps);

// ---------------------------------------------------------------------------
// Differentiable losses. Per-timestep terms are batch means; full losses
// average the terms over T.

ad::Var cls_term(const ad::Var& z_t, std::span<const std::size_t> labels, double tau);
ad::Var cls_loss(const TemporalVars& z, std::span<const std::size_t> labels, double tau);

ad::Var kd_term(const ad::Var& z_t, const ad::Var& teacher, double tau);
ad::Var kd_loss(const TemporalVars& z, const ad::Var& teacher, double tau);

ad::Var ela_term(const ad::Var& z_t, const ad::Var& teacher, std::span<const std::size_t> labels, double tau,
                 ElaVariant variant);
ad::Var ela_loss(const TemporalVars& z, const ad::Var& teacher, std::span<const std::size_t> labels, double tau,
                 ElaVariant variant);

/// sum_{t' != t} w[b,t,t'] KL(p(z_t') || p(z_t)) averaged over the batch, sources frozen.
ad::Var sta_term(const TemporalVars& z, std::size_t t, const ad::Var& weights, double tau);
ad::Var sta_loss_weighted(const TemporalVars& z, const ad::Var& weights, double tau);
ad::Var sta_loss(const TemporalVars& z, double tau, StaVariant variant);
ad::Var uta_loss(const TemporalVars& z, double tau);

struct ObjectiveTerms {
  ad::Var total;
  double cls = 0.0;
  double kd = 0.0;
  double ela = 0.0;
  double sta = 0.0;  // STA, or UTA under Method::uta
};

/// Objective selected by config.method:
///   ce-only      L_cls
///   timestep-kd  L_cls + lambda L_kd
///   ela          L_cls + alpha L_ela
///   sta / uta    L_cls + lambda L_kd + beta L_sta (resp. L_uta)
///   seal         L_cls + alpha L_ela + beta L_sta
/// With T = 1 there are no source timesteps and the temporal term is 0.
ObjectiveTerms objective(const TemporalVars& z, const ad::Var& teacher, std::span<const std::size_t> labels,
                         const DistillConfig& config);

/// Weighted sum of the breakdown under config's weights; equals total.value().
double weighted_total(const ObjectiveTerms& terms, const DistillConfig& config);

ad::Var baseline_objective(const TemporalVars& z, const ad::Var& teacher, std::span<const std::size_t> labels,
                           const DistillConfig& config);
ObjectiveTerms seal_objective(const TemporalVars& z, const ad::Var& teacher, std::span<const std::size_t> labels,
                              const DistillConfig& config);

}  // namespace spikekd::distill
