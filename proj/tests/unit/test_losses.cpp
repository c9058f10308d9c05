#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "spikekd/losses.hpp"
#include "support/convert.hpp"
#include "support/oracles.hpp"

using namespace spikekd;
using namespace spikekd::distill;
using testsupport::random_batch;
using testsupport::random_labels;
using testsupport::random_vec;
using testsupport::to_matrix;
using testsupport::to_temporal;

namespace {

struct Bound {
  ad::Tape tape;
  TemporalVars z;
  ad::Var teacher;
};

void bind_batch(Bound& b, const oracle::Batch& z, const std::vector<oracle::Vec>& a) {
  b.z = snn::bind_logits(b.tape, to_temporal(z));
  b.teacher = b.tape.leaf(to_matrix(a));
}

std::vector<oracle::Vec> random_teacher(std::mt19937_64& rng, std::size_t B, std::size_t C) {
  std::vector<oracle::Vec> a(B);
  for (auto& v : a) v = random_vec(rng, C, -4, 4);
  return a;
}

bool all_zero(const Tensor& t) {
  for (double v : t.values())
    if (v != 0.0) return false;
  return true;
}

// Central differences of f over every logit z[b][t][c].
oracle::Batch fd_gradient(const std::function<double(const oracle::Batch&)>& f, oracle::Batch z, double h) {
  oracle::Batch g = z;
  for (std::size_t b = 0; b < z.size(); ++b)
    for (std::size_t t = 0; t < z[b].size(); ++t)
      for (std::size_t c = 0; c < z[b][t].size(); ++c) {
        const double x = z[b][t][c];
        z[b][t][c] = x + h;
        const double up = f(z);
        z[b][t][c] = x - h;
        const double down = f(z);
        z[b][t][c] = x;
        g[b][t][c] = (up - down) / (2 * h);
      }
  return g;
}

double grad_mismatch(const Bound& bd, const ad::Gradients& g, const oracle::Batch& fd) {
  double worst = 0;
  for (std::size_t t = 0; t < bd.z.size(); ++t) {
    const Tensor gt = g[bd.z[t]];
    for (std::size_t b = 0; b < fd.size(); ++b)
      for (std::size_t c = 0; c < fd[b][t].size(); ++c) {
        const double an = gt.at(b, c), nu = fd[b][t][c];
        worst = std::max(worst, std::abs(an - nu) / std::max({std::abs(an), std::abs(nu), 1e-6}));
      }
  }
  return worst;
}

// Temporal alignment with weights and source distributions frozen at `base`.
double frozen_temporal(const oracle::Batch& z, const oracle::Batch& base, double tau, bool uniform) {
  double total = 0;
  for (std::size_t b = 0; b < z.size(); ++b) {
    const std::size_t T = z[b].size();
    const auto w = uniform ? std::vector<oracle::Vec>(T, oracle::Vec(T, 1.0 / static_cast<double>(T - 1)))
                           : oracle::sta_weights(base[b], tau);
    double s = 0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t u = 0; u < T; ++u)
        if (u != t) s += w[t][u] * oracle::kl(oracle::softmax(base[b][u], tau), oracle::softmax(z[b][t], tau));
    total += s / static_cast<double>(T);
  }
  return total / static_cast<double>(z.size());
}

}  // namespace

TEST_CASE("cls_loss examples") {
  ad::Tape tape;
  std::vector<std::size_t> y{0};
  auto sat = snn::bind_logits(tape, {Tensor({1, 1, 3}, {30, 0, 0})});
  CHECK(cls_loss(sat, y, 1.0).value().item() < 1e-9);

  auto uni = snn::bind_logits(tape, {Tensor({1, 1, 4}, {0.3, 0.3, 0.3, 0.3})});
  CHECK(cls_loss(uni, y, 1.0).value().item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  auto two = snn::bind_logits(tape, {Tensor({1, 2, 3}, {1, 2, 0.5, -1, 0, 3})});
  auto first = snn::bind_logits(tape, {Tensor({1, 1, 3}, {1, 2, 0.5})});
  auto second = snn::bind_logits(tape, {Tensor({1, 1, 3}, {-1, 0, 3})});
  const double mean = 0.5 * (cls_loss(first, y, 1.0).value().item() + cls_loss(second, y, 1.0).value().item());
  CHECK(cls_loss(two, y, 1.0).value().item() == doctest::Approx(mean).epsilon(1e-14));

  std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(cls_loss(sat, bad, 1.0), std::invalid_argument);
}

TEST_CASE("kd_loss examples") {
  std::mt19937_64 rng(11);
  Bound same;
  const oracle::Vec a{1.5, -0.5, 0.25};
  bind_batch(same, {{a, a}}, {a});
  CHECK(std::abs(kd_loss(same.z, same.teacher, 4.0).value().item()) < 1e-15);

  for (int trial = 0; trial < 50; ++trial) {
    const auto z = random_batch(rng, 2, 3, 3, 5);
    const auto t = random_teacher(rng, 2, 3);
    Bound bd;
    bind_batch(bd, z, t);
    const double v = kd_loss(bd.z, bd.teacher, 2.5).value().item();
    CHECK(v >= 0);
    CHECK(oracle::relative_error(v, oracle::kd(z, t, 2.5)) < 1e-12);
  }
}

TEST_CASE("baseline objective") {
  std::mt19937_64 rng(12);
  const auto z = random_batch(rng, 3, 2, 4, 3);
  const auto t = random_teacher(rng, 3, 4);
  const auto y = random_labels(rng, 3, 4);
  Bound bd;
  bind_batch(bd, z, t);
  DistillConfig cfg;
  const double cls = cls_loss(bd.z, y, cfg.cls_temperature).value().item();

  cfg.lambda_kd = 0;
  CHECK(baseline_objective(bd.z, bd.teacher, y, cfg).value().item() == cls);

  Bound mirror;
  bind_batch(mirror, {{t[0], t[0]}, {t[1], t[1]}, {t[2], t[2]}}, t);
  cfg.lambda_kd = 1;
  const double cls_m = cls_loss(mirror.z, y, cfg.cls_temperature).value().item();
  CHECK(baseline_objective(mirror.z, mirror.teacher, y, cfg).value().item() == doctest::Approx(cls_m).epsilon(1e-14));

  // Exact line through the three points.
  std::vector<double> lam{0.5, 1.0, 2.0}, val;
  for (double l : lam) {
    cfg.lambda_kd = l;
    val.push_back(baseline_objective(bd.z, bd.teacher, y, cfg).value().item());
  }
  const double slope = (val[2] - val[0]) / (lam[2] - lam[0]);
  const double icept = val[0] - slope * lam[0];
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(icept + slope * lam[i] - val[i]) < 1e-12);
  CHECK(std::abs(icept - cls) < 1e-12);
}

TEST_CASE("ela_modify examples") {
  const std::vector<double> s{2, 5, 1}, a{6, 3, 1};
  auto m = ela_modify(s, a, 0, ElaVariant::ours);
  CHECK(m.student_erroneous);
  CHECK(m.c_false == std::optional<std::size_t>(1));
  CHECK(m.student == std::vector<double>{2, 2, 1});
  CHECK(m.teacher == std::vector<double>{3, 3, 1});

  const std::vector<double> ok{5, 2, 1};
  auto pass = ela_modify(ok, a, 0, ElaVariant::ours);
  CHECK_FALSE(pass.student_erroneous);
  CHECK(pass.student == ok);
  CHECK(pass.teacher == a);

  // Equal pair values: the first maximum is the label, so nothing is flagged.
  const std::vector<double> tie{4, 4, 1};
  auto same = ela_modify(tie, a, 0, ElaVariant::ours);
  CHECK(same.student == tie);
  CHECK(same.teacher == a);
}

TEST_CASE("ela_modify variants") {
  const std::vector<double> s{2, 5, 1, 0}, a{1, 3, 6, 0};
  auto only_s = ela_modify(s, a, 0, ElaVariant::student_only);
  CHECK(only_s.student == std::vector<double>{2, 2, 1, 0});
  CHECK(only_s.teacher == a);

  auto only_a = ela_modify(s, a, 0, ElaVariant::teacher_only);
  CHECK(only_a.student == s);
  CHECK(only_a.teacher == std::vector<double>{1, 1, 6, 0});

  // The teacher predicts class 2, so that pair is equalized on both sides.
  auto driven = ela_modify(s, a, 0, ElaVariant::teacher_driven);
  CHECK(driven.student == std::vector<double>{1, 5, 1, 0});
  CHECK(driven.teacher == std::vector<double>{1, 3, 1, 0});
  auto driven_ok = ela_modify(s, std::vector<double>{7, 3, 6, 0}, 0, ElaVariant::teacher_driven);
  CHECK(driven_ok.student == s);

  auto three = ela_modify(s, a, 0, ElaVariant::three_class);
  CHECK(three.student == std::vector<double>{1, 1, 1, 0});
  CHECK(three.teacher == std::vector<double>{1, 1, 1, 0});
  // Teacher correct: falls back to the pair.
  auto pair = ela_modify(s, std::vector<double>{6, 3, 1, 0}, 0, ElaVariant::three_class);
  CHECK(pair.student == std::vector<double>{2, 2, 1, 0});
  CHECK(pair.teacher == std::vector<double>{3, 3, 1, 0});
}

TEST_CASE("ela locality and idempotence") {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<std::size_t> pick_c(2, 10);
  int erroneous = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t C = pick_c(rng);
    auto s = random_vec(rng, C, -5, 5);
    const auto a = random_vec(rng, C, -5, 5);
    const std::size_t y = random_labels(rng, 1, C)[0];
    const auto m = ela_modify(s, a, y, ElaVariant::ours);
    if (!m.student_erroneous) continue;
    ++erroneous;
    const std::size_t f = *m.c_false;
    CHECK(f != y);
    for (std::size_t c = 0; c < C; ++c) {
      if (c == y || c == f) {
        CHECK(m.student[c] == std::min(s[y], s[f]));
        CHECK(m.teacher[c] == std::min(a[y], a[f]));
      } else {
        CHECK(m.student[c] == s[c]);
        CHECK(m.teacher[c] == a[c]);
      }
    }
    CHECK(ela_equalize(m.student, m.student_equalized) == m.student);
    CHECK(ela_equalize(m.teacher, m.teacher_equalized) == m.teacher);
  }
  CHECK(erroneous > 100);
}

TEST_CASE("ela_loss values") {
  Bound bd;
  const oracle::Vec s{2, 5, 1}, a{6, 3, 1};
  bind_batch(bd, {{s}}, {a});
  std::vector<std::size_t> y{0};
  const double v = ela_loss(bd.z, bd.teacher, y, 4.0, ElaVariant::ours).value().item();
  const double direct = oracle::kl(oracle::softmax({3, 3, 1}, 4.0), oracle::softmax({2, 2, 1}, 4.0));
  CHECK(oracle::relative_error(v, direct) < 1e-12);

  Bound same;
  bind_batch(same, {{a, a}}, {a});
  CHECK(std::abs(ela_loss(same.z, same.teacher, y, 4.0, ElaVariant::ours).value().item()) < 1e-15);

  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const auto z = random_batch(rng, 3, 4, 5, 4);
    const auto t = random_teacher(rng, 3, 5);
    const auto yy = random_labels(rng, 3, 5);
    Bound b;
    bind_batch(b, z, t);
    const double got = ela_loss(b.z, b.teacher, yy, 4.0, ElaVariant::ours).value().item();
    CHECK(got >= 0);
    CHECK(oracle::relative_error(got, oracle::ela(z, t, yy, 4.0)) < 1e-12);
  }
}

TEST_CASE("ela_loss equals kd_loss when every timestep is correct") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    auto z = random_batch(rng, 3, 3, 4, 3);
    const auto t = random_teacher(rng, 3, 4);
    const auto y = random_labels(rng, 3, 4);
    for (std::size_t b = 0; b < 3; ++b)
      for (auto& v : z[b]) v[y[b]] = 10.0;
    Bound bd;
    bind_batch(bd, z, t);
    CHECK(ela_loss(bd.z, bd.teacher, y, 4.0, ElaVariant::ours).value().item() ==
          kd_loss(bd.z, bd.teacher, 4.0).value().item());
  }
}

TEST_CASE("error mask") {
  const auto logits = to_temporal({{{1, 3, 0}, {4, 1, 0}}, {{0, 0, 2}, {0, 5, 1}}});
  std::vector<std::size_t> y{0, 1};
  const auto m = error_mask(logits, y);
  CHECK(m.at(0, 0));
  CHECK(m.false_class(0, 0) == std::optional<std::size_t>(1));
  CHECK_FALSE(m.at(0, 1));
  CHECK_FALSE(m.false_class(0, 1).has_value());
  CHECK(m.false_class(1, 0) == std::optional<std::size_t>(2));
  CHECK_FALSE(m.at(1, 1));
}

TEST_CASE("sta confidence and similarity") {
  CHECK(std::abs(sta_confidence(std::vector<double>{0.7, 0.7, 0.7}, 1.0)) < 1e-15);
  CHECK(sta_confidence(std::vector<double>{40, 0, 0}, 1.0) > 1 - 1e-6);
  // Logits whose softmax is [0.9, 0.1].
  const std::vector<double> z{std::log(0.9), std::log(0.1)};
  const double h = -(0.9 * std::log(0.9) + 0.1 * std::log(0.1));
  CHECK(h == doctest::Approx(0.32508).epsilon(1e-5));
  CHECK(sta_confidence(z, 1.0) == doctest::Approx(1 - h / std::log(2.0)).epsilon(1e-12));
  CHECK(sta_confidence(z, 1.0) == doctest::Approx(0.53100).epsilon(1e-5));

  const std::vector<double> u{1, 0}, v{0, 1}, w{1, 1};
  CHECK(sta_similarity(u, u) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(sta_similarity(u, v) == 0.0);
  CHECK(sta_similarity(u, w) == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(sta_similarity(u, std::vector<double>{0, 0}) == 0.0);
}

TEST_CASE("sta weight laws") {
  auto w2 = sta_weights(Tensor::matrix(2, 3, {1, 2, 3, -1, 0, 2}), 1.0, StaVariant::ours);
  CHECK(w2.at(0, 1) == 1.0);
  CHECK(w2.at(1, 0) == 1.0);
  CHECK(w2.at(0, 0) == 0.0);

  auto w3 = sta_weights(Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2}), 1.0, StaVariant::ours);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t u = 0; u < 3; ++u) CHECK(w3.at(t, u) == (t == u ? 0.0 : 0.5));

  CHECK_THROWS_AS(sta_weights(Tensor::matrix(1, 2, {1, 2}), 1.0, StaVariant::ours), std::invalid_argument);

  std::mt19937_64 rng(16);
  for (auto variant : {StaVariant::ours, StaVariant::no_conf, StaVariant::no_sim, StaVariant::dist}) {
    for (int trial = 0; trial < 30; ++trial) {
      const auto z = random_batch(rng, 2, 5, 4, 3);
      const Tensor w = sta_weights(to_temporal(z), 1.0, variant);
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 5; ++t) {
          double s = 0;
          for (std::size_t u = 0; u < 5; ++u) s += w[(b * 5 + t) * 5 + u];
          CHECK(w[(b * 5 + t) * 5 + t] == 0.0);
          CHECK(std::abs(s - 1) < 1e-12);
        }
      if (variant == StaVariant::ours) {
        const auto ref = oracle::sta_weights(z[1], 1.0);
        for (std::size_t t = 0; t < 5; ++t)
          for (std::size_t u = 0; u < 5; ++u) CHECK(std::abs(w[(25 + t * 5) + u] - ref[t][u]) < 1e-14);
      }
    }
  }
}

TEST_CASE("sta weight variants use the documented scores") {
  const Tensor z = Tensor::matrix(3, 3, {2, 0, 0, 0, 1, 0, 1, 1, 3});
  auto row_softmax = [](double a, double b) { return std::exp(a) / (std::exp(a) + std::exp(b)); };
  auto conf = [&](std::size_t t) { return sta_confidence(z.row(t), 1.0); };
  auto sim = [&](std::size_t t, std::size_t u) { return sta_similarity(z.row(t), z.row(u)); };
  const double ours = row_softmax(conf(1) * sim(0, 1), conf(2) * sim(0, 2));
  const double no_conf = row_softmax(sim(0, 1), sim(0, 2));
  const double no_sim = row_softmax(conf(1), conf(2));
  const double dist = row_softmax(conf(1) * (1 - sim(0, 1)), conf(2) * (1 - sim(0, 2)));
  CHECK(sta_weights(z, 1.0, StaVariant::ours).at(0, 1) == doctest::Approx(ours).epsilon(1e-14));
  CHECK(sta_weights(z, 1.0, StaVariant::no_conf).at(0, 1) == doctest::Approx(no_conf).epsilon(1e-14));
  CHECK(sta_weights(z, 1.0, StaVariant::no_sim).at(0, 1) == doctest::Approx(no_sim).epsilon(1e-14));
  CHECK(sta_weights(z, 1.0, StaVariant::dist).at(0, 1) == doctest::Approx(dist).epsilon(1e-14));
}

TEST_CASE("cosine similarity is scale invariant") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_vec(rng, 6, -3, 3), b = random_vec(rng, 6, -3, 3);
    const double k = std::exp(random_vec(rng, 1, -3, 3)[0]);
    auto ka = a, kb = b;
    for (double& v : ka) v *= k;
    for (double& v : kb) v *= k;
    CHECK(std::abs(sta_similarity(a, b) - sta_similarity(ka, kb)) < 1e-12);
  }
}

TEST_CASE("sta and uta values") {
  Bound same;
  const oracle::Vec v{0.5, -1, 2};
  bind_batch(same, {{v, v, v}}, {v});
  CHECK(std::abs(sta_loss(same.z, 1.0, StaVariant::ours).value().item()) < 1e-15);
  CHECK(std::abs(uta_loss(same.z, 1.0).value().item()) < 1e-15);

  // T = 2: both weights are 1, so the loss is the mean of two KL terms.
  Bound two;
  const oracle::Vec p{1, 2, 0}, q{0, -1, 1.5};
  bind_batch(two, {{p, q}}, {v});
  const double hand = 0.5 * (oracle::kl(oracle::softmax(q, 2.0), oracle::softmax(p, 2.0)) +
                             oracle::kl(oracle::softmax(p, 2.0), oracle::softmax(q, 2.0)));
  CHECK(oracle::relative_error(sta_loss(two.z, 2.0, StaVariant::ours).value().item(), hand) < 1e-13);
  CHECK(oracle::relative_error(uta_loss(two.z, 2.0).value().item(), hand) < 1e-13);

  // T = 3: six terms with weight 1/2.
  Bound three;
  const oracle::Vec r{-0.5, 0.5, 3};
  bind_batch(three, {{p, q, r}}, {v});
  const oracle::Seq seq{p, q, r};
  double six = 0;
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t u = 0; u < 3; ++u)
      if (u != t) six += 0.5 * oracle::kl(oracle::softmax(seq[u], 1.0), oracle::softmax(seq[t], 1.0));
  CHECK(oracle::relative_error(uta_loss(three.z, 1.0).value().item(), six / 3) < 1e-13);

  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 50; ++trial) {
    const auto z = random_batch(rng, 2, 4, 5, 3);
    Bound b;
    bind_batch(b, z, random_teacher(rng, 2, 5));
    const double s = sta_loss(b.z, 1.0, StaVariant::ours).value().item();
    CHECK(s >= 0);
    CHECK(oracle::relative_error(s, oracle::sta(z, 1.0)) < 1e-12);
    CHECK(oracle::relative_error(uta_loss(b.z, 1.0).value().item(), oracle::uta(z, 1.0)) < 1e-12);
  }
}

TEST_CASE("seal objective") {
  std::mt19937_64 rng(19);
  const auto z = random_batch(rng, 3, 4, 5, 3);
  const auto t = random_teacher(rng, 3, 5);
  const auto y = random_labels(rng, 3, 5);
  Bound bd;
  bind_batch(bd, z, t);
  DistillConfig cfg;
  CHECK(cfg.alpha_ela == 0.6);
  CHECK(cfg.beta_sta == 0.15);

  const auto terms = seal_objective(bd.z, bd.teacher, y, cfg);
  CHECK(std::abs(weighted_total(terms, cfg) - terms.total.value().item()) < 1e-12);
  CHECK(oracle::relative_error(terms.total.value().item(),
                               oracle::seal(z, t, y, cfg.temperature, cfg.cls_temperature, cfg.sta_temperature,
                                            cfg.alpha_ela, cfg.beta_sta)) < 1e-12);

  cfg.alpha_ela = cfg.beta_sta = 0;
  CHECK(seal_objective(bd.z, bd.teacher, y, cfg).total.value().item() == terms.cls);
}

TEST_CASE("objective dispatch") {
  std::mt19937_64 rng(20);
  const auto z = random_batch(rng, 2, 3, 4, 3);
  const auto t = random_teacher(rng, 2, 4);
  const auto y = random_labels(rng, 2, 4);
  Bound bd;
  bind_batch(bd, z, t);
  DistillConfig cfg;
  const double cls = oracle::cls(z, y, 1.0), kd = oracle::kd(z, t, 4.0), ela = oracle::ela(z, t, y, 4.0);
  const double sta = oracle::sta(z, 1.0), uta = oracle::uta(z, 1.0);
  const std::vector<std::pair<Method, double>> expect{
      {Method::ce_only, cls},
      {Method::timestep_kd, cls + kd},
      {Method::ela, cls + 0.6 * ela},
      {Method::sta, cls + kd + 0.15 * sta},
      {Method::uta, cls + kd + 0.15 * uta},
      {Method::seal, cls + 0.6 * ela + 0.15 * sta},
  };
  for (const auto& [m, want] : expect) {
    cfg.method = m;
    const auto terms = objective(bd.z, bd.teacher, y, cfg);
    CHECK(oracle::relative_error(terms.total.value().item(), want) < 1e-12);
    CHECK(std::abs(weighted_total(terms, cfg) - terms.total.value().item()) < 1e-12);
  }

  // A single timestep has no alignment sources.
  Bound one;
  const oracle::Batch z1{{z[0][0]}, {z[1][0]}};
  bind_batch(one, z1, t);
  cfg.method = Method::seal;
  const auto terms = objective(one.z, one.teacher, y, cfg);
  CHECK(terms.sta == 0.0);
  CHECK(oracle::relative_error(terms.total.value().item(), oracle::cls(z1, y, 1.0) + 0.6 * oracle::ela(z1, t, y, 4.0)) <
        1e-12);

  cfg.method = Method::timestep_kd;
  CHECK_THROWS_AS(objective(bd.z, ad::Var{}, y, cfg), std::invalid_argument);
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(21);
  const double h = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    const auto z = random_batch(rng, 2, 3, 4, 2.5);
    const auto t = random_teacher(rng, 2, 4);
    const auto y = random_labels(rng, 2, 4);

    auto check = [&](const std::function<ad::Var(Bound&)>& build, const std::function<double(const oracle::Batch&)>& f) {
      Bound bd;
      bind_batch(bd, z, t);
      const ad::Var loss = build(bd);
      const auto g = bd.tape.backward(loss);
      CHECK(grad_mismatch(bd, g, fd_gradient(f, z, h)) < 1e-6);
      CHECK(all_zero(g[bd.teacher]));
    };

    check([&](Bound& b) { return cls_loss(b.z, y, 1.0); }, [&](const oracle::Batch& x) { return oracle::cls(x, y, 1.0); });
    check([&](Bound& b) { return kd_loss(b.z, b.teacher, 4.0); },
          [&](const oracle::Batch& x) { return oracle::kd(x, t, 4.0); });
    check([&](Bound& b) { return ela_loss(b.z, b.teacher, y, 4.0, ElaVariant::ours); },
          [&](const oracle::Batch& x) { return oracle::ela(x, t, y, 4.0); });
    check([&](Bound& b) { return sta_loss(b.z, 1.0, StaVariant::ours); },
          [&](const oracle::Batch& x) { return frozen_temporal(x, z, 1.0, false); });
    check([&](Bound& b) { return uta_loss(b.z, 1.0); },
          [&](const oracle::Batch& x) { return frozen_temporal(x, z, 1.0, true); });
    check([&](Bound& b) { return seal_objective(b.z, b.teacher, y, DistillConfig{}).total; },
          [&](const oracle::Batch& x) {
            return oracle::cls(x, y, 1.0) + 0.6 * oracle::ela(x, t, y, 4.0) + 0.15 * frozen_temporal(x, z, 1.0, false);
          });
  }
}

TEST_CASE("alignment targets receive no gradient") {
  std::mt19937_64 rng(22);
  const auto z = random_batch(rng, 2, 4, 3, 2);
  Bound bd;
  bind_batch(bd, z, random_teacher(rng, 2, 3));
  const ad::Var w = bd.tape.leaf(sta_weights(to_temporal(z), 1.0, StaVariant::ours));
  for (std::size_t t = 0; t < 4; ++t) {
    const auto g = bd.tape.backward(sta_term(bd.z, t, w, 1.0));
    CHECK(all_zero(g[w]));
    for (std::size_t u = 0; u < 4; ++u) {
      if (u == t)
        CHECK_FALSE(all_zero(g[bd.z[u]]));
      else
        CHECK(all_zero(g[bd.z[u]]));
    }
  }
  const auto g = bd.tape.backward(sta_loss_weighted(bd.z, w, 1.0));
  CHECK(all_zero(g[w]));
}

TEST_CASE("distill config json") {
  DistillConfig c;
  c.method = Method::uta;
  c.ela_variant = ElaVariant::three_class;
  c.sta_variant = StaVariant::no_sim;
  c.beta_sta = 0.3;
  const auto back = distill_config_from_json(to_json(c));
  CHECK(back.method == Method::uta);
  CHECK(back.ela_variant == ElaVariant::three_class);
  CHECK(back.sta_variant == StaVariant::no_sim);
  CHECK(back.beta_sta == 0.3);
  CHECK(to_string(parse_ela_variant("AS")) == "AS");
  CHECK(to_string(parse_sta_variant("no-conf")) == "no-conf");
  CHECK(to_string(parse_method("timestep-kd")) == "timestep-kd");
  CHECK_THROWS_AS(distill_config_from_json(nlohmann::json{{"temprature", 2.0}}), std::invalid_argument);
  CHECK_THROWS_AS(distill_config_from_json(nlohmann::json{{"temperature", 0.0}}), std::invalid_argument);
  CHECK_THROWS_AS(distill_config_from_json(nlohmann::json{{"alpha_ela", -1.0}}), std::invalid_argument);
  CHECK_THROWS_AS(parse_method("seal-kd"), std::invalid_argument);
}
