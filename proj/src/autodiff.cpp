#include "spikekd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace spikekd::ad {

namespace {

Tape& same_tape(const Var& a, const Var& b, const char* what) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument(std::string(what) + ": invalid variable");
  if (a.tape() != b.tape()) throw std::invalid_argument(std::string(what) + ": operands live on different tapes");
  return *a.tape();
}

Tape& tape_of(const Var& a, const char* what) {
  if (!a.valid()) throw std::invalid_argument(std::string(what) + ": invalid variable");
  return *a.tape();
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw std::invalid_argument(std::string(what) + ": expected rank-2 tensor, got " + shape_string(t.shape()));
}

void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

// Row-wise softmax of x / tau with max subtraction. Rank <= 2.
Tensor softmax_rows(const Tensor& x, double tau) {
  Tensor out(x.shape());
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t r = 0; r < m; ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, in[c] / tau);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      o[c] = std::exp(in[c] / tau - mx);
      z += o[c];
    }
    for (std::size_t c = 0; c < n; ++c) o[c] /= z;
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& x, double tau) {
  Tensor out(x.shape());
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t r = 0; r < m; ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, in[c] / tau);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(in[c] / tau - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < n; ++c) o[c] = in[c] / tau - lz;
  }
  return out;
}

void check_indices(const Tensor& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols,
                   const char* what) {
  if (rows.size() != cols.size()) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(rows.size()) + " row indices vs " +
                                std::to_string(cols.size()) + " column indices");
  }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= a.rows() || cols[k] >= a.cols()) {
      throw std::invalid_argument(std::string(what) + ": index (" + std::to_string(rows[k]) + "," +
                                  std::to_string(cols[k]) + ") outside " + shape_string(a.shape()));
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("value() on an invalid variable");
  return tape_->value(id_);
}

Tensor Gradients::operator[](const Var& v) const {
  if (v.tape() != tape_) throw std::invalid_argument("gradient lookup for a variable from another tape");
  if (v.id() < grads_.size() && !grads_[v.id()].empty()) return grads_[v.id()];
  return Tensor(v.shape());
}

bool Gradients::reached(const Var& v) const { return v.id() < grads_.size() && !grads_[v.id()].empty(); }

Tensor& GradSink::at(std::size_t id) {
  Tensor& g = g_.grads_.at(id);
  if (g.empty()) g = Tensor(g_.tape_->value(id).shape());
  return g;
}

Var Tape::leaf(Tensor value) { return record(std::move(value), "leaf", nullptr); }

Var Tape::record(Tensor value, std::string op, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), std::move(op), std::move(backward)});
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& output) const {
  if (output.tape() != this) throw std::invalid_argument("backward: output belongs to another tape");
  if (value(output.id()).size() != 1) {
    throw std::invalid_argument("backward: output must be scalar, got shape " +
                                shape_string(value(output.id()).shape()));
  }
  Gradients g;
  g.tape_ = this;
  g.grads_.resize(nodes_.size());
  g.grads_[output.id()] = Tensor(value(output.id()).shape(), 1.0);
  GradSink sink(g);
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.backward || g.grads_[i].empty()) continue;
    // Parents always precede their child, so grads_[i] is final here.
    n.backward(g.grads_[i], sink);
  }
  return g;
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  if (B.dim(0) != k) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(A.shape()) + " x " +
                                shape_string(B.shape()));
  }
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.at(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aip * B.at(p, j);
    }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), "matmul", [ia, ib, &tape, m, k, n](const Tensor& g, GradSink& sink) {
    const Tensor& A = tape.value(ia);
    const Tensor& B = tape.value(ib);
    Tensor& ga = sink.at(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += g.at(i, j) * B.at(p, j);
        ga.at(i, p) += s;
      }
    Tensor& gb = sink.at(ib);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A.at(i, p);
        if (aip == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) gb.at(p, j) += aip * g.at(i, j);
      }
  });
}

Var add(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  add_into(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), "add", [ia, ib](const Tensor& g, GradSink& sink) {
    add_into(sink.at(ia), g);
    add_into(sink.at(ib), g);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), "sub", [ia, ib](const Tensor& g, GradSink& sink) {
    add_into(sink.at(ia), g);
    auto gb = sink.at(ib).data();
    auto gv = g.data();
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gv[i];
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), "mul", [ia, ib, &tape](const Tensor& g, GradSink& sink) {
    auto av = tape.value(ia).data();
    auto bv = tape.value(ib).data();
    auto gv = g.data();
    {
      auto ga = sink.at(ia).data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv[i] * bv[i];
    }
    auto gb = sink.at(ib).data();
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gv[i] * av[i];
  });
}

Var scale(const Var& a, double s) {
  Tape& tape = tape_of(a, "scale");
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  const std::size_t ia = a.id();
  return tape.record(std::move(out), "scale", [ia, s](const Tensor& g, GradSink& sink) {
    auto ga = sink.at(ia).data();
    auto gv = g.data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * gv[i];
  });
}

Var add_scalar(const Var& a, double s) {
  Tape& tape = tape_of(a, "add_scalar");
  Tensor out = a.value();
  for (double& v : out.data()) v += s;
  const std::size_t ia = a.id();
  return tape.record(std::move(out), "add_scalar", [ia](const Tensor& g, GradSink& sink) { add_into(sink.at(ia), g); });
}

Var add_row(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b, "add_row");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "add_row");
  if (B.rank() != 1 || B.size() != A.dim(1)) {
    throw std::invalid_argument("add_row: bias shape " + shape_string(B.shape()) + " does not match rows of " +
                                shape_string(A.shape()));
  }
  Tensor out = A;
  const std::size_t m = A.dim(0), n = A.dim(1);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += B[j];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), "add_row", [ia, ib, m, n](const Tensor& g, GradSink& sink) {
    add_into(sink.at(ia), g);
    Tensor& gb = sink.at(ib);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gb[j] += g.at(i, j);
  });
}

Var relu(const Var& a) {
  Tape& tape = tape_of(a, "relu");
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id();
  return tape.record(std::move(out), "relu", [ia, &tape](const Tensor& g, GradSink& sink) {
    auto x = tape.value(ia).data();
    auto ga = sink.at(ia).data();
    auto gv = g.data();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (x[i] > 0.0) ga[i] += gv[i];
  });
}

Var softmax(const Var& a, double tau) {
  Tape& tape = tape_of(a, "softmax");
  if (!(tau > 0.0)) throw std::invalid_argument("softmax: temperature must be > 0");
  if (a.value().rank() > 2) throw std::invalid_argument("softmax: rank > 2 " + shape_string(a.shape()));
  Tensor out = softmax_rows(a.value(), tau);
  const std::size_t ia = a.id();
  const std::size_t out_id = tape.size();
  return tape.record(std::move(out), "softmax", [ia, out_id, tau, &tape](const Tensor& g, GradSink& sink) {
    const Tensor& p = tape.value(out_id);
    Tensor& ga = sink.at(ia);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      auto pr = p.row(r);
      auto gr = g.row(r);
      double s = 0.0;
      for (std::size_t c = 0; c < pr.size(); ++c) s += gr[c] * pr[c];
      auto gar = ga.row(r);
      for (std::size_t c = 0; c < pr.size(); ++c) gar[c] += pr[c] * (gr[c] - s) / tau;
    }
  });
}

Var log_softmax(const Var& a, double tau) {
  Tape& tape = tape_of(a, "log_softmax");
  if (!(tau > 0.0)) throw std::invalid_argument("log_softmax: temperature must be > 0");
  if (a.value().rank() > 2) throw std::invalid_argument("log_softmax: rank > 2 " + shape_string(a.shape()));
  Tensor out = log_softmax_rows(a.value(), tau);
  const std::size_t ia = a.id();
  const std::size_t out_id = tape.size();
  return tape.record(std::move(out), "log_softmax", [ia, out_id, tau, &tape](const Tensor& g, GradSink& sink) {
    const Tensor& lp = tape.value(out_id);
    Tensor& ga = sink.at(ia);
    for (std::size_t r = 0; r < lp.rows(); ++r) {
      auto lr = lp.row(r);
      auto gr = g.row(r);
      double s = 0.0;
      for (double v : gr) s += v;
      auto gar = ga.row(r);
      for (std::size_t c = 0; c < lr.size(); ++c) gar[c] += (gr[c] - std::exp(lr[c]) * s) / tau;
    }
  });
}

Var sum(const Var& a) {
  Tape& tape = tape_of(a, "sum");
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return tape.record(Tensor::scalar(s), "sum", [ia](const Tensor& g, GradSink& sink) {
    const double gv = g[0];
    for (double& v : sink.at(ia).data()) v += gv;
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_axis(const Var& a, std::size_t axis) {
  Tape& tape = tape_of(a, "sum_axis");
  const Tensor& A = a.value();
  require_rank2(A, "sum_axis");
  if (axis > 1) throw std::invalid_argument("sum_axis: axis must be 0 or 1");
  const std::size_t m = A.dim(0), n = A.dim(1);
  Tensor out(Shape{axis == 0 ? n : m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += A.at(i, j);
  const std::size_t ia = a.id();
  return tape.record(std::move(out), "sum_axis", [ia, axis, m, n](const Tensor& g, GradSink& sink) {
    Tensor& ga = sink.at(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += g[axis == 0 ? j : i];
  });
}

Var mean_axis(const Var& a, std::size_t axis) {
  require_rank2(a.value(), "mean_axis");
  const std::size_t n = a.value().dim(axis);
  if (n == 0) throw std::invalid_argument("mean_axis: empty axis");
  return scale(sum_axis(a, axis), 1.0 / static_cast<double>(n));
}

Var l2_norm(const Var& a) {
  Tape& tape = tape_of(a, "l2_norm");
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  const double norm = std::sqrt(s);
  const std::size_t ia = a.id();
  return tape.record(Tensor::scalar(norm), "l2_norm", [ia, norm, &tape](const Tensor& g, GradSink& sink) {
    if (norm == 0.0) return;  // subgradient 0 at the origin
    auto x = tape.value(ia).data();
    auto ga = sink.at(ia).data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * x[i] / norm;
  });
}

Var dot(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b, "dot");
  require_same_shape(a.value(), b.value(), "dot");
  double s = 0.0;
  auto av = a.value().data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(Tensor::scalar(s), "dot", [ia, ib, &tape](const Tensor& g, GradSink& sink) {
    auto av = tape.value(ia).data();
    auto bv = tape.value(ib).data();
    {
      auto ga = sink.at(ia).data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * bv[i];
    }
    auto gb = sink.at(ib).data();
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[0] * av[i];
  });
}

Var gather(const Var& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  Tape& tape = tape_of(a, "gather");
  const Tensor& A = a.value();
  if (A.rank() > 2) throw std::invalid_argument("gather: rank > 2 " + shape_string(A.shape()));
  check_indices(A, rows, cols, "gather");
  Tensor out(Shape{rows.size()});
  for (std::size_t k = 0; k < rows.size(); ++k) out[k] = A.at(rows[k], cols[k]);
  const std::size_t ia = a.id();
  std::vector<std::size_t> r(rows.begin(), rows.end()), c(cols.begin(), cols.end());
  return tape.record(std::move(out), "gather", [ia, r = std::move(r), c = std::move(c)](const Tensor& g, GradSink& sink) {
    Tensor& ga = sink.at(ia);
    for (std::size_t k = 0; k < r.size(); ++k) ga.at(r[k], c[k]) += g[k];
  });
}

Var scatter(const Var& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols, const Var& v) {
  Tape& tape = same_tape(a, v, "scatter");
  const Tensor& A = a.value();
  if (A.rank() > 2) throw std::invalid_argument("scatter: rank > 2 " + shape_string(A.shape()));
  check_indices(A, rows, cols, "scatter");
  if (v.value().size() != rows.size()) {
    throw std::invalid_argument("scatter: " + std::to_string(rows.size()) + " indices but values of shape " +
                                shape_string(v.shape()));
  }
  Tensor out = A;
  std::vector<char> replaced(A.size(), 0);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t flat = rows[k] * A.cols() + cols[k];
    if (replaced[flat]) throw std::invalid_argument("scatter: duplicate index pair");
    replaced[flat] = 1;
    out[flat] = v.value()[k];
  }
  const std::size_t ia = a.id(), iv = v.id();
  std::vector<std::size_t> flat_idx(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) flat_idx[k] = rows[k] * A.cols() + cols[k];
  return tape.record(std::move(out), "scatter",
                     [ia, iv, replaced = std::move(replaced), flat_idx = std::move(flat_idx)](const Tensor& g, GradSink& sink) {
                       {
                         auto ga = sink.at(ia).data();
                         for (std::size_t i = 0; i < ga.size(); ++i)
                           if (!replaced[i]) ga[i] += g[i];
                       }
                       auto gv = sink.at(iv).data();
                       for (std::size_t k = 0; k < flat_idx.size(); ++k) gv[k] += g[flat_idx[k]];
                     });
}

Var minimum(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b, "minimum");
  require_same_shape(a.value(), b.value(), "minimum");
  Tensor out = a.value();
  auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::min(o[i], bv[i]);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), "minimum", [ia, ib, &tape](const Tensor& g, GradSink& sink) {
    auto av = tape.value(ia).data();
    auto bv = tape.value(ib).data();
    auto gv = g.data();
    std::vector<double> wa(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) wa[i] = av[i] < bv[i] ? 1.0 : (av[i] == bv[i] ? 0.5 : 0.0);
    {
      auto ga = sink.at(ia).data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += wa[i] * gv[i];
    }
    auto gb = sink.at(ib).data();
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += (1.0 - wa[i]) * gv[i];
  });
}

Var stop_gradient(const Var& a) {
  Tape& tape = tape_of(a, "stop_gradient");
  return tape.record(a.value(), "stop_gradient", nullptr);
}

// ---------------------------------------------------------------------------

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("numeric_gradient: step must be > 0");
  const double f0 = f(x);
  if (!std::isfinite(f0)) throw std::domain_error("numeric_gradient: f(x) is not finite");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = f(probe);
    probe[i] = orig - step;
    const double fm = f(probe);
    probe[i] = orig;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor) {
  require_same_shape(analytic, numeric, "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

GradCheckResult grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x, double step) {
  GradCheckResult r;
  {
    Tape tape;
    Var leaf = tape.leaf(x);
    Var out = f(tape, leaf);
    if (!std::isfinite(out.value().item())) throw std::domain_error("grad_check: f(x) is not finite");
    r.analytic = tape.backward(out)[leaf];
  }
  r.numeric = numeric_gradient(
      [&f](const Tensor& p) {
        Tape tape;
        Var leaf = tape.leaf(p);
        return f(tape, leaf).value().item();
      },
      x, step);
  r.max_rel_error = max_relative_error(r.analytic, r.numeric);
  return r;
}

}  // namespace spikekd::ad
