#include <optional>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "spikekd/cli.hpp"
#include "spikekd/energy.hpp"
#include "spikekd/io.hpp"
#include "spikekd/losses.hpp"
#include "spikekd/snn.hpp"

namespace py = pybind11;
using namespace spikekd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a, std::size_t ndim, const char* what) {
  if (static_cast<std::size_t>(a.ndim()) != ndim)
    throw std::invalid_argument(std::string(what) + " must have " + std::to_string(ndim) + " dimensions");
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

distill::DistillConfig make_config(const std::string& method, double temperature, double cls_temperature,
                                   double sta_temperature, double lambda_kd, double alpha_ela, double beta_sta,
                                   const std::string& ela_variant, const std::string& sta_variant) {
  distill::DistillConfig c;
  c.method = distill::parse_method(method);
  c.temperature = temperature;
  c.cls_temperature = cls_temperature;
  c.sta_temperature = sta_temperature;
  c.lambda_kd = lambda_kd;
  c.alpha_ela = alpha_ela;
  c.beta_sta = beta_sta;
  c.ela_variant = distill::parse_ela_variant(ela_variant);
  c.sta_variant = distill::parse_sta_variant(sta_variant);
  c.validate();
  return c;
}

py::dict objective(const Array& z, const Array& teacher, const std::vector<std::size_t>& labels,
                   const std::string& method, double temperature, double cls_temperature, double sta_temperature,
                   double lambda_kd, double alpha_ela, double beta_sta, const std::string& ela_variant,
                   const std::string& sta_variant) {
  const auto cfg = make_config(method, temperature, cls_temperature, sta_temperature, lambda_kd, alpha_ela, beta_sta,
                               ela_variant, sta_variant);
  const snn::TemporalLogits logits{to_tensor(z, 3, "z")};
  ad::Tape tape;
  const auto zv = snn::bind_logits(tape, logits);
  const ad::Var t = tape.constant(to_tensor(teacher, 2, "teacher"));
  const auto terms = distill::objective(zv, t, labels, cfg);
  const auto grads = tape.backward(terms.total);

  const std::size_t B = logits.batch(), T = logits.timesteps(), C = logits.classes();
  Tensor grad({B, T, C});
  for (std::size_t s = 0; s < T; ++s) {
    const Tensor g = grads[zv[s]];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) grad.data()[(b * T + s) * C + c] = g.data()[b * C + c];
  }
  py::dict out;
  out["total"] = terms.total.value().item();
  out["cls"] = terms.cls;
  out["kd"] = terms.kd;
  out["ela"] = terms.ela;
  out["sta"] = terms.sta;
  out["grad"] = to_array(grad);
  return out;
}

py::dict ela_modify(const std::vector<double>& student, const std::vector<double>& teacher, std::size_t label,
                    const std::string& variant) {
  const auto m = distill::ela_modify(student, teacher, label, distill::parse_ela_variant(variant));
  py::dict out;
  out["student"] = m.student;
  out["teacher"] = m.teacher;
  out["student_erroneous"] = m.student_erroneous;
  out["c_false"] = m.c_false;
  out["student_equalized"] = m.student_equalized;
  out["teacher_equalized"] = m.teacher_equalized;
  return out;
}

py::tuple lif_step(const Array& membrane, const Array& current, double leak_alpha, double v_threshold) {
  snn::LIFParams p;
  p.leak_alpha = leak_alpha;
  p.v_threshold = v_threshold;
  p.validate();
  const Tensor u = to_tensor(membrane, static_cast<std::size_t>(membrane.ndim()), "membrane");
  const Tensor i = to_tensor(current, static_cast<std::size_t>(current.ndim()), "current");
  const auto r = snn::lif_step(snn::LIFState{u}, i, p);
  return py::make_tuple(to_array(r.spikes), to_array(r.state.membrane));
}

Array predict(const std::string& model_path, const Array& x, const std::string& encoding, std::uint64_t seed) {
  const auto net = snn::spiking_net_from_json(io::read_json(model_path));
  const auto enc = snn::encode_input(to_tensor(x, 2, "x"), snn::parse_encoding(encoding), net.timesteps, seed);
  return to_array(snn::forward_values(net, enc).values);
}

std::vector<std::string> run(const std::string& command, const py::object& config, std::optional<std::uint64_t> seed,
                             std::optional<std::string> method, std::optional<std::string> ela_variant,
                             std::optional<std::string> sta_variant, std::optional<std::string> out) {
  cli::RunConfig c = py::isinstance<py::str>(config) ? cli::load_config(config.cast<std::string>())
                                                     : cli::parse_config(from_python(config));
  cli::Overrides o;
  o.seed = seed;
  o.method = method;
  o.ela_variant = ela_variant;
  o.sta_variant = sta_variant;
  if (out) o.out = *out;
  cli::apply_overrides(c, o);
  std::vector<std::string> written;
  {
    py::gil_scoped_release release;
    for (const auto& p : cli::run_command(command, c)) written.push_back(p.string());
  }
  return written;
}

}  // namespace

PYBIND11_MODULE(_spikekd, m) {
  m.doc() = "Spiking-student distillation: losses, LIF dynamics, energy model and the run pipeline";

  m.def("objective", &objective, py::arg("z"), py::arg("teacher"), py::arg("labels"), py::arg("method") = "seal",
        py::arg("temperature") = 4.0, py::arg("cls_temperature") = 1.0, py::arg("sta_temperature") = 1.0,
        py::arg("lambda_kd") = 1.0, py::arg("alpha_ela") = 0.6, py::arg("beta_sta") = 0.15,
        py::arg("ela_variant") = "ours", py::arg("sta_variant") = "ours",
        "Training objective on (B, T, C) student logits and (B, C) teacher logits.\n"
        "Returns the total, its component losses and d total / d z.");
  m.def(
      "sta_weights",
      [](const Array& z, double tau, const std::string& variant) {
        return to_array(distill::sta_weights(snn::TemporalLogits{to_tensor(z, 3, "z")}, tau,
                                             distill::parse_sta_variant(variant)));
      },
      py::arg("z"), py::arg("tau") = 1.0, py::arg("variant") = "ours", "(B, T, T) source weights.");
  m.def("sta_confidence", [](const std::vector<double>& z, double tau) { return distill::sta_confidence(z, tau); },
        py::arg("logits"), py::arg("tau") = 1.0);
  m.def("ela_modify", &ela_modify, py::arg("student"), py::arg("teacher"), py::arg("label"),
        py::arg("variant") = "ours");
  m.def("lif_step", &lif_step, py::arg("membrane"), py::arg("current"), py::arg("leak_alpha") = 0.5,
        py::arg("v_threshold") = 1.0, "One LIF update. Returns (spikes, membrane).");
  m.def("sop", [](double acs, double macs) { return energy::sop(acs, macs); }, py::arg("acs"), py::arg("macs"),
        "Energy in pJ for the given accumulate and multiply-accumulate counts.");
  m.def("predict", &predict, py::arg("model"), py::arg("x"), py::arg("encoding") = "constant-current",
        py::arg("seed") = 0, "(B, T, C) logits of a saved student for (B, D) inputs.");
  m.def("load_config", [](const std::string& path) { return to_python(cli::to_json(cli::load_config(path))); },
        py::arg("path"), "Parsed run config with every default filled in.");
  m.def("commands", &cli::command_names);
  m.def("run", &run, py::arg("command"), py::arg("config"), py::arg("seed") = py::none(),
        py::arg("method") = py::none(), py::arg("ela_variant") = py::none(), py::arg("sta_variant") = py::none(),
        py::arg("out") = py::none(),
        "Run a pipeline command on a config path or dict. Returns the written files.");
}
