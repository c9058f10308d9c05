#include "spikekd/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "spikekd/diagnostics.hpp"
#include "spikekd/io.hpp"

namespace spikekd::train {

void TrainPlan::validate() const {
  if (batch_size < 1) throw std::invalid_argument("plan: batch_size must be >= 1");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw std::invalid_argument("plan: learning_rate must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("plan: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw std::invalid_argument("plan: weight_decay must be >= 0");
}

TrainPlan plan_from_json(const nlohmann::json& j, std::uint64_t seed) {
  io::require_known_keys(j, {"epochs", "batch_size", "learning_rate", "momentum", "weight_decay", "cosine"}, "plan");
  TrainPlan p;
  p.epochs = j.value("epochs", p.epochs);
  p.batch_size = j.value("batch_size", p.batch_size);
  p.learning_rate = j.value("learning_rate", p.learning_rate);
  p.momentum = j.value("momentum", p.momentum);
  p.weight_decay = j.value("weight_decay", p.weight_decay);
  p.cosine = j.value("cosine", p.cosine);
  p.seed = seed;
  p.validate();
  return p;
}

nlohmann::json to_json(const TrainPlan& p) {
  return {{"epochs", p.epochs},     {"batch_size", p.batch_size},     {"learning_rate", p.learning_rate},
          {"momentum", p.momentum}, {"weight_decay", p.weight_decay}, {"cosine", p.cosine}};
}

double cosine_lr(double base, std::size_t step, std::size_t total_steps, bool cosine) {
  if (!cosine || total_steps <= 1) return base;
  if (step >= total_steps) throw std::out_of_range("cosine_lr: step past the end of the schedule");
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void Sgd::step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("sgd: parameter and gradient counts differ");
  if (velocity_.empty()) {
    for (const Tensor* p : params) velocity_.push_back(Tensor::zeros_like(*p));
  }
  if (velocity_.size() != params.size()) throw std::invalid_argument("sgd: parameter list changed between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& x = *params[k];
    Tensor& v = velocity_[k];
    require_same_shape(x, grads[k], "sgd");
    for (std::size_t i = 0; i < x.size(); ++i) {
      v[i] = momentum_ * v[i] + lr * (grads[k][i] + weight_decay_ * x[i]);
      x[i] -= v[i];
    }
  }
}

std::vector<Tensor*> parameters(std::vector<AffineLayer>& layers) {
  std::vector<Tensor*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

namespace {

std::vector<Tensor> layer_gradients(const ad::Gradients& g, const BoundLayers& params) {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    out.push_back(g[params.weights[l]]);
    out.push_back(g[params.biases[l]]);
  }
  return out;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

std::vector<std::size_t> slice(const std::vector<std::size_t>& v, std::size_t begin, std::size_t end) {
  return {v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(end)};
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> rows) {
  std::vector<double> out;
  out.reserve(rows.size() * m.cols());
  for (std::size_t r : rows) {
    const auto row = m.row(r);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor::matrix(rows.size(), m.cols(), std::move(out));
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

}  // namespace

// ---------------------------------------------------------------------------

Mlp make_mlp(std::span<const std::size_t> widths, std::uint64_t seed) { return Mlp{init_layers(widths, seed)}; }

ad::Var mlp_forward(const BoundLayers& params, const ad::Var& x) {
  ad::Var h = x;
  const std::size_t L = params.weights.size();
  for (std::size_t l = 0; l < L; ++l) {
    h = ad::add_row(ad::matmul(h, params.weights[l]), params.biases[l]);
    if (l + 1 < L) h = ad::relu(h);
  }
  return h;
}

Tensor mlp_logits(const Mlp& net, const Tensor& x) {
  ad::Tape tape;
  const BoundLayers params = bind_layers(tape, net.layers);
  return mlp_forward(params, tape.constant(x)).value();
}

nlohmann::json to_json(const Mlp& net) { return {{"kind", "mlp"}, {"layers", layers_to_json(net.layers)}}; }

Mlp mlp_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("kind", std::string()) != "mlp")
    throw std::invalid_argument("checkpoint is not an mlp teacher");
  io::require_known_keys(j, {"kind", "layers"}, "mlp checkpoint");
  Mlp net{layers_from_json(j.at("layers"))};
  check_chain(net.layers);
  return net;
}

double accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rows() != labels.size() || labels.empty()) throw std::invalid_argument("accuracy: row/label mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += distill::argmax(logits.row(i)) == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

nlohmann::json to_json(const TeacherEpoch& e) {
  nlohmann::json j{{"epoch", e.epoch}, {"lr", e.lr}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy}};
  j["test_accuracy"] = e.test_accuracy ? nlohmann::json(*e.test_accuracy) : nlohmann::json(nullptr);
  return j;
}

TeacherResult train_teacher(const data::Dataset& train, const TrainPlan& plan, std::span<const std::size_t> widths,
                            const data::Dataset* test) {
  plan.validate();
  train.validate();
  if (train.split != data::Split::train) throw std::invalid_argument("train_teacher: dataset is not a train split");
  if (widths.empty() || widths.front() != train.dim() || widths.back() != train.classes)
    throw std::invalid_argument("train_teacher: widths must start at the feature dimension and end at the class count");

  TeacherResult r{make_mlp(widths, stream_seed(plan.seed, 10)), {}};
  Sgd sgd(plan.momentum, plan.weight_decay);
  std::mt19937_64 shuffle_rng(stream_seed(plan.seed, 11));
  const std::size_t per_epoch = steps_per_epoch(train.size(), plan.batch_size);
  const std::size_t total = per_epoch * plan.epochs;
  std::vector<std::size_t> order = iota(train.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double lr = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += plan.batch_size, ++step) {
      const auto idx = slice(order, begin, std::min(order.size(), begin + plan.batch_size));
      std::vector<std::size_t> labels;
      for (std::size_t i : idx) labels.push_back(train.labels[i]);
      ad::Tape tape;
      const BoundLayers params = bind_layers(tape, r.net.layers);
      const ad::Var loss = distill::cls_term(mlp_forward(params, tape.constant(train.rows(idx))), labels, 1.0);
      if (!std::isfinite(loss.value().item()))
        throw std::runtime_error("teacher training diverged at epoch " + std::to_string(epoch));
      lr = cosine_lr(plan.learning_rate, step, total, plan.cosine);
      sgd.step(parameters(r.net.layers), layer_gradients(tape.backward(loss), params), lr);
    }
    TeacherEpoch m;
    m.epoch = epoch;
    m.lr = lr;
    const Tensor logits = mlp_logits(r.net, train.features);
    {
      ad::Tape tape;
      m.loss = distill::cls_term(tape.constant(logits), train.labels, 1.0).value().item();
    }
    if (!std::isfinite(m.loss)) throw std::runtime_error("teacher training diverged at epoch " + std::to_string(epoch));
    m.train_accuracy = accuracy(logits, train.labels);
    if (test) m.test_accuracy = accuracy(mlp_logits(r.net, test->features), test->labels);
    r.metrics.push_back(m);
  }
  return r;
}

std::string teacher_logits_jsonl(const Tensor& logits) {
  if (!logits.all_finite()) throw std::invalid_argument("teacher logits must be finite");
  std::string out;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    out += "{\"index\":" + std::to_string(i) + ",\"logits\":[";
    const auto row = logits.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ',';
      out += io::format_double(row[c]);
    }
    out += "]}\n";
  }
  return out;
}

void export_teacher_logits(const Tensor& logits, const std::filesystem::path& path) {
  io::write_atomic(path, teacher_logits_jsonl(logits));
}

Tensor import_teacher_logits(const std::filesystem::path& path, std::optional<std::size_t> expected_count,
                             std::optional<std::size_t> expected_classes) {
  const auto records = io::parse_json_lines(io::read_text(path), path.string());
  if (records.empty()) {
    if (expected_count && *expected_count > 0)
      throw std::invalid_argument(path.string() + ": expected " + std::to_string(*expected_count) + " records, found 0");
    return Tensor({0, 0});
  }
  std::vector<double> flat;
  std::size_t C = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string where = path.string() + ": record " + std::to_string(i);
    if (!r.is_object() || !r.contains("index") || !r.contains("logits") || !r.at("logits").is_array())
      throw std::invalid_argument(where + ": expected {\"index\", \"logits\"}");
    if (r.at("index").get<std::size_t>() != i) throw std::invalid_argument(where + ": index out of sequence");
    const auto& l = r.at("logits");
    if (i == 0) C = l.size();
    if (expected_classes && l.size() != *expected_classes)
      throw std::invalid_argument(where + ": expected " + std::to_string(*expected_classes) + " classes, found " +
                                  std::to_string(l.size()));
    if (l.size() != C)
      throw std::invalid_argument(where + ": expected " + std::to_string(C) + " classes, found " +
                                  std::to_string(l.size()));
    for (const auto& v : l) flat.push_back(v.get<double>());
  }
  if (expected_count && records.size() != *expected_count)
    throw std::invalid_argument(path.string() + ": expected " + std::to_string(*expected_count) + " records, found " +
                                std::to_string(records.size()));
  Tensor t = Tensor::matrix(records.size(), C, std::move(flat));
  if (!t.all_finite()) throw std::invalid_argument(path.string() + ": non-finite logits");
  return t;
}

// ---------------------------------------------------------------------------

AccuracySummary temporal_accuracy(const snn::TemporalLogits& logits, std::span<const std::size_t> labels) {
  const auto r = diag::temporal_accuracy_report(logits, labels);
  return {r.per_timestep, r.aggregated};
}

namespace {

nlohmann::json to_json(const AccuracySummary& a) {
  return {{"per_timestep_accuracy", a.per_timestep}, {"aggregated_accuracy", a.aggregated}};
}

}  // namespace

nlohmann::json to_json(const EpochMetrics& m) {
  nlohmann::json j = {{"epoch", m.epoch},
                      {"lr", m.lr},
                      {"loss",
                       {{"total", m.loss.total},
                        {"cls", m.loss.cls},
                        {"kd", m.loss.kd},
                        {"ela", m.loss.ela},
                        {"sta", m.loss.sta}}},
                      {"train", to_json(m.train)}};
  if (m.test) j["test"] = to_json(*m.test);
  return j;
}

std::uint64_t eval_seed(std::uint64_t seed, std::size_t batch) { return stream_seed(stream_seed(seed, 21), batch); }

snn::TemporalLogits predict(const snn::SpikingNet& net, const data::Dataset& d, snn::Encoding encoding,
                            std::uint64_t seed, std::size_t eval_batch, snn::SpikeRecord* record) {
  if (d.size() == 0) throw std::invalid_argument("predict: empty dataset");
  const std::size_t T = net.timesteps, C = net.classes();
  std::vector<double> out;
  out.reserve(d.size() * T * C);
  if (record) record->spikes.assign(net.hidden_layers(), std::vector<Tensor>(T));
  const auto all = iota(d.size());
  for (std::size_t begin = 0, k = 0; begin < d.size(); begin += eval_batch, ++k) {
    const auto idx = slice(all, begin, std::min(d.size(), begin + eval_batch));
    const auto enc = snn::encode_input(d.rows(idx), encoding, T, eval_seed(seed, k));
    snn::SpikeRecord part;
    const auto logits = snn::forward_values(net, enc, record ? &part : nullptr);
    out.insert(out.end(), logits.values.values().begin(), logits.values.values().end());
    if (record) {
      for (std::size_t l = 0; l < part.spikes.size(); ++l)
        for (std::size_t t = 0; t < T; ++t) {
          Tensor& acc = record->spikes[l][t];
          const Tensor& s = part.spikes[l][t];
          std::vector<double> merged = acc.values();
          merged.insert(merged.end(), s.values().begin(), s.values().end());
          acc = Tensor::matrix(acc.empty() ? s.rows() : acc.rows() + s.rows(), s.cols(), std::move(merged));
        }
    }
  }
  return {Tensor({d.size(), T, C}, std::move(out))};
}

LossSummary evaluate_objective(const snn::SpikingNet& net, const data::Dataset& d, const Tensor& teacher_logits,
                               const distill::DistillConfig& config, snn::Encoding encoding, std::uint64_t seed,
                               std::size_t eval_batch) {
  LossSummary s;
  const auto all = iota(d.size());
  const bool teacher = config.needs_teacher();
  for (std::size_t begin = 0, k = 0; begin < d.size(); begin += eval_batch, ++k) {
    const auto idx = slice(all, begin, std::min(d.size(), begin + eval_batch));
    std::vector<std::size_t> labels;
    for (std::size_t i : idx) labels.push_back(d.labels[i]);
    ad::Tape tape;
    const BoundLayers params = bind_layers(tape, net.layers);
    const auto enc = snn::encode_input(d.rows(idx), encoding, net.timesteps, eval_seed(seed, k));
    const auto z = snn::forward_temporal(tape, net, params, enc);
    const ad::Var a = teacher ? tape.constant(gather_rows(teacher_logits, idx)) : ad::Var{};
    const auto terms = distill::objective(z, a, labels, config);
    const double w = static_cast<double>(idx.size());
    s.total += w * terms.total.value().item();
    s.cls += w * terms.cls;
    s.kd += w * terms.kd;
    s.ela += w * terms.ela;
    s.sta += w * terms.sta;
  }
  const double n = static_cast<double>(d.size());
  s.total /= n;
  s.cls /= n;
  s.kd /= n;
  s.ela /= n;
  s.sta /= n;
  return s;
}

StudentResult train_student(const data::Dataset& train, const Tensor& teacher_logits, snn::SpikingNet init,
                            const TrainPlan& plan, const distill::DistillConfig& config, const StudentOptions& options,
                            const data::Dataset* test) {
  plan.validate();
  config.validate();
  train.validate();
  init.validate();
  if (train.split != data::Split::train) throw std::invalid_argument("train_student: dataset is not a train split");
  if (init.input_dim() != train.dim() || init.classes() != train.classes)
    throw std::invalid_argument("train_student: network shape does not match the dataset");
  if (config.needs_teacher()) {
    if (teacher_logits.rank() != 2 || teacher_logits.rows() != train.size() || teacher_logits.cols() != train.classes)
      throw std::invalid_argument("train_student: method " + distill::to_string(config.method) +
                                  " needs teacher logits for all " + std::to_string(train.size()) +
                                  " training samples, got " + shape_string(teacher_logits.shape()));
  }
  if (options.eval_batch < 1) throw std::invalid_argument("train_student: eval_batch must be >= 1");

  StudentResult r{std::move(init), {}, {}};
  Sgd sgd(plan.momentum, plan.weight_decay);
  std::mt19937_64 shuffle_rng(stream_seed(plan.seed, 20));
  const std::uint64_t encode_stream = stream_seed(plan.seed, 22);
  const std::size_t per_epoch = steps_per_epoch(train.size(), plan.batch_size);
  const std::size_t total = per_epoch * plan.epochs;
  std::vector<std::size_t> order = iota(train.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double lr = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += plan.batch_size, ++step) {
      const auto idx = slice(order, begin, std::min(order.size(), begin + plan.batch_size));
      std::vector<std::size_t> labels;
      for (std::size_t i : idx) labels.push_back(train.labels[i]);
      ad::Tape tape;
      const BoundLayers params = bind_layers(tape, r.net.layers);
      const auto enc =
          snn::encode_input(train.rows(idx), options.encoding, r.net.timesteps, stream_seed(encode_stream, step));
      const auto z = snn::forward_temporal(tape, r.net, params, enc);
      const ad::Var a = config.needs_teacher() ? tape.constant(gather_rows(teacher_logits, idx)) : ad::Var{};
      const auto terms = distill::objective(z, a, labels, config);
      const double value = terms.total.value().item();
      if (!std::isfinite(value)) {
        throw std::runtime_error("student training produced a non-finite loss at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(step) + " (cls " + io::format_double(terms.cls) + ", kd " +
                                 io::format_double(terms.kd) + ", ela " + io::format_double(terms.ela) + ", sta " +
                                 io::format_double(terms.sta) + ")");
      }
      lr = cosine_lr(plan.learning_rate, step, total, plan.cosine);
      sgd.step(parameters(r.net.layers), layer_gradients(tape.backward(terms.total), params), lr);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.loss = evaluate_objective(r.net, train, teacher_logits, config, options.encoding, plan.seed, options.eval_batch);
    m.train = temporal_accuracy(predict(r.net, train, options.encoding, plan.seed, options.eval_batch), train.labels);
    if (test) m.test = temporal_accuracy(predict(r.net, *test, options.encoding, plan.seed, options.eval_batch), test->labels);
    r.metrics.push_back(std::move(m));
    if (options.checkpoint_every && (epoch + 1) % options.checkpoint_every == 0) r.checkpoints.push_back({epoch, r.net});
  }
  return r;
}

}  // namespace spikekd::train
