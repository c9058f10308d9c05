#include "spikekd/cli.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "spikekd/diagnostics.hpp"
#include "spikekd/io.hpp"
#include "spikekd/layers.hpp"

namespace spikekd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Seed streams for the command layer. Lower numbers belong to the modules.
constexpr std::uint64_t kStudentInitStream = 23;
constexpr std::uint64_t kEvalTrainStream = 40;
constexpr std::uint64_t kEvalTestStream = 41;
constexpr std::uint64_t kDiagnoseStream = 42;

bool non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

std::size_t count_field(const json& j, const char* key, std::size_t fallback, const std::string& section) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!non_negative_integer(v))
    throw std::invalid_argument(section + "." + key + ": expected a non-negative integer");
  return v.get<std::size_t>();
}

std::vector<std::size_t> widths_field(const json& j, const std::vector<std::size_t>& fallback,
                                      const std::string& section) {
  if (!j.contains("widths")) return fallback;
  const auto& v = j.at("widths");
  if (!v.is_array() || v.size() < 2) throw std::invalid_argument(section + ".widths: expected at least two sizes");
  std::vector<std::size_t> out;
  for (const auto& w : v) {
    if (!non_negative_integer(w) || w.get<std::size_t>() == 0)
      throw std::invalid_argument(section + ".widths: sizes must be positive integers");
    out.push_back(w.get<std::size_t>());
  }
  return out;
}

const json& section(const json& root, const char* name) {
  static const json empty = json::object();
  if (!root.contains(name)) return empty;
  const auto& s = root.at(name);
  if (!s.is_object()) throw std::invalid_argument(std::string(name) + ": expected an object");
  return s;
}

void reseed(RunConfig& c) {
  c.data.synthetic.seed = c.seed;
  c.plan.seed = c.seed;
  c.teacher_plan.seed = c.seed;
}

bool needs_teacher(const distill::DistillConfig& d) { return d.method != distill::Method::ce_only; }
bool uses_ela(distill::Method m) { return m == distill::Method::ela || m == distill::Method::seal; }
bool uses_sta(distill::Method m) { return m == distill::Method::sta || m == distill::Method::seal; }

std::size_t manifest_classes(const Layout& layout) {
  if (!fs::exists(layout.manifest()))
    throw std::runtime_error("no dataset manifest at " + layout.manifest().string() + "; run gen-data first");
  return io::read_json(layout.manifest()).at("classes").get<std::size_t>();
}

data::Dataset load_split(const Layout& layout, data::Split split) {
  const std::size_t classes = manifest_classes(layout);
  return data::load_csv(split == data::Split::train ? layout.train_csv() : layout.test_csv(), split, classes);
}

void require_widths(const std::vector<std::size_t>& widths, const data::Dataset& d, const std::string& what) {
  if (widths.front() != d.dim() || widths.back() != d.classes) {
    std::ostringstream msg;
    msg << what << ".widths: expected input " << d.dim() << " and output " << d.classes << ", found "
        << widths.front() << " and " << widths.back();
    throw std::invalid_argument(msg.str());
  }
}

Tensor load_teacher_logits(const RunConfig& c, const Layout& layout, const data::Dataset& d) {
  if (!needs_teacher(c.distill)) return Tensor{};
  const fs::path p = layout.teacher_logits(d.split);
  if (!fs::exists(p))
    throw std::runtime_error("method " + distill::to_string(c.distill.method) + " needs teacher logits at " +
                             p.string() + "; run train-teacher first");
  return train::import_teacher_logits(p, d.size(), d.classes);
}

std::vector<std::size_t> net_widths(const snn::SpikingNet& net) {
  std::vector<std::size_t> w{net.input_dim()};
  for (const auto& l : net.layers) w.push_back(l.out());
  return w;
}

std::string widths_string(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t k = 0; k < w.size(); ++k) s += (k ? "-" : "") + std::to_string(w[k]);
  return s;
}

snn::SpikingNet load_student(const RunConfig& c, const Layout& layout) {
  const fs::path p = layout.student_dir(student_tag(c.distill)) / "model.json";
  if (!fs::exists(p)) throw std::runtime_error("no student checkpoint at " + p.string() + "; run train-student first");
  snn::SpikingNet net = snn::spiking_net_from_json(io::read_json(p));
  if (net_widths(net) != c.network.widths || net.timesteps != c.network.timesteps) {
    throw std::invalid_argument("checkpoint " + p.string() + " has widths " + widths_string(net_widths(net)) +
                                " and " + std::to_string(net.timesteps) + " timesteps; network config expects " +
                                widths_string(c.network.widths) + " and " + std::to_string(c.network.timesteps));
  }
  return net;
}

using FileSet = std::vector<std::pair<fs::path, std::string>>;

Written commit(const FileSet& files) {
  io::write_all_atomic(files);
  Written out;
  for (const auto& f : files) out.push_back(f.first);
  return out;
}

}  // namespace

RunConfig parse_config(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  io::require_known_keys(j, {"seed", "data", "network", "teacher", "plan", "teacher_plan", "distill", "diagnostics",
                             "energy", "paths"},
                         "config");
  if (!j.contains("seed")) throw std::invalid_argument("config: seed is required");
  if (!non_negative_integer(j.at("seed"))) throw std::invalid_argument("config.seed: expected a non-negative integer");

  RunConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();

  const json& d = section(j, "data");
  io::require_known_keys(d, {"source", "synthetic", "train_csv", "test_csv", "classes"}, "data");
  c.data.source = d.value("source", c.data.source);
  if (c.data.source != "synthetic" && c.data.source != "csv")
    throw std::invalid_argument("data.source: expected synthetic or csv, found '" + c.data.source + "'");
  c.data.synthetic = data::synthetic_spec_from_json(section(d, "synthetic"), c.seed);
  c.data.train_csv = d.value("train_csv", std::string{});
  c.data.test_csv = d.value("test_csv", std::string{});
  if (d.contains("classes")) c.data.classes = count_field(d, "classes", 0, "data");
  if (c.data.source == "csv" && (c.data.train_csv.empty() || c.data.test_csv.empty()))
    throw std::invalid_argument("data: source csv needs train_csv and test_csv");

  const json& n = section(j, "network");
  io::require_known_keys(n, {"widths", "timesteps", "encoding", "lif"}, "network");
  c.network.widths = widths_field(n, c.network.widths, "network");
  c.network.timesteps = count_field(n, "timesteps", c.network.timesteps, "network");
  if (c.network.timesteps == 0) throw std::invalid_argument("network.timesteps: must be >= 1");
  if (n.contains("encoding")) c.network.encoding = snn::parse_encoding(n.at("encoding").get<std::string>());
  const json& lif = section(n, "lif");
  io::require_known_keys(lif, {"leak_alpha", "v_threshold", "surrogate_width"}, "network.lif");
  c.network.lif.leak_alpha = lif.value("leak_alpha", c.network.lif.leak_alpha);
  c.network.lif.v_threshold = lif.value("v_threshold", c.network.lif.v_threshold);
  c.network.lif.surrogate_width = lif.value("surrogate_width", c.network.lif.surrogate_width);
  c.network.lif.validate();

  const json& t = section(j, "teacher");
  io::require_known_keys(t, {"widths"}, "teacher");
  c.teacher.widths = widths_field(t, c.teacher.widths, "teacher");

  json plan = section(j, "plan");
  c.checkpoint_every = count_field(plan, "checkpoint_every", c.checkpoint_every, "plan");
  c.eval_batch = count_field(plan, "eval_batch", c.eval_batch, "plan");
  if (c.eval_batch == 0) throw std::invalid_argument("plan.eval_batch: must be >= 1");
  plan.erase("checkpoint_every");
  plan.erase("eval_batch");
  c.plan = train::plan_from_json(plan, c.seed);
  c.teacher_plan = train::plan_from_json(section(j, "teacher_plan"), c.seed);

  c.distill = distill::distill_config_from_json(section(j, "distill"));

  const json& g = section(j, "diagnostics");
  io::require_known_keys(g, {"samples", "heatmap_sample"}, "diagnostics");
  c.diagnostics.samples = count_field(g, "samples", c.diagnostics.samples, "diagnostics");
  if (g.contains("heatmap_sample") && !g.at("heatmap_sample").is_null())
    c.diagnostics.heatmap_sample = count_field(g, "heatmap_sample", 0, "diagnostics");

  const json& e = section(j, "energy");
  io::require_known_keys(e, {"e_ac", "e_mac"}, "energy");
  c.energy.e_ac = e.value("e_ac", c.energy.e_ac);
  c.energy.e_mac = e.value("e_mac", c.energy.e_mac);
  if (!(c.energy.e_ac >= 0.0) || !(c.energy.e_mac >= 0.0))
    throw std::invalid_argument("energy: per-operation energies must be >= 0");

  const json& p = section(j, "paths");
  io::require_known_keys(p, {"out"}, "paths");
  c.out = p.value("out", c.out.string());

  reseed(c);
  return c;
}

RunConfig load_config(const fs::path& path) {
  try {
    return parse_config(io::read_json(path));
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

json to_json(const RunConfig& c) {
  json plan = train::to_json(c.plan);
  plan["checkpoint_every"] = c.checkpoint_every;
  plan["eval_batch"] = c.eval_batch;
  json data{{"source", c.data.source}, {"synthetic", data::to_json(c.data.synthetic)}};
  data["synthetic"].erase("seed");
  if (c.data.source == "csv") {
    data["train_csv"] = c.data.train_csv.string();
    data["test_csv"] = c.data.test_csv.string();
  }
  if (c.data.classes) data["classes"] = *c.data.classes;
  return {{"seed", c.seed},
          {"data", data},
          {"network",
           {{"widths", c.network.widths},
            {"timesteps", c.network.timesteps},
            {"encoding", snn::encoding_name(c.network.encoding)},
            {"lif",
             {{"leak_alpha", c.network.lif.leak_alpha},
              {"v_threshold", c.network.lif.v_threshold},
              {"surrogate_width", c.network.lif.surrogate_width}}}}},
          {"teacher", {{"widths", c.teacher.widths}}},
          {"plan", plan},
          {"teacher_plan", train::to_json(c.teacher_plan)},
          {"distill", distill::to_json(c.distill)},
          {"diagnostics",
           {{"samples", c.diagnostics.samples},
            {"heatmap_sample", c.diagnostics.heatmap_sample ? json(*c.diagnostics.heatmap_sample) : json(nullptr)}}},
          {"energy", {{"e_ac", c.energy.e_ac}, {"e_mac", c.energy.e_mac}}},
          {"paths", {{"out", c.out.string()}}}};
}

void apply_overrides(RunConfig& c, const Overrides& o) {
  if (o.seed) c.seed = *o.seed;
  if (o.method) c.distill.method = distill::parse_method(*o.method);
  if (o.ela_variant) c.distill.ela_variant = distill::parse_ela_variant(*o.ela_variant);
  if (o.sta_variant) c.distill.sta_variant = distill::parse_sta_variant(*o.sta_variant);
  if (o.out) c.out = *o.out;
  reseed(c);
}

std::string config_reference() {
  return R"(Config file (JSON). Unknown keys are rejected. Only "seed" is required.

  seed                          non-negative integer; every random stream derives from it
  data.source                   "synthetic" (default) or "csv"
  data.synthetic.classes        5
  data.synthetic.dim            16
  data.synthetic.train_per_class  100
  data.synthetic.test_per_class   100
  data.synthetic.spread         0.25  (std of each Gaussian cluster)
  data.synthetic.centroid_low   0.25
  data.synthetic.centroid_high  0.75
  data.train_csv, data.test_csv paths used when source is "csv" (rows: x0,...,x{D-1},label)
  data.classes                  class count for csv input (default: largest label + 1)
  network.widths                [16, 32, 5]  input, hidden LIF layers, classes
  network.timesteps             4
  network.encoding              "constant-current" (default) or "rate-poisson"
  network.lif.leak_alpha        0.5
  network.lif.v_threshold       1.0
  network.lif.surrogate_width   1.0
  teacher.widths                [16, 64, 5]  ReLU MLP
  plan.epochs                   30    (student)
  plan.batch_size               32
  plan.learning_rate            0.05
  plan.momentum                 0.9
  plan.weight_decay             0.0005
  plan.cosine                   true
  plan.checkpoint_every         0     (0: final weights only)
  plan.eval_batch               256
  teacher_plan.*                same keys and defaults as plan, minus checkpoint_every and eval_batch
  distill.method                "seal" (default), "ce-only", "timestep-kd", "ela", "sta", "uta"
  distill.ela_variant           "ours" (default), "S", "A", "AS", "Both"
  distill.sta_variant           "ours" (default), "no-conf", "no-sim", "dist"
  distill.temperature           4     (KD and ELA)
  distill.cls_temperature       1
  distill.sta_temperature       1     (STA and UTA)
  distill.lambda_kd             1
  distill.alpha_ela             0.6
  distill.beta_sta              0.15
  diagnostics.samples           5     (sample/timestep pairs per condition)
  diagnostics.heatmap_sample    null  (test index whose T x C logits go to heatmap.csv)
  energy.e_ac                   0.9   pJ per accumulate
  energy.e_mac                  4.6   pJ per multiply-accumulate
  paths.out                     "run" (output root, relative to the working directory)
)";
}

std::string student_tag(const distill::DistillConfig& d) {
  std::string tag = distill::to_string(d.method);
  if (uses_ela(d.method) && d.ela_variant != distill::ElaVariant::ours) tag += "-ela-" + distill::to_string(d.ela_variant);
  if (uses_sta(d.method) && d.sta_variant != distill::StaVariant::ours) tag += "-sta-" + distill::to_string(d.sta_variant);
  return tag;
}

Written cmd_gen_data(const RunConfig& c) {
  const Layout layout{c.out};
  data::Dataset train, test;
  json manifest{{"source", c.data.source}, {"seed", c.seed}};
  if (c.data.source == "synthetic") {
    auto generated = data::gen_synthetic(c.data.synthetic);
    train = std::move(generated.train);
    test = std::move(generated.test);
    manifest["synthetic"] = data::to_json(c.data.synthetic);
  } else {
    std::optional<std::size_t> classes = c.data.classes;
    if (!classes) {
      const auto a = data::load_csv(c.data.train_csv, data::Split::train);
      const auto b = data::load_csv(c.data.test_csv, data::Split::test);
      classes = std::max(a.classes, b.classes);
    }
    train = data::load_csv(c.data.train_csv, data::Split::train, classes);
    test = data::load_csv(c.data.test_csv, data::Split::test, classes);
    if (train.dim() != test.dim())
      throw std::invalid_argument("data: train has " + std::to_string(train.dim()) + " features but test has " +
                                  std::to_string(test.dim()));
    manifest["sources"] = {{"train", c.data.train_csv.string()}, {"test", c.data.test_csv.string()}};
  }
  manifest["classes"] = train.classes;
  manifest["dim"] = train.dim();
  manifest["train_samples"] = train.size();
  manifest["test_samples"] = test.size();
  manifest["files"] = {{"train", "train.csv"}, {"test", "test.csv"}};
  return commit({{layout.train_csv(), data::to_csv(train)},
                 {layout.test_csv(), data::to_csv(test)},
                 {layout.manifest(), io::json_document(manifest)}});
}

Written cmd_train_teacher(const RunConfig& c) {
  const Layout layout{c.out};
  const auto train = load_split(layout, data::Split::train);
  const auto test = load_split(layout, data::Split::test);
  require_widths(c.teacher.widths, train, "teacher");
  const auto r = train::train_teacher(train, c.teacher_plan, c.teacher.widths, &test);
  std::vector<json> metrics;
  for (const auto& e : r.metrics) metrics.push_back(train::to_json(e));
  return commit({{layout.teacher_model(), io::json_document(train::to_json(r.net))},
                 {layout.teacher_metrics(), io::json_lines(metrics)},
                 {layout.teacher_logits(data::Split::train),
                  train::teacher_logits_jsonl(train::mlp_logits(r.net, train.features))},
                 {layout.teacher_logits(data::Split::test),
                  train::teacher_logits_jsonl(train::mlp_logits(r.net, test.features))}});
}

Written cmd_train_student(const RunConfig& c) {
  const Layout layout{c.out};
  const auto train = load_split(layout, data::Split::train);
  const auto test = load_split(layout, data::Split::test);
  require_widths(c.network.widths, train, "network");
  const Tensor teacher = load_teacher_logits(c, layout, train);
  const auto init = snn::make_spiking_net(c.network.widths, c.network.timesteps, c.network.lif,
                                          stream_seed(c.seed, kStudentInitStream));
  train::StudentOptions opt;
  opt.encoding = c.network.encoding;
  opt.eval_batch = c.eval_batch;
  opt.checkpoint_every = c.checkpoint_every;
  const auto r = train::train_student(train, teacher, init, c.plan, c.distill, opt, &test);

  const fs::path dir = layout.student_dir(student_tag(c.distill));
  std::vector<json> metrics;
  for (const auto& m : r.metrics) metrics.push_back(train::to_json(m));
  FileSet files{{dir / "model.json", io::json_document(snn::to_json(r.net))},
                {dir / "metrics.jsonl", io::json_lines(metrics)}};
  for (const auto& cp : r.checkpoints)
    files.emplace_back(dir / ("checkpoint-epoch-" + std::to_string(cp.epoch) + ".json"),
                       io::json_document(snn::to_json(cp.net)));
  return commit(files);
}

Written cmd_eval(const RunConfig& c) {
  const Layout layout{c.out};
  const auto net = load_student(c, layout);
  json report{{"tag", student_tag(c.distill)}, {"method", distill::to_string(c.distill.method)}};
  for (const auto split : {data::Split::train, data::Split::test}) {
    const auto d = load_split(layout, split);
    require_widths(c.network.widths, d, "network");
    const auto stream = split == data::Split::train ? kEvalTrainStream : kEvalTestStream;
    const auto logits = train::predict(net, d, c.network.encoding, stream_seed(c.seed, stream), c.eval_batch);
    report[data::split_name(split)] = diag::to_json(diag::temporal_accuracy_report(logits, d.labels));
  }
  return commit({{layout.student_dir(student_tag(c.distill)) / "eval.json", io::json_document(report)}});
}

Written cmd_diagnose(const RunConfig& c) {
  const Layout layout{c.out};
  const auto net = load_student(c, layout);
  const auto test = load_split(layout, data::Split::test);
  require_widths(c.network.widths, test, "network");
  const Tensor teacher = load_teacher_logits(c, layout, test);
  const auto encoded =
      snn::encode_input(test.features, c.network.encoding, net.timesteps, stream_seed(c.seed, kDiagnoseStream));
  const auto report =
      diag::run_diagnostics(net, encoded, test.labels, teacher, c.distill, {c.diagnostics.samples, c.seed});

  const fs::path dir = layout.student_dir(student_tag(c.distill));
  FileSet files{{dir / "diagnostics.jsonl", io::json_lines(diag::to_jsonl(report))}};
  if (c.diagnostics.heatmap_sample) {
    const std::size_t b = *c.diagnostics.heatmap_sample;
    if (b >= test.size())
      throw std::invalid_argument("diagnostics.heatmap_sample: index " + std::to_string(b) + " is outside the " +
                                  std::to_string(test.size()) + " test samples");
    std::vector<Tensor> one;
    for (const auto& step : encoded) {
      const auto r = step.row(b);
      one.push_back(Tensor::matrix(1, step.cols(), std::vector<double>(r.begin(), r.end())));
    }
    files.emplace_back(dir / "heatmap.csv", diag::heatmap_csv(snn::forward_values(net, one).sample(0)));
  }
  return commit(files);
}

Written cmd_energy(const RunConfig& c) {
  const Layout layout{c.out};
  const auto net = load_student(c, layout);
  const auto test = load_split(layout, data::Split::test);
  require_widths(c.network.widths, test, "network");
  snn::SpikeRecord record;
  train::predict(net, test, c.network.encoding, stream_seed(c.seed, kEvalTestStream), c.eval_batch, &record);
  const auto report = energy::energy_report(energy::trace_from_record(net, record), energy::mac_topology(net), c.energy);
  json j = energy::to_json(report, c.energy);
  j["tag"] = student_tag(c.distill);
  return commit({{layout.student_dir(student_tag(c.distill)) / "energy.json", io::json_document(j)}});
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"gen-data", "train-teacher", "train-student", "eval", "diagnose",
                                              "energy"};
  return names;
}

Written run_command(const std::string& name, const RunConfig& c) {
  if (name == "gen-data") return cmd_gen_data(c);
  if (name == "train-teacher") return cmd_train_teacher(c);
  if (name == "train-student") return cmd_train_student(c);
  if (name == "eval") return cmd_eval(c);
  if (name == "diagnose") return cmd_diagnose(c);
  if (name == "energy") return cmd_energy(c);
  throw std::invalid_argument("unknown command '" + name + "'");
}

}  // namespace spikekd::cli
