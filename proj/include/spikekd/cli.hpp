#pragma once

// Run configuration and the command implementations behind the `spikekd`
// executable. Commands throw on any error and write their outputs as one
// all-or-nothing group.
//
// Output layout below `paths.out`:
//   data/{train.csv, test.csv, manifest.json}
//   teacher/{model.json, metrics.jsonl, logits-train.jsonl, logits-test.jsonl}
//   student/<tag>/{model.json, metrics.jsonl, checkpoint-epoch-<k>.json,
//                  eval.json, diagnostics.jsonl, heatmap.csv, energy.json}
// where <tag> is the method name, suffixed with non-default variants.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spikekd/data.hpp"
#include "spikekd/energy.hpp"
#include "spikekd/losses.hpp"
#include "spikekd/snn.hpp"
#include "spikekd/train.hpp"

namespace spikekd::cli {

struct DataSection {
  std::string source = "synthetic";  // "synthetic" or "csv"
  data::SyntheticSpec synthetic;
  std::filesystem::path train_csv;
  std::filesystem::path test_csv;
  std::optional<std::size_t> classes;
};

struct NetworkSection {
  std::vector<std::size_t> widths{16, 32, 5};
  std::size_t timesteps = 4;
  snn::Encoding encoding = snn::Encoding::constant_current;
  snn::LIFParams lif;
};

struct TeacherSection {
  std::vector<std::size_t> widths{16, 64, 5};
};

struct DiagnosticsSection {
  std::size_t samples = 5;
  std::optional<std::size_t> heatmap_sample;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataSection data;
  NetworkSection network;
  TeacherSection teacher;
  train::TrainPlan plan;          // student
  train::TrainPlan teacher_plan;
  std::size_t checkpoint_every = 0;
  std::size_t eval_batch = 256;
  distill::DistillConfig distill;
  DiagnosticsSection diagnostics;
  energy::EnergyModel energy;
  std::filesystem::path out = "run";
};

/// Rejects unknown keys in every section and requires `seed`.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
/// Fully resolved configuration, defaults included.
nlohmann::json to_json(const RunConfig& c);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<std::string> ela_variant;
  std::optional<std::string> sta_variant;
  std::optional<std::filesystem::path> out;
};
void apply_overrides(RunConfig& c, const Overrides& o);

/// Every config key with its default, for `--help`.
std::string config_reference();

std::string student_tag(const distill::DistillConfig& d);

struct Layout {
  std::filesystem::path root;

  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path train_csv() const { return data_dir() / "train.csv"; }
  std::filesystem::path test_csv() const { return data_dir() / "test.csv"; }
  std::filesystem::path manifest() const { return data_dir() / "manifest.json"; }
  std::filesystem::path teacher_dir() const { return root / "teacher"; }
  std::filesystem::path teacher_model() const { return teacher_dir() / "model.json"; }
  std::filesystem::path teacher_metrics() const { return teacher_dir() / "metrics.jsonl"; }
  std::filesystem::path teacher_logits(data::Split s) const {
    return teacher_dir() / (std::string("logits-") + data::split_name(s) + ".jsonl");
  }
  std::filesystem::path student_dir(const std::string& tag) const { return root / "student" / tag; }
};

using Written = std::vector<std::filesystem::path>;

Written cmd_gen_data(const RunConfig& c);
Written cmd_train_teacher(const RunConfig& c);
Written cmd_train_student(const RunConfig& c);
Written cmd_eval(const RunConfig& c);
Written cmd_diagnose(const RunConfig& c);
Written cmd_energy(const RunConfig& c);

/// Dispatches on "gen-data", "train-teacher", "train-student", "eval",
/// "diagnose" or "energy".
Written run_command(const std::string& name, const RunConfig& c);
const std::vector<std::string>& command_names();

}  // namespace spikekd::cli
