#include "skelnoise/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "skelnoise/error.hpp"
#include "skelnoise/json_io.hpp"
#include "skelnoise/kernels.hpp"
#include "skelnoise/rng.hpp"

namespace skelnoise {

namespace fs = std::filesystem;
using nlohmann::json;

SKELNOISE_JSON_DEFINE(SplitSpec, protocol, test_fraction, test_subjects, test_cameras)

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"name", c.name},
           {"dataset_path", c.dataset_path},
           {"dataset_format", c.dataset_format},
           {"synthetic", c.synthetic},
           {"data_seed", c.data_seed},
           {"split", c.split},
           {"noise_ratio", c.noise_ratio},
           {"seed", c.seed},
           {"warmup_epochs", c.warmup_epochs},
           {"select_fraction", c.select_fraction ? json(*c.select_fraction) : json(nullptr)},
           {"holdout_fraction", c.holdout_fraction},
           {"backbone", c.backbone},
           {"train", c.train},
           {"gate_widths", c.gate_widths},
           {"fusion", c.fusion},
           {"ensemble_weights", c.ensemble_weights},
           {"ablation_ratios", c.ablation_ratios},
           {"output_dir", c.output_dir},
           {"backend", c.backend},
           {"threads", c.threads}};
}

void from_json(const json& j, ExperimentConfig& c) {
  static const std::vector<std::string> known{
      "name",          "dataset_path", "dataset_format",   "synthetic",       "data_seed",        "split",
      "noise_ratio",   "seed",         "warmup_epochs",    "select_fraction", "holdout_fraction", "backbone",
      "train",         "gate_widths",  "fusion",           "ensemble_weights", "ablation_ratios", "output_dir",
      "backend",       "threads"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      fail(ErrorKind::InvalidConfiguration, "unknown config field '" + key + "'");
  const ExperimentConfig d;
  c.name = j.value("name", d.name);
  c.dataset_path = j.value("dataset_path", d.dataset_path);
  c.dataset_format = j.value("dataset_format", d.dataset_format);
  c.synthetic = j.value("synthetic", d.synthetic);
  c.data_seed = j.value("data_seed", d.data_seed);
  c.split = j.value("split", d.split);
  c.noise_ratio = j.value("noise_ratio", d.noise_ratio);
  c.seed = j.value("seed", d.seed);
  c.warmup_epochs = j.value("warmup_epochs", d.warmup_epochs);
  c.select_fraction.reset();
  if (j.contains("select_fraction") && !j.at("select_fraction").is_null())
    c.select_fraction = j.at("select_fraction").get<double>();
  c.holdout_fraction = j.value("holdout_fraction", d.holdout_fraction);
  c.backbone = j.value("backbone", d.backbone);
  c.train = j.value("train", d.train);
  c.gate_widths = j.value("gate_widths", d.gate_widths);
  c.fusion = j.value("fusion", d.fusion);
  c.ensemble_weights = j.value("ensemble_weights", d.ensemble_weights);
  c.ablation_ratios = j.value("ablation_ratios", d.ablation_ratios);
  c.output_dir = j.value("output_dir", d.output_dir);
  c.backend = j.value("backend", d.backend);
  c.threads = j.value("threads", d.threads);
}

std::uint64_t ExperimentConfig::stage_seed(std::string_view stage) const { return derive_seed(seed, stage); }

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::InvalidConfiguration, what);
}

}  // namespace

void validate(const ExperimentConfig& c) {
  require(!c.name.empty(), "name must not be empty");
  if (!c.dataset_path.empty()) {
    require(fs::exists(c.dataset_path), "dataset_path '" + c.dataset_path + "' does not exist");
    require(c.dataset_format == "array" || c.dataset_format == "synthetic",
            "dataset_format must be 'array' or 'synthetic'");
  }
  require(c.synthetic.class_count >= 2, "synthetic.class_count must be >= 2");
  require(c.synthetic.frames >= 2, "synthetic.frames must be >= 2");
  require(c.split.protocol == "cross-subject" || c.split.protocol == "cross-view" || c.split.protocol == "random",
          "split.protocol must be cross-subject, cross-view or random");
  require(c.split.test_fraction > 0.0 && c.split.test_fraction < 1.0, "split.test_fraction must lie in (0, 1)");
  require(c.noise_ratio >= 0.0 && c.noise_ratio < 1.0, "noise_ratio must lie in [0, 1)");
  require(c.warmup_epochs >= 1, "warmup_epochs must be >= 1");
  const double p = c.effective_select_fraction();
  require(p > 0.0 && p <= 1.0, "select_fraction must lie in (0, 1]");
  require(c.holdout_fraction > 0.0 && c.holdout_fraction < 1.0, "holdout_fraction must lie in (0, 1)");
  require(!c.backbone.widths.empty(), "backbone.widths must not be empty");
  for (int w : c.backbone.widths) require(w > 0, "backbone.widths must be positive");
  require(c.backbone.temporal_kernel >= 1 && c.backbone.temporal_kernel % 2 == 1,
          "backbone.temporal_kernel must be odd and positive");
  require(c.train.epochs >= 1, "train.epochs must be >= 1");
  require(c.train.batch_size >= 1, "train.batch_size must be >= 1");
  require(c.train.learning_rate > 0.0, "train.learning_rate must be positive");
  require(!c.gate_widths.empty(), "gate_widths must not be empty");
  require(c.fusion.epochs >= 0 && c.fusion.batch_size >= 1, "fusion epochs/batch_size invalid");
  for (double w : c.ensemble_weights) require(std::isfinite(w) && w >= 0.0, "ensemble_weights must be finite and >= 0");
  require(c.ensemble_weights[0] + c.ensemble_weights[1] + c.ensemble_weights[2] > 0.0,
          "ensemble_weights must not all be zero");
  for (double r : c.ablation_ratios) require(r >= 0.0 && r < 1.0, "ablation_ratios must lie in [0, 1)");
  require(!c.output_dir.empty(), "output_dir must not be empty");
  try {
    (void)kernels::backend_from_string(c.backend);
  } catch (const Error&) {
    fail(ErrorKind::InvalidConfiguration, "backend must be 'serial' or 'openmp'");
  }
  require(c.threads >= 0, "threads must be >= 0");
}

ExperimentConfig load_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorKind::Io, "missing config " + file.string());
  try {
    return json::parse(in).get<ExperimentConfig>();
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidConfiguration, file.string() + ": " + e.what());
  }
}

void save_config(const ExperimentConfig& config, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) fail(ErrorKind::Io, "cannot write " + file.string());
  out << json(config).dump(2) << '\n';
}

std::string config_fingerprint(const ExperimentConfig& config) { return json(config).dump(); }

ExperimentConfig toy_config() {
  ExperimentConfig c;
  c.name = "toy";
  c.synthetic.class_count = 4;
  c.synthetic.samples_per_class = 225;
  c.synthetic.frames = 8;
  c.synthetic.class_separation = 2.5;
  c.synthetic.style_strength = 1.5;
  c.synthetic.coordinate_noise = 0.03;
  c.split.test_fraction = 1.0 / 3.0;  // 5 of 15 subjects -> 600 / 300
  c.backbone.widths = {16, 32};
  c.backbone.temporal_kernel = 3;
  c.train.epochs = 100;
  c.train.batch_size = 16;
  c.train.learning_rate = 0.05;
  c.train.weight_decay = 0.0;
  c.train.lr_decay_epochs = {};
  c.gate_widths = {8};
  c.fusion.epochs = 10;
  c.fusion.batch_size = 32;
  c.fusion.learning_rate = 0.05;
  c.fusion.weight_decay = 0.0;
  c.output_dir = "runs/toy";
  return c;
}

}  // namespace skelnoise
