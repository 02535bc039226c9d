#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "skelnoise/cm_moe.hpp"
#include "skelnoise/cross_training.hpp"
#include "skelnoise/dataset.hpp"
#include "skelnoise/model.hpp"

namespace skelnoise {

/// How samples are divided into train and test.
///   cross-subject: test = `test_subjects`, or the last ceil(f * S) subject ids
///   cross-view:    test = `test_cameras`, or the last ceil(f * C) camera ids
///   random:        seeded ceil(f * n) samples
struct SplitSpec {
  std::string protocol = "cross-subject";
  double test_fraction = 0.2;
  std::vector<int> test_subjects;
  std::vector<int> test_cameras;

  bool operator==(const SplitSpec&) const = default;
};

void to_json(nlohmann::json& j, const SplitSpec& s);
void from_json(const nlohmann::json& j, SplitSpec& s);

struct ExperimentConfig {
  std::string name = "experiment";

  // dataset: an array container on disk, or the synthetic generator when
  // `dataset_path` is empty
  std::string dataset_path;
  std::string dataset_format = "array";
  SyntheticSpec synthetic;
  std::uint64_t data_seed = 1;
  SplitSpec split;

  double noise_ratio = 0.4;
  std::uint64_t seed = 1;  // every stage seed is derived from this one
  int warmup_epochs = 10;  // T_in
  /// Fraction kept per modality by global selection; 1 - noise_ratio when unset.
  std::optional<double> select_fraction;
  /// Share of the noisy training split held out to pick the better peer.
  double holdout_fraction = 0.1;

  GraphNetConfig backbone;
  TrainHyperparams train;
  std::vector<int> gate_widths{16, 16};
  FusionHyperparams fusion;
  std::array<double, 3> ensemble_weights{0.6, 0.6, 0.4};
  std::vector<double> ablation_ratios{0.2, 0.4, 0.5, 0.8};

  std::string output_dir = "runs/experiment";
  std::string backend = "openmp";
  int threads = 0;  // 0 leaves the OpenMP default

  double effective_select_fraction() const { return select_fraction.value_or(1.0 - noise_ratio); }
  std::uint64_t stage_seed(std::string_view stage) const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Throws InvalidConfiguration naming the first offending field. Checks that
/// a dataset path exists when one is given.
void validate(const ExperimentConfig& config);

ExperimentConfig load_config(const std::filesystem::path& file);
void save_config(const ExperimentConfig& config, const std::filesystem::path& file);

/// Canonical JSON text of the config; the run's identity.
std::string config_fingerprint(const ExperimentConfig& config);

/// Small CPU-sized setup: 4 classes, 600 train / 300 test, short schedules.
ExperimentConfig toy_config();

}  // namespace skelnoise
