#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "skelnoise/config.hpp"
#include "skelnoise/dataset.hpp"
#include "skelnoise/noise.hpp"

namespace skelnoise {

struct SplitData {
  Dataset train;
  Dataset test;
};

/// Loads the configured dataset or generates the synthetic one.
Dataset load_experiment_data(const ExperimentConfig& config);

/// Partitions by the split protocol. Both halves keep the input order.
/// Throws InvalidConfiguration when either side would be empty.
SplitData split_dataset(const Dataset& data, const SplitSpec& split, std::uint64_t seed);

/// Stage names in execution order. "plain" is the no-defence baseline
/// (joint modality, ordinary SGD on every noisy label).
inline constexpr std::array<std::string_view, 10> kStages{
    "data", "inject", "derive", "plain", "cross-train:joint", "cross-train:bone", "cross-train:motion",
    "select", "fuse", "evaluate"};

struct PipelineOptions {
  /// Last stage to execute; empty runs everything.
  std::string stop_after;
  /// When non-empty, only these checkpointed stages run (their cheap
  /// prerequisites always run). Lets the three cross-training stages go to
  /// separate processes sharing one output directory.
  std::vector<std::string> only;
  /// Reuse checkpointed stages whose stage key and artifact hashes match.
  bool resume = true;
  std::function<void(const std::string&)> log;
};

struct RunResult {
  nlohmann::json report;  // empty until the evaluate stage has run
  std::filesystem::path report_path;
  std::string report_sha256;
  std::vector<std::string> executed;
  std::vector<std::string> resumed;
  nlohmann::json timings;  // seconds per stage, kept out of the report
};

/// Runs the stages in order, checkpointing after each one under
/// config.output_dir. A failing stage is rethrown as StageFailed naming the
/// stage; finished stages stay on disk and are picked up by the next call.
/// Evaluation only ever sees the untouched test split.
RunResult run_pipeline(const ExperimentConfig& config, const PipelineOptions& options = {});

/// One row per arm and noise ratio: plain, cross-training (joint expert),
/// cross-training + fixed-weight ensemble, full pipeline. Every ratio runs
/// in `<output_dir>/r<ratio>`; all arms of a ratio share one noise manifest.
nlohmann::json run_ablation_suite(const ExperimentConfig& config, const PipelineOptions& options = {});

/// Writes the ablation table as JSON and CSV plus the accuracy chart.
void write_ablation_outputs(const nlohmann::json& table, const std::filesystem::path& dir);

/// Accuracy chart (x = noise ratio) for one report or an ablation table,
/// and the gate-weight evolution chart when fine-tuning ran. SVG files.
/// Throws NothingToPlot when there is no completed run.
std::vector<std::filesystem::path> emit_plots(const nlohmann::json& report_or_table,
                                              const std::filesystem::path& dir);

}  // namespace skelnoise
