#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "skelnoise/dataset.hpp"

namespace skelnoise {

/// Training data after label corruption. `samples[i].label` holds the noisy
/// label; `true_labels[i]` the original one.
struct NoisyDataset {
  std::vector<SkeletonSequence> samples;
  std::vector<int> true_labels;
  std::vector<std::uint8_t> corrupted;
  double noise_ratio = 0.0;
  std::uint64_t seed = 0;
  int class_count = 0;

  std::size_t size() const noexcept { return samples.size(); }
  std::size_t corrupted_count() const;
  /// Index of a sample id; throws ErrorKind::Lookup when absent.
  std::size_t index_of(const std::string& sample_id) const;

 private:
  mutable std::unordered_map<std::string, std::size_t> index_;
};

struct NoiseRecord {
  std::string sample_id;
  int true_label = 0;
  int noisy_label = 0;

  bool operator==(const NoiseRecord&) const = default;
};

/// Audit trail of one injection. Contains no wall-clock fields, so equal
/// inputs serialise to identical bytes.
struct NoiseManifest {
  std::string noise_type = "symmetric";
  std::uint64_t seed = 0;
  double noise_ratio = 0.0;
  int class_count = 0;
  std::vector<NoiseRecord> records;

  bool operator==(const NoiseManifest&) const = default;
};

void to_json(nlohmann::json& j, const NoiseManifest& m);
void from_json(const nlohmann::json& j, NoiseManifest& m);

/// floor(ratio * n), robust to ratios like 0.29 whose product lands just
/// below an integer in binary floating point.
std::size_t corruption_count(double ratio, std::size_t n);

/// Flips exactly corruption_count(ratio, n) labels, chosen uniformly without
/// replacement, each to a uniformly drawn class other than the true one.
/// Must only ever be applied to a training split.
NoisyDataset inject_symmetric_noise(const Dataset& data, double ratio, std::uint64_t seed);

/// Class-dependent noise is not supported; always throws NotImplemented.
NoisyDataset inject_asymmetric_noise(const Dataset& data, std::span<const double> confusion,
                                     std::uint64_t seed);

NoiseManifest make_manifest(const NoisyDataset& noisy);
/// Rebuilds the noisy view of `data` from a manifest; throws Inconsistent if
/// ids or true labels disagree.
NoisyDataset apply_manifest(const Dataset& data, const NoiseManifest& manifest);

struct SelectorQuality {
  std::optional<double> precision;  // empty when nothing was selected
  double recall = 0.0;
  std::size_t selected = 0;
  std::size_t selected_clean = 0;
};

SelectorQuality selector_quality(std::span<const std::string> selected_ids, const NoisyDataset& noisy);
/// Index-based variant; indices must be distinct and < noisy.size().
SelectorQuality selector_quality(std::span<const std::size_t> selected, const NoisyDataset& noisy);

}  // namespace skelnoise
