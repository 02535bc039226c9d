#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "skelnoise/skeleton.hpp"

namespace skelnoise {

struct Dataset {
  int class_count = 0;
  int joint_count = 0;
  std::string topology;  // topology name; empty when unknown
  std::vector<SkeletonSequence> samples;

  bool operator==(const Dataset&) const = default;
};

/// Knobs of the procedural benchmark. Each class owns a set of sinusoidal
/// joint trajectories; samples add subject scale, camera yaw, tempo and
/// amplitude jitter plus Gaussian coordinate noise.
struct SyntheticSpec {
  int class_count = 4;
  int samples_per_class = 200;
  int frames = 16;
  std::string topology = "toy9";
  int subjects = 15;
  int cameras = 3;
  double camera_yaw_deg = 20.0;
  double amplitude = 0.25;
  /// Scale of the class-specific part of each template relative to a shared
  /// motion common to all classes; smaller means harder to separate.
  double class_separation = 1.0;
  double amplitude_jitter = 0.2;
  double tempo_jitter = 0.15;
  double coordinate_noise = 0.03;
  /// Strength of a random per-sample trajectory on top of the class motion.
  double style_strength = 0.0;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

enum class DatasetFormat { ArrayContainer, SyntheticManifest };

DatasetFormat dataset_format_from_string(const std::string& name);

/// Deterministic given seed; samples ordered by sample_id.
std::vector<SkeletonSequence> generate_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);
Dataset make_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

/// Writes `dir/manifest.json` plus one `dir/samples/<id>.skt` tensor per sample.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);

/// ArrayContainer: `path` is the dataset directory or its manifest.json.
/// SyntheticManifest: `path` is a JSON file {"spec": {...}, "seed": n}.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format);

/// Single tensor file: "SKLT", u32 version, u32 T, V, C, then T*V*C float32,
/// all little-endian.
void write_tensor_file(const Tensor3f& tensor, const std::filesystem::path& file);
Tensor3f read_tensor_file(const std::filesystem::path& file);

}  // namespace skelnoise
