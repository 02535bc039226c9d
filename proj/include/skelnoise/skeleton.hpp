#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace skelnoise {

/// Dense (T, V, C) float tensor, row-major with C fastest.
class Tensor3f {
 public:
  Tensor3f() = default;
  Tensor3f(int frames, int joints, int channels);

  int frames() const noexcept { return frames_; }
  int joints() const noexcept { return joints_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }

  float& at(int t, int v, int c) { return data_[index(t, v, c)]; }
  float at(int t, int v, int c) const { return data_[index(t, v, c)]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool same_shape(const Tensor3f& other) const noexcept {
    return frames_ == other.frames_ && joints_ == other.joints_ && channels_ == other.channels_;
  }
  bool operator==(const Tensor3f& other) const = default;

 private:
  std::size_t index(int t, int v, int c) const noexcept {
    return (static_cast<std::size_t>(t) * joints_ + v) * channels_ + c;
  }

  int frames_ = 0;
  int joints_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

inline constexpr int kCoordinates = 3;

struct SkeletonSequence {
  std::string sample_id;
  Tensor3f frames;  // (T, V, 3)
  int label = 0;
  int subject_id = 0;
  int camera_id = 0;

  bool operator==(const SkeletonSequence&) const = default;
};

/// Throws if the sequence breaks its invariants (T >= 2, C == 3, finite
/// coordinates, 0 <= label < class_count).
void validate(const SkeletonSequence& seq, int class_count);

/// Joint graph. bone_pairs[k] = (child, parent); the root pairs with itself.
class SkeletonTopology {
 public:
  SkeletonTopology(std::string name, int joint_count, std::vector<std::pair<int, int>> bone_pairs);

  /// 9-joint stick figure used by the synthetic benchmark (root 0 = pelvis).
  static SkeletonTopology toy9();
  /// NTU RGB+D 25-joint layout; root is the spine joint (0-based 20).
  static SkeletonTopology ntu25();
  /// Path 0-1-...-(V-1) rooted at joint 0; named "chain<V>".
  static SkeletonTopology chain(int joints);
  static SkeletonTopology by_name(std::string_view name);

  const std::string& name() const noexcept { return name_; }
  int joint_count() const noexcept { return joint_count_; }
  int root() const noexcept { return root_; }
  std::span<const std::pair<int, int>> bone_pairs() const noexcept { return bone_pairs_; }
  /// Parent of joint i (root maps to itself).
  int parent(int joint) const { return parent_.at(static_cast<std::size_t>(joint)); }

  /// V x V binary adjacency, symmetric with unit diagonal.
  std::span<const double> adjacency() const noexcept { return adjacency_; }
  /// D^-1/2 A D^-1/2 of the adjacency above, used by graph convolutions.
  std::vector<double> normalized_adjacency() const;

 private:
  std::string name_;
  int joint_count_;
  int root_ = -1;
  std::vector<std::pair<int, int>> bone_pairs_;
  std::vector<int> parent_;
  std::vector<double> adjacency_;
};

enum class Modality { Joint = 0, Bone = 1, Motion = 2 };
inline constexpr std::array<Modality, 3> kModalities{Modality::Joint, Modality::Bone, Modality::Motion};

std::string_view to_string(Modality m) noexcept;
Modality modality_from_string(std::string_view name);

struct ModalityTensor {
  Modality modality = Modality::Joint;
  Tensor3f data;
};

ModalityTensor derive_joint(const SkeletonSequence& seq);
/// out[t, i] = frames[t, parent(i)] - frames[t, i] for every bone pair (i, parent).
ModalityTensor derive_bone(const SkeletonSequence& seq, const SkeletonTopology& topo);
/// out[t] = frames[t + 1] - frames[t]; the last frame is zero padding.
ModalityTensor derive_motion(const SkeletonSequence& seq);
ModalityTensor derive(Modality m, const SkeletonSequence& seq, const SkeletonTopology& topo);

/// Derives one modality for a whole dataset. Output order matches input.
std::vector<ModalityTensor> derive_all(Modality m, std::span<const SkeletonSequence> data,
                                       const SkeletonTopology& topo, bool parallel = true);

/// Translates every frame so that the root joint of frame 0 sits at the origin.
SkeletonSequence center_on_root(SkeletonSequence seq, const SkeletonTopology& topo);

}  // namespace skelnoise
