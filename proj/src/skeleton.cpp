#include "skelnoise/skeleton.hpp"

#include <cmath>
#include <cstdint>
#include <exception>
#include <string>

#include "skelnoise/error.hpp"

namespace skelnoise {

Tensor3f::Tensor3f(int frames, int joints, int channels)
    : frames_(frames), joints_(joints), channels_(channels) {
  if (frames < 0 || joints < 0 || channels < 0)
    fail(ErrorKind::Dimension, "negative tensor extent");
  data_.assign(static_cast<std::size_t>(frames) * joints * channels, 0.0f);
}

void validate(const SkeletonSequence& seq, int class_count) {
  const Tensor3f& f = seq.frames;
  if (f.frames() < 2)
    fail(ErrorKind::InsufficientFrames, seq.sample_id + ": needs at least 2 frames");
  if (f.channels() != kCoordinates)
    fail(ErrorKind::Dimension, seq.sample_id + ": expected 3 coordinates per joint");
  if (f.joints() < 1) fail(ErrorKind::Dimension, seq.sample_id + ": no joints");
  for (float x : f.data())
    if (!std::isfinite(x)) fail(ErrorKind::InvalidArgument, seq.sample_id + ": non-finite coordinate");
  if (seq.label < 0 || seq.label >= class_count)
    fail(ErrorKind::InvalidLabel, seq.sample_id + ": label " + std::to_string(seq.label) +
                                      " outside [0, " + std::to_string(class_count) + ")");
}

SkeletonTopology::SkeletonTopology(std::string name, int joint_count,
                                   std::vector<std::pair<int, int>> bone_pairs)
    : name_(std::move(name)), joint_count_(joint_count), bone_pairs_(std::move(bone_pairs)) {
  if (joint_count_ < 1) fail(ErrorKind::InvalidArgument, "topology needs at least one joint");
  if (static_cast<int>(bone_pairs_.size()) != joint_count_)
    fail(ErrorKind::InvalidArgument, "topology '" + name_ + "' must list exactly one bone per joint");
  parent_.assign(joint_count_, -1);
  for (auto [child, parent] : bone_pairs_) {
    if (child < 0 || child >= joint_count_ || parent < 0 || parent >= joint_count_)
      fail(ErrorKind::InvalidArgument, "bone pair index out of range in '" + name_ + "'");
    if (parent_[child] != -1)
      fail(ErrorKind::InvalidArgument, "joint " + std::to_string(child) + " has two parents");
    parent_[child] = parent;
    if (child == parent) {
      if (root_ != -1) fail(ErrorKind::InvalidArgument, "topology has more than one root");
      root_ = child;
    }
  }
  if (root_ == -1) fail(ErrorKind::InvalidArgument, "topology '" + name_ + "' has no self-paired root");
  // Every joint must reach the root, otherwise the pairs contain a cycle.
  for (int v = 0; v < joint_count_; ++v) {
    int cur = v;
    for (int steps = 0; cur != root_; ++steps) {
      if (steps > joint_count_) fail(ErrorKind::InvalidArgument, "bone pairs contain a cycle");
      cur = parent_[cur];
    }
  }
  adjacency_.assign(static_cast<std::size_t>(joint_count_) * joint_count_, 0.0);
  for (int v = 0; v < joint_count_; ++v) adjacency_[v * joint_count_ + v] = 1.0;
  for (auto [child, parent] : bone_pairs_) {
    adjacency_[child * joint_count_ + parent] = 1.0;
    adjacency_[parent * joint_count_ + child] = 1.0;
  }
}

SkeletonTopology SkeletonTopology::toy9() {
  // pelvis, chest, head, l-elbow, l-hand, r-elbow, r-hand, l-foot, r-foot
  return SkeletonTopology("toy9", 9,
                          {{0, 0}, {1, 0}, {2, 1}, {3, 1}, {4, 3}, {5, 1}, {6, 5}, {7, 0}, {8, 0}});
}

SkeletonTopology SkeletonTopology::ntu25() {
  // 1-based NTU RGB+D pairs (child, parent); joint 21 (spine) is the root.
  const std::pair<int, int> one_based[] = {
      {1, 2},   {2, 21},  {3, 21},  {4, 3},   {5, 21},  {6, 5},   {7, 6},   {8, 7},   {9, 21},
      {10, 9},  {11, 10}, {12, 11}, {13, 1},  {14, 13}, {15, 14}, {16, 15}, {17, 1},  {18, 17},
      {19, 18}, {20, 19}, {21, 21}, {22, 23}, {23, 8},  {24, 25}, {25, 12}};
  std::vector<std::pair<int, int>> pairs;
  for (auto [c, p] : one_based) pairs.emplace_back(c - 1, p - 1);
  return SkeletonTopology("ntu25", 25, std::move(pairs));
}

SkeletonTopology SkeletonTopology::chain(int joints) {
  if (joints < 1) fail(ErrorKind::InvalidArgument, "chain topology needs at least one joint");
  std::vector<std::pair<int, int>> pairs{{0, 0}};
  for (int v = 1; v < joints; ++v) pairs.emplace_back(v, v - 1);
  return SkeletonTopology("chain" + std::to_string(joints), joints, std::move(pairs));
}

SkeletonTopology SkeletonTopology::by_name(std::string_view name) {
  if (name == "toy9") return toy9();
  if (name == "ntu25") return ntu25();
  if (name.starts_with("chain") && name.size() > 5 && name.size() < 9 &&
      name.find_first_not_of("0123456789", 5) == std::string_view::npos)
    return chain(std::stoi(std::string(name.substr(5))));
  fail(ErrorKind::InvalidArgument, "unknown topology '" + std::string(name) + "'");
}

std::vector<double> SkeletonTopology::normalized_adjacency() const {
  const int V = joint_count_;
  std::vector<double> inv_sqrt_degree(V, 0.0);
  for (int v = 0; v < V; ++v) {
    double d = 0.0;
    for (int u = 0; u < V; ++u) d += adjacency_[v * V + u];
    inv_sqrt_degree[v] = 1.0 / std::sqrt(d);
  }
  std::vector<double> out(adjacency_.size());
  for (int v = 0; v < V; ++v)
    for (int u = 0; u < V; ++u)
      out[v * V + u] = inv_sqrt_degree[v] * adjacency_[v * V + u] * inv_sqrt_degree[u];
  return out;
}

std::string_view to_string(Modality m) noexcept {
  switch (m) {
    case Modality::Joint: return "joint";
    case Modality::Bone: return "bone";
    case Modality::Motion: return "motion";
  }
  return "joint";
}

Modality modality_from_string(std::string_view name) {
  if (name == "joint") return Modality::Joint;
  if (name == "bone") return Modality::Bone;
  if (name == "motion") return Modality::Motion;
  fail(ErrorKind::InvalidArgument, "unknown modality '" + std::string(name) + "'");
}

ModalityTensor derive_joint(const SkeletonSequence& seq) {
  return ModalityTensor{Modality::Joint, seq.frames};
}

ModalityTensor derive_bone(const SkeletonSequence& seq, const SkeletonTopology& topo) {
  const Tensor3f& in = seq.frames;
  if (in.joints() != topo.joint_count())
    fail(ErrorKind::Dimension, seq.sample_id + ": sequence has " + std::to_string(in.joints()) +
                                   " joints, topology '" + topo.name() + "' has " +
                                   std::to_string(topo.joint_count()));
  Tensor3f out(in.frames(), in.joints(), in.channels());
  for (int t = 0; t < in.frames(); ++t)
    for (auto [child, parent] : topo.bone_pairs())
      for (int c = 0; c < in.channels(); ++c)
        out.at(t, child, c) = in.at(t, parent, c) - in.at(t, child, c);
  return ModalityTensor{Modality::Bone, std::move(out)};
}

ModalityTensor derive_motion(const SkeletonSequence& seq) {
  const Tensor3f& in = seq.frames;
  if (in.frames() < 2)
    fail(ErrorKind::InsufficientFrames, seq.sample_id + ": motion needs at least 2 frames");
  Tensor3f out(in.frames(), in.joints(), in.channels());
  for (int t = 0; t + 1 < in.frames(); ++t)
    for (int v = 0; v < in.joints(); ++v)
      for (int c = 0; c < in.channels(); ++c) out.at(t, v, c) = in.at(t + 1, v, c) - in.at(t, v, c);
  return ModalityTensor{Modality::Motion, std::move(out)};
}

ModalityTensor derive(Modality m, const SkeletonSequence& seq, const SkeletonTopology& topo) {
  switch (m) {
    case Modality::Joint: return derive_joint(seq);
    case Modality::Bone: return derive_bone(seq, topo);
    case Modality::Motion: return derive_motion(seq);
  }
  fail(ErrorKind::InvalidArgument, "unknown modality");
}

std::vector<ModalityTensor> derive_all(Modality m, std::span<const SkeletonSequence> data,
                                       const SkeletonTopology& topo, bool parallel) {
  std::vector<ModalityTensor> out(data.size());
  const auto n = static_cast<std::int64_t>(data.size());
  if (!parallel) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = derive(m, data[i], topo);
    return out;
  }
  // Exceptions must not escape an OpenMP region; capture the first one.
  std::exception_ptr error;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      out[i] = derive(m, data[i], topo);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

SkeletonSequence center_on_root(SkeletonSequence seq, const SkeletonTopology& topo) {
  Tensor3f& f = seq.frames;
  if (f.joints() != topo.joint_count())
    fail(ErrorKind::Dimension, seq.sample_id + ": joint count does not match topology");
  if (f.frames() == 0) return seq;
  float origin[kCoordinates];
  for (int c = 0; c < kCoordinates; ++c) origin[c] = f.at(0, topo.root(), c);
  for (int t = 0; t < f.frames(); ++t)
    for (int v = 0; v < f.joints(); ++v)
      for (int c = 0; c < f.channels(); ++c) f.at(t, v, c) -= origin[c];
  return seq;
}

}  // namespace skelnoise
