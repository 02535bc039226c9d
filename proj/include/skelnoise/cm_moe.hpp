#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "skelnoise/cross_training.hpp"
#include "skelnoise/model.hpp"

namespace skelnoise {

/// Three modality experts (joint, bone, motion) weighted per sample by a gate.
struct FusionModel {
  std::array<std::unique_ptr<Classifier>, 3> experts;
  GateNetwork gate;
  std::array<bool, 3> frozen{true, true, true};
  int class_count = 0;

  FusionModel(std::array<std::unique_ptr<Classifier>, 3> experts, GateNetwork gate);
  FusionModel(const FusionModel& other);
  FusionModel& operator=(const FusionModel&) = delete;
  FusionModel(FusionModel&&) = default;
};

struct FusedPrediction {
  std::array<std::vector<double>, 3> expert_scores;  // softmax per expert
  std::array<double, 3> weights{};
  std::vector<double> fused;
  int predicted = 0;
};

/// S = sum_m weights[m] * scores[m]. Weights are used as given.
FusedPrediction combine_scores(std::array<std::vector<double>, 3> scores, const std::array<double, 3>& weights);

/// Centres the sample, derives joint/bone/motion, scores it with each expert
/// and mixes the scores with the gate's weights.
FusedPrediction fuse(const FusionModel& model, const SkeletonSequence& sample, const SkeletonTopology& topo);

/// Fixed scalar weights per expert, e.g. (0.6, 0.6, 0.4). Throws
/// DegenerateWeights when all weights are zero.
FusedPrediction fixed_weight_ensemble(std::span<const Classifier* const> experts, const std::array<double, 3>& weights,
                                      const SkeletonSequence& sample, const SkeletonTopology& topo);

/// The three modality streams of one split, index-aligned.
struct ModalityStreams {
  std::array<const ModalityStream*, 3> streams{};

  std::size_t size() const { return streams[0] ? streams[0]->size() : 0; }
  const ModalityStream& operator[](int m) const { return *streams[m]; }
};

/// Batched forms used for evaluation: rows are samples, columns classes.
std::array<Matrix, 3> expert_probabilities(const FusionModel& model, const ModalityStreams& data, int batch_size = 256);
Matrix gate_weights(const GateNetwork& gate, const ModalityStreams& data, int batch_size = 256);
Matrix fused_scores(const FusionModel& model, const ModalityStreams& data, int batch_size = 256);
Matrix fixed_weight_scores(const std::array<Matrix, 3>& probabilities, const std::array<double, 3>& weights);

struct FusionHyperparams {
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  bool freeze_experts = true;
};

void to_json(nlohmann::json& j, const FusionHyperparams& h);
void from_json(const nlohmann::json& j, FusionHyperparams& h);

struct GateEpochStats {
  int epoch = 0;
  double loss = 0.0;
  std::array<double, 3> mean_weights{};  // over D_c, after the epoch
};

void to_json(nlohmann::json& j, const GateEpochStats& s);

/// Trains the gate (and unfrozen experts) with cross-entropy of the fused
/// distribution against the labels of the clean-set samples `clean`.
std::vector<GateEpochStats> finetune_gate(FusionModel& model, const ModalityStreams& data,
                                          std::span<const std::size_t> clean, const FusionHyperparams& hp,
                                          std::uint64_t seed);

}  // namespace skelnoise
