#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skelnoise/model.hpp"

namespace skelnoise {

/// Keep-ratio schedule R(T) = 1 - min{(T / T_in) * r, r}.
struct SelectionSchedule {
  double noise_ratio = 0.0;
  int warmup_epochs = 10;
};

double keep_ratio(const SelectionSchedule& schedule, int epoch);

/// ceil(ratio * n), tolerant of products that land a hair above an integer.
std::size_t keep_count(double ratio, std::size_t n);

/// Indices of the ceil(keep * n) smallest losses; equal losses keep the
/// lower index. Returned in ascending index order.
std::vector<std::size_t> small_loss_select(std::span<const double> losses, double keep);

/// One modality's training view: tensors plus the labels to train on.
struct ModalityStream {
  Modality modality = Modality::Joint;
  std::vector<ModalityTensor> tensors;
  std::vector<int> labels;
  std::vector<std::string> sample_ids;

  std::size_t size() const noexcept { return tensors.size(); }
};

/// One modality of `samples` with their current labels and ids. Samples are
/// expected to be root-centred already.
ModalityStream make_stream(Modality m, std::span<const SkeletonSequence> samples, const SkeletonTopology& topo);

struct TrainHyperparams {
  int epochs = 65;
  int batch_size = 64;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0004;
  std::vector<int> lr_decay_epochs{35, 55};
  double lr_decay = 0.1;

  double learning_rate_at(int epoch) const;
};

void to_json(nlohmann::json& j, const TrainHyperparams& h);
void from_json(const nlohmann::json& j, TrainHyperparams& h);

struct SelectionRecord {
  int epoch = 0;
  int batch = 0;
  int net = 0;  // selecting net (1 or 2); the peer is updated on it
  std::size_t sample = 0;
};

struct CoTeachingState {
  std::unique_ptr<Classifier> net1;
  std::unique_ptr<Classifier> net2;
  SgdMomentum opt1;
  SgdMomentum opt2;
  int epoch = 0;
  std::vector<SelectionRecord> log;

  CoTeachingState(std::unique_ptr<Classifier> a, std::unique_ptr<Classifier> b, const TrainHyperparams& h);
  void set_learning_rate(double lr);
};

struct StepResult {
  std::vector<std::size_t> selected_by_net1;  // positions within the batch
  std::vector<std::size_t> selected_by_net2;
  double loss_net1 = 0.0;  // mean loss of net1 over D2 (its update set), pre-update
  double loss_net2 = 0.0;
};

/// One co-teaching step: both nets score the batch with their current
/// parameters, each keeps its small-loss fraction, then net1 takes an SGD
/// step on net2's selection and net2 on net1's. `batch_index` and
/// `sample_ids` only feed the selection log.
StepResult co_teaching_step(CoTeachingState& state, const Batch& batch, std::span<const int> labels,
                            double keep, int batch_index = 0, std::span<const std::size_t> sample_ids = {});

struct EpochMetrics {
  int epoch = 0;
  double keep_ratio = 1.0;
  double learning_rate = 0.0;
  double loss_net1 = 0.0;
  double loss_net2 = 0.0;
  // Precision/recall of each net's selections against injected provenance;
  // negative when provenance was not supplied.
  double precision_net1 = -1.0;
  double recall_net1 = -1.0;
  double precision_net2 = -1.0;
  double recall_net2 = -1.0;
  double holdout_acc_net1 = 0.0;
  double holdout_acc_net2 = 0.0;
};

void to_json(nlohmann::json& j, const EpochMetrics& m);

struct CrossTrainResult {
  std::unique_ptr<ReferenceSTGCN> model;  // the better peer
  int chosen_net = 1;
  double holdout_acc_net1 = 0.0;
  double holdout_acc_net2 = 0.0;
  std::vector<EpochMetrics> epochs;
  std::vector<SelectionRecord> selection_log;
};

/// Builds a backbone for `stream` and fits its input normalisation.
ReferenceSTGCN make_backbone(const GraphNetConfig& base, const ModalityStream& stream, int class_count,
                             std::uint64_t seed);

/// Trains two peers by co-teaching over all epochs, then keeps the one with
/// the higher accuracy on `eval` (ties keep net1). `corrupted`, when not
/// empty, is aligned with `train` and drives the per-epoch selector metrics.
CrossTrainResult cross_train(const ModalityStream& train, const ModalityStream& eval,
                             std::span<const std::uint8_t> corrupted, const SelectionSchedule& schedule,
                             const TrainHyperparams& hp, const GraphNetConfig& backbone, int class_count,
                             std::uint64_t seed);

struct PlainTrainResult {
  std::unique_ptr<ReferenceSTGCN> model;
  std::vector<EpochMetrics> epochs;  // net1 fields only
};

/// Ordinary minibatch SGD on every sample (the no-defence baseline).
PlainTrainResult train_plain(const ModalityStream& train, const TrainHyperparams& hp, const GraphNetConfig& backbone,
                             int class_count, std::uint64_t seed);

/// Epoch order used by both trainers; a seeded permutation of [0, n).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

void write_selection_log_csv(std::span<const SelectionRecord> log, std::span<const std::string> sample_ids,
                             const std::filesystem::path& file);

}  // namespace skelnoise
