#include "skelnoise/cm_moe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "skelnoise/error.hpp"
#include "skelnoise/json_io.hpp"
#include "skelnoise/evaluate.hpp"
#include "skelnoise/rng.hpp"

namespace skelnoise {

using nlohmann::json;

SKELNOISE_JSON_DEFINE(FusionHyperparams, epochs, batch_size, learning_rate, momentum,
                                                weight_decay, freeze_experts)

void to_json(json& j, const GateEpochStats& s) {
  j = json{{"epoch", s.epoch}, {"loss", s.loss}, {"mean_weights", s.mean_weights}};
}

FusionModel::FusionModel(std::array<std::unique_ptr<Classifier>, 3> e, GateNetwork g)
    : experts(std::move(e)), gate(std::move(g)) {
  for (const auto& ex : experts)
    if (!ex) fail(ErrorKind::InvalidConfiguration, "fusion model needs three experts");
  class_count = experts[0]->class_count();
  for (const auto& ex : experts)
    if (ex->class_count() != class_count)
      fail(ErrorKind::InvalidConfiguration, "experts disagree on the class count");
}

FusionModel::FusionModel(const FusionModel& other)
    : gate(other.gate), frozen(other.frozen), class_count(other.class_count) {
  for (int m = 0; m < 3; ++m) experts[m] = other.experts[m]->clone();
}

FusedPrediction combine_scores(std::array<std::vector<double>, 3> scores, const std::array<double, 3>& weights) {
  const std::size_t K = scores[0].size();
  if (scores[1].size() != K || scores[2].size() != K)
    fail(ErrorKind::InvalidConfiguration, "experts emit different class counts");
  FusedPrediction out;
  out.weights = weights;
  out.fused.assign(K, 0.0);
  for (std::size_t k = 0; k < K; ++k)
    out.fused[k] = weights[0] * scores[0][k] + weights[1] * scores[1][k] + weights[2] * scores[2][k];
  out.predicted = argmax(out.fused);
  out.expert_scores = std::move(scores);
  return out;
}

namespace {

std::array<ModalityTensor, 3> derive_modalities(const SkeletonSequence& raw, const SkeletonTopology& topo) {
  const SkeletonSequence sample = center_on_root(raw, topo);
  return {derive_joint(sample), derive_bone(sample, topo), derive_motion(sample)};
}

std::vector<double> expert_softmax(const Classifier& expert, const ModalityTensor& input) {
  const Tensor3f* item = &input.data;
  const Matrix p = softmax_rows(expert.forward(make_batch(std::span(&item, 1))));
  return p.values;
}

void require_eval(const Classifier& c) {
  if (c.training()) fail(ErrorKind::InvalidArgument, "fusion inference needs eval-mode experts");
}

}  // namespace

FusedPrediction fuse(const FusionModel& model, const SkeletonSequence& sample, const SkeletonTopology& topo) {
  if (model.gate.training()) fail(ErrorKind::InvalidArgument, "fusion inference needs an eval-mode gate");
  const auto mods = derive_modalities(sample, topo);
  std::array<std::vector<double>, 3> scores;
  for (int m = 0; m < 3; ++m) {
    require_eval(*model.experts[m]);
    if (model.experts[m]->class_count() != model.class_count)
      fail(ErrorKind::InvalidConfiguration, "expert class count differs from the fusion model");
    scores[m] = expert_softmax(*model.experts[m], mods[m]);
  }
  return combine_scores(std::move(scores), gate_forward(model.gate, mods[0], mods[1], mods[2]));
}

FusedPrediction fixed_weight_ensemble(std::span<const Classifier* const> experts, const std::array<double, 3>& weights,
                                      const SkeletonSequence& sample, const SkeletonTopology& topo) {
  if (experts.size() != 3) fail(ErrorKind::InvalidConfiguration, "ensemble needs three experts");
  for (double w : weights)
    if (!std::isfinite(w)) fail(ErrorKind::InvalidArgument, "ensemble weights must be finite");
  if (weights[0] == 0.0 && weights[1] == 0.0 && weights[2] == 0.0)
    fail(ErrorKind::DegenerateWeights, "ensemble weights are all zero");
  const auto mods = derive_modalities(sample, topo);
  std::array<std::vector<double>, 3> scores;
  for (int m = 0; m < 3; ++m) {
    require_eval(*experts[m]);
    scores[m] = expert_softmax(*experts[m], mods[m]);
  }
  return combine_scores(std::move(scores), weights);
}

std::array<Matrix, 3> expert_probabilities(const FusionModel& model, const ModalityStreams& data, int batch_size) {
  std::array<Matrix, 3> out;
  for (int m = 0; m < 3; ++m) out[m] = softmax_rows(predict_logits(*model.experts[m], data[m].tensors, batch_size));
  return out;
}

Matrix gate_weights(const GateNetwork& gate, const ModalityStreams& data, int batch_size) {
  const std::size_t n = data.size();
  Matrix out(n, GateNetwork::kExperts);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Matrix w = gate.weights(make_concat_batch(data[0].tensors, data[1].tensors, data[2].tensors, idx));
    std::copy(w.values.begin(), w.values.end(), out.values.begin() + start * out.cols);
  }
  return out;
}

Matrix fused_scores(const FusionModel& model, const ModalityStreams& data, int batch_size) {
  const auto probs = expert_probabilities(model, data, batch_size);
  const Matrix w = gate_weights(model.gate, data, batch_size);
  Matrix out(probs[0].rows, probs[0].cols);
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t k = 0; k < out.cols; ++k)
      out.at(r, k) = w.at(r, 0) * probs[0].at(r, k) + w.at(r, 1) * probs[1].at(r, k) + w.at(r, 2) * probs[2].at(r, k);
  return out;
}

Matrix fixed_weight_scores(const std::array<Matrix, 3>& probs, const std::array<double, 3>& weights) {
  if (weights[0] == 0.0 && weights[1] == 0.0 && weights[2] == 0.0)
    fail(ErrorKind::DegenerateWeights, "ensemble weights are all zero");
  Matrix out(probs[0].rows, probs[0].cols);
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t k = 0; k < out.cols; ++k)
      out.at(r, k) =
          weights[0] * probs[0].at(r, k) + weights[1] * probs[1].at(r, k) + weights[2] * probs[2].at(r, k);
  return out;
}

std::vector<GateEpochStats> finetune_gate(FusionModel& model, const ModalityStreams& data,
                                          std::span<const std::size_t> clean, const FusionHyperparams& hp,
                                          std::uint64_t seed) {
  if (clean.empty()) fail(ErrorKind::InvalidConfiguration, "gate fine-tuning needs a non-empty clean set");
  if (hp.batch_size < 1 || hp.epochs < 0) fail(ErrorKind::InvalidConfiguration, "invalid epochs/batch size");
  for (std::size_t i : clean)
    if (i >= data.size()) fail(ErrorKind::Lookup, "clean-set index out of range");
  std::vector<GateEpochStats> stats;
  if (hp.epochs == 0) return stats;

  model.frozen = {hp.freeze_experts, hp.freeze_experts, hp.freeze_experts};
  const std::vector<int>& labels = data[0].labels;
  const std::size_t K = static_cast<std::size_t>(model.class_count);

  // Frozen experts never change, so their scores on D_c are computed once.
  std::array<Matrix, 3> cached;
  for (int m = 0; m < 3; ++m) {
    model.experts[m]->set_training(false);
    if (model.frozen[m]) cached[m] = softmax_rows(predict_logits(*model.experts[m], data[m].tensors));
  }

  GraphNet& gate_net = model.gate.net();
  SgdMomentum gate_opt(hp.learning_rate, hp.momentum, hp.weight_decay);
  std::array<std::unique_ptr<SgdMomentum>, 3> expert_opt;
  for (int m = 0; m < 3; ++m)
    if (!model.frozen[m]) {
      expert_opt[m] = std::make_unique<SgdMomentum>(hp.learning_rate, hp.momentum, hp.weight_decay);
      model.experts[m]->set_training(true);
    }
  model.gate.set_training(true);

  std::vector<double> gate_grad(gate_net.parameter_count());
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    const auto order = epoch_order(clean.size(), derive_seed(seed, "gate"), epoch);
    GateEpochStats es;
    es.epoch = epoch;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size, ++batches) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
      std::vector<std::size_t> idx;
      for (std::size_t i = start; i < end; ++i) idx.push_back(clean[order[i]]);
      const std::size_t B = idx.size();

      std::array<Matrix, 3> probs;
      std::array<Batch, 3> expert_inputs;
      for (int m = 0; m < 3; ++m) {
        if (model.frozen[m]) {
          probs[m] = Matrix(B, K);
          for (std::size_t r = 0; r < B; ++r)
            std::copy_n(cached[m].row(idx[r]).begin(), K, probs[m].row(r).begin());
        } else {
          expert_inputs[m] = make_batch(data[m].tensors, idx);
          probs[m] = softmax_rows(model.experts[m]->forward(expert_inputs[m]));
        }
      }

      std::array<Matrix, 3> d_probs{Matrix(B, K), Matrix(B, K), Matrix(B, K)};
      double batch_loss = 0.0;
      std::fill(gate_grad.begin(), gate_grad.end(), 0.0);
      gate_net.forward_backward(
          make_concat_batch(data[0].tensors, data[1].tensors, data[2].tensors, idx),
          [&](const Matrix& logits, Matrix& d_logits) {
            const Matrix w = softmax_rows(logits);
            const double inv_b = 1.0 / static_cast<double>(B);
            for (std::size_t r = 0; r < B; ++r) {
              const int y = labels[idx[r]];
              double s_y = 0.0;
              for (int m = 0; m < 3; ++m) s_y += w.at(r, m) * probs[m].at(r, y);
              s_y = std::max(s_y, std::numeric_limits<double>::min());
              batch_loss += -std::log(s_y);
              // dL/dW_m = -S_m[y] / S[y] / B, then through the softmax.
              double d_w[3], dot = 0.0;
              for (int m = 0; m < 3; ++m) {
                d_w[m] = -probs[m].at(r, y) / s_y * inv_b;
                dot += w.at(r, m) * d_w[m];
                d_probs[m].at(r, y) = -w.at(r, m) / s_y * inv_b;
              }
              for (int m = 0; m < 3; ++m) d_logits.at(r, m) = w.at(r, m) * (d_w[m] - dot);
            }
            batch_loss *= inv_b;
          },
          gate_grad);
      if (!std::isfinite(batch_loss))
        fail(ErrorKind::TrainingDiverged, "gate fine-tuning diverged at epoch " + std::to_string(epoch));

      for (int m = 0; m < 3; ++m) {
        if (model.frozen[m]) continue;
        Classifier& ex = *model.experts[m];
        std::vector<double> g(ex.parameters().size(), 0.0);
        ex.forward_backward(
            expert_inputs[m],
            [&](const Matrix& logits, Matrix& d_logits) {
              const Matrix p = softmax_rows(logits);
              for (std::size_t r = 0; r < B; ++r) {
                double dot = 0.0;
                for (std::size_t k = 0; k < K; ++k) dot += p.at(r, k) * d_probs[m].at(r, k);
                for (std::size_t k = 0; k < K; ++k) d_logits.at(r, k) = p.at(r, k) * (d_probs[m].at(r, k) - dot);
              }
            },
            g);
        expert_opt[m]->step(ex.parameters(), g);
      }
      gate_opt.step(gate_net.parameters(), gate_grad);
      es.loss += batch_loss;
    }
    es.loss /= std::max(batches, 1);

    model.gate.set_training(false);
    const Matrix w = gate_weights(model.gate, data);
    for (std::size_t i : clean)
      for (int m = 0; m < 3; ++m) es.mean_weights[m] += w.at(i, m);
    for (double& v : es.mean_weights) v /= static_cast<double>(clean.size());
    model.gate.set_training(true);
    stats.push_back(es);
  }
  model.gate.set_training(false);
  for (auto& ex : model.experts) ex->set_training(false);
  return stats;
}

}  // namespace skelnoise
