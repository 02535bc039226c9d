#include "skelnoise/cross_training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>

#include "skelnoise/error.hpp"
#include "skelnoise/json_io.hpp"
#include "skelnoise/evaluate.hpp"
#include "skelnoise/rng.hpp"

namespace skelnoise {

using nlohmann::json;

SKELNOISE_JSON_DEFINE(TrainHyperparams, epochs, batch_size, learning_rate, momentum,
                                                weight_decay, lr_decay_epochs, lr_decay)

void to_json(json& j, const EpochMetrics& m) {
  j = json{{"epoch", m.epoch},
           {"keep_ratio", m.keep_ratio},
           {"learning_rate", m.learning_rate},
           {"loss_net1", m.loss_net1},
           {"loss_net2", m.loss_net2},
           {"precision_net1", m.precision_net1},
           {"recall_net1", m.recall_net1},
           {"precision_net2", m.precision_net2},
           {"recall_net2", m.recall_net2},
           {"holdout_acc_net1", m.holdout_acc_net1},
           {"holdout_acc_net2", m.holdout_acc_net2}};
}

namespace {

// p/q with q <= 10^6 whose double quotient is exactly `x`, if one exists.
std::optional<std::pair<std::int64_t, std::int64_t>> small_rational(double x) {
  for (std::int64_t q = 1; q <= 1'000'000; ++q) {
    const double p = std::round(x * static_cast<double>(q));
    if (p / static_cast<double>(q) == x) return std::pair{static_cast<std::int64_t>(p), q};
  }
  return std::nullopt;
}

}  // namespace

ModalityStream make_stream(Modality m, std::span<const SkeletonSequence> samples, const SkeletonTopology& topo) {
  ModalityStream st;
  st.modality = m;
  st.tensors = derive_all(m, samples, topo);
  st.labels.reserve(samples.size());
  st.sample_ids.reserve(samples.size());
  for (const auto& s : samples) {
    st.labels.push_back(s.label);
    st.sample_ids.push_back(s.sample_id);
  }
  return st;
}

double keep_ratio(const SelectionSchedule& schedule, int epoch) {
  if (epoch < 0) fail(ErrorKind::InvalidArgument, "epoch must be non-negative");
  if (schedule.warmup_epochs < 1) fail(ErrorKind::InvalidArgument, "warm-up epochs must be positive");
  const double r = schedule.noise_ratio;
  if (!(r >= 0.0 && r < 1.0)) fail(ErrorKind::InvalidRatio, "noise ratio must lie in [0, 1)");
  const std::int64_t t = std::min(epoch, schedule.warmup_epochs);
  const std::int64_t t_in = schedule.warmup_epochs;
  // 1 - (t / T_in) r as one rounded quotient when r is a short fraction.
  if (const auto pq = small_rational(r)) {
    const auto [p, q] = *pq;
    return static_cast<double>(q * t_in - p * t) / static_cast<double>(q * t_in);
  }
  return 1.0 - (static_cast<double>(t) * r) / static_cast<double>(t_in);
}

std::size_t keep_count(double ratio, std::size_t n) {
  if (n == 0) return 0;
  const double raw = std::ceil(ratio * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, n);
}

std::vector<std::size_t> small_loss_select(std::span<const double> losses, double keep) {
  if (losses.empty()) fail(ErrorKind::EmptyBatch, "small-loss selection over an empty batch");
  if (!(keep > 0.0 && keep <= 1.0)) fail(ErrorKind::InvalidArgument, "keep ratio must lie in (0, 1]");
  for (double l : losses)
    if (!std::isfinite(l)) fail(ErrorKind::InvalidArgument, "non-finite loss in selection");
  const std::size_t m = keep_count(keep, losses.size());
  std::vector<std::size_t> order(losses.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto smaller = [&](std::size_t a, std::size_t b) { return losses[a] < losses[b] || (losses[a] == losses[b] && a < b); };
  if (m < order.size()) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(), smaller);
  order.resize(m);
  std::sort(order.begin(), order.end());
  return order;
}

double TrainHyperparams::learning_rate_at(int epoch) const {
  double lr = learning_rate;
  for (int e : lr_decay_epochs)
    if (epoch >= e) lr *= lr_decay;
  return lr;
}

CoTeachingState::CoTeachingState(std::unique_ptr<Classifier> a, std::unique_ptr<Classifier> b,
                                 const TrainHyperparams& h)
    : net1(std::move(a)),
      net2(std::move(b)),
      opt1(h.learning_rate, h.momentum, h.weight_decay),
      opt2(h.learning_rate, h.momentum, h.weight_decay) {
  if (!net1 || !net2) fail(ErrorKind::InvalidArgument, "co-teaching needs two networks");
  if (net1.get() == net2.get() || net1->parameters().data() == net2->parameters().data())
    fail(ErrorKind::InvalidArgument, "co-teaching peers must not share parameters");
}

void CoTeachingState::set_learning_rate(double lr) {
  opt1.set_learning_rate(lr);
  opt2.set_learning_rate(lr);
}

namespace {

void check_finite(std::span<const double> losses, int epoch, int batch) {
  for (double l : losses)
    if (!std::isfinite(l))
      fail(ErrorKind::TrainingDiverged,
           "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
}

}  // namespace

StepResult co_teaching_step(CoTeachingState& state, const Batch& batch, std::span<const int> labels, double keep,
                            int batch_index, std::span<const std::size_t> sample_ids) {
  if (batch.size() == 0) fail(ErrorKind::EmptyBatch, "co-teaching step on an empty batch");
  if (!state.net1->training() || !state.net2->training())
    fail(ErrorKind::InvalidArgument, "co-teaching nets must be in train mode");
  if (!sample_ids.empty() && sample_ids.size() != static_cast<std::size_t>(batch.size()))
    fail(ErrorKind::Dimension, "one sample id per batch row required");

  StepResult result;
  const Classifier& n1 = *state.net1;
  const Classifier& n2 = *state.net2;

  // Selections come from the pre-update parameters of both nets.
  const std::vector<double> losses2 = per_sample_loss(n2, batch, labels);
  check_finite(losses2, state.epoch, batch_index);
  result.selected_by_net2 = small_loss_select(losses2, keep);

  std::vector<double> grad1(n1.parameters().size(), 0.0);
  std::vector<double> losses1;
  n1.forward_backward(
      batch,
      [&](const Matrix& logits, Matrix& d) {
        losses1 = cross_entropy_rows(logits, labels);
        check_finite(losses1, state.epoch, batch_index);
        const Matrix p = softmax_rows(logits);
        const double scale = 1.0 / static_cast<double>(result.selected_by_net2.size());
        double loss = 0.0;
        for (std::size_t r : result.selected_by_net2) {
          loss += losses1[r];
          for (std::size_t c = 0; c < logits.cols; ++c)
            d.at(r, c) = scale * (p.at(r, c) - (static_cast<int>(c) == labels[r]));
        }
        result.loss_net1 = loss * scale;
      },
      grad1);
  result.selected_by_net1 = small_loss_select(losses1, keep);

  std::vector<double> grad2(n2.parameters().size(), 0.0);
  result.loss_net2 = mean_loss_gradient(n2, batch, labels, result.selected_by_net1, grad2);

  state.opt1.step(state.net1->parameters(), grad1);
  state.opt2.step(state.net2->parameters(), grad2);

  auto id_of = [&](std::size_t pos) { return sample_ids.empty() ? pos : sample_ids[pos]; };
  for (std::size_t pos : result.selected_by_net1) state.log.push_back({state.epoch, batch_index, 1, id_of(pos)});
  for (std::size_t pos : result.selected_by_net2) state.log.push_back({state.epoch, batch_index, 2, id_of(pos)});
  return result;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(derive_seed(seed, "epoch-order"), static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

ReferenceSTGCN make_backbone(const GraphNetConfig& base, const ModalityStream& stream, int class_count,
                             std::uint64_t seed) {
  if (stream.tensors.empty()) fail(ErrorKind::InvalidConfiguration, "cannot build a backbone for an empty stream");
  GraphNetConfig cfg = base;
  cfg.in_channels = stream.tensors.front().data.channels();
  cfg.frames = stream.tensors.front().data.frames();
  cfg.joints = stream.tensors.front().data.joints();
  cfg.out_dim = class_count;
  ReferenceSTGCN model(cfg, seed);
  std::vector<std::size_t> all(stream.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  model.net().fit_input_normalization(make_batch(stream.tensors, all));
  return model;
}

namespace {

void check_streams(const ModalityStream& s) {
  if (s.tensors.size() != s.labels.size()) fail(ErrorKind::Dimension, "stream needs one label per tensor");
}

double holdout_accuracy(const Classifier& model, const ModalityStream& eval) {
  return evaluate(model, eval.tensors, eval.labels).top1;
}

}  // namespace

CrossTrainResult cross_train(const ModalityStream& train, const ModalityStream& eval,
                             std::span<const std::uint8_t> corrupted, const SelectionSchedule& schedule,
                             const TrainHyperparams& hp, const GraphNetConfig& backbone, int class_count,
                             std::uint64_t seed) {
  check_streams(train);
  check_streams(eval);
  if (eval.size() == 0) fail(ErrorKind::InvalidConfiguration, "cross-training needs a non-empty evaluation split");
  if (train.size() == 0) fail(ErrorKind::InvalidConfiguration, "cross-training needs training samples");
  if (!corrupted.empty() && corrupted.size() != train.size())
    fail(ErrorKind::Dimension, "provenance mask must align with the training stream");
  if (hp.batch_size < 1 || hp.epochs < 0) fail(ErrorKind::InvalidConfiguration, "invalid epochs/batch size");

  auto net1 = std::make_unique<ReferenceSTGCN>(make_backbone(backbone, train, class_count, derive_seed(seed, "net1")));
  auto net2 = std::make_unique<ReferenceSTGCN>(make_backbone(backbone, train, class_count, derive_seed(seed, "net2")));
  net1->set_training(true);
  net2->set_training(true);
  CoTeachingState state(std::move(net1), std::move(net2), hp);

  const std::size_t n = train.size();
  const std::size_t clean_total =
      corrupted.empty() ? 0 : n - static_cast<std::size_t>(std::count(corrupted.begin(), corrupted.end(), 1));
  CrossTrainResult result;

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    state.epoch = epoch;
    EpochMetrics em;
    em.epoch = epoch;
    em.keep_ratio = keep_ratio(schedule, epoch);
    em.learning_rate = hp.learning_rate_at(epoch);
    state.set_learning_rate(em.learning_rate);

    const auto order = epoch_order(n, seed, epoch);
    std::size_t sel1 = 0, clean1 = 0, sel2 = 0, clean2 = 0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += hp.batch_size, ++batches) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(hp.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];
      const StepResult step = co_teaching_step(state, make_batch(train.tensors, idx), labels, em.keep_ratio, batches, idx);
      em.loss_net1 += step.loss_net1;
      em.loss_net2 += step.loss_net2;
      sel1 += step.selected_by_net1.size();
      sel2 += step.selected_by_net2.size();
      if (!corrupted.empty()) {
        for (std::size_t pos : step.selected_by_net1) clean1 += corrupted[idx[pos]] ? 0 : 1;
        for (std::size_t pos : step.selected_by_net2) clean2 += corrupted[idx[pos]] ? 0 : 1;
      }
    }
    if (batches > 0) {
      em.loss_net1 /= batches;
      em.loss_net2 /= batches;
    }
    if (!corrupted.empty()) {
      em.precision_net1 = sel1 ? static_cast<double>(clean1) / sel1 : 0.0;
      em.precision_net2 = sel2 ? static_cast<double>(clean2) / sel2 : 0.0;
      em.recall_net1 = clean_total ? static_cast<double>(clean1) / clean_total : 0.0;
      em.recall_net2 = clean_total ? static_cast<double>(clean2) / clean_total : 0.0;
    }
    em.holdout_acc_net1 = holdout_accuracy(*state.net1, eval);
    em.holdout_acc_net2 = holdout_accuracy(*state.net2, eval);
    result.epochs.push_back(em);
  }

  state.net1->set_training(false);
  state.net2->set_training(false);
  result.holdout_acc_net1 = holdout_accuracy(*state.net1, eval);
  result.holdout_acc_net2 = holdout_accuracy(*state.net2, eval);
  result.chosen_net = result.holdout_acc_net2 > result.holdout_acc_net1 ? 2 : 1;
  auto& winner = result.chosen_net == 1 ? state.net1 : state.net2;
  result.model.reset(static_cast<ReferenceSTGCN*>(winner.release()));
  result.selection_log = std::move(state.log);
  return result;
}

PlainTrainResult train_plain(const ModalityStream& train, const TrainHyperparams& hp, const GraphNetConfig& backbone,
                             int class_count, std::uint64_t seed) {
  check_streams(train);
  if (train.size() == 0) fail(ErrorKind::InvalidConfiguration, "plain training needs samples");
  if (hp.batch_size < 1 || hp.epochs < 0) fail(ErrorKind::InvalidConfiguration, "invalid epochs/batch size");
  PlainTrainResult result;
  result.model = std::make_unique<ReferenceSTGCN>(make_backbone(backbone, train, class_count, derive_seed(seed, "net1")));
  ReferenceSTGCN& model = *result.model;
  model.set_training(true);
  SgdMomentum opt(hp.learning_rate, hp.momentum, hp.weight_decay);
  const std::size_t n = train.size();
  std::vector<double> grad(model.parameters().size());
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    EpochMetrics em;
    em.epoch = epoch;
    em.learning_rate = hp.learning_rate_at(epoch);
    opt.set_learning_rate(em.learning_rate);
    const auto order = epoch_order(n, seed, epoch);
    int batches = 0;
    for (std::size_t start = 0; start < n; start += hp.batch_size, ++batches) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(hp.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];
      std::vector<std::size_t> all(idx.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss = mean_loss_gradient(model, make_batch(train.tensors, idx), labels, all, grad);
      if (!std::isfinite(loss))
        fail(ErrorKind::TrainingDiverged,
             "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches));
      em.loss_net1 += loss;
      opt.step(model.parameters(), grad);
    }
    if (batches > 0) em.loss_net1 /= batches;
    result.epochs.push_back(em);
  }
  model.set_training(false);
  return result;
}

void write_selection_log_csv(std::span<const SelectionRecord> log, std::span<const std::string> sample_ids,
                             const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + file.string());
  out << "epoch,batch,net,sample_id\n";
  for (const SelectionRecord& r : log) {
    out << r.epoch << ',' << r.batch << ',' << r.net << ',';
    if (r.sample < sample_ids.size()) out << sample_ids[r.sample];
    else out << r.sample;
    out << '\n';
  }
}

}  // namespace skelnoise
