#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "skelnoise/cross_training.hpp"
#include "skelnoise/dataset.hpp"
#include "skelnoise/noise.hpp"
#include "test_util.hpp"

using namespace skelnoise;

namespace {

std::vector<std::size_t> brute_force_select(std::span<const double> losses, double keep) {
  const std::size_t n = losses.size();
  std::size_t m = 0;
  while (m < n && static_cast<double>(m) < keep * static_cast<double>(n) - 1e-9) ++m;
  m = std::max<std::size_t>(m, 1);
  std::vector<std::pair<double, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) pairs.emplace_back(losses[i], i);
  std::sort(pairs.begin(), pairs.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m; ++i) out.push_back(pairs[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

ModalityStream tiny_stream(int n, int K, std::uint64_t seed, Modality m = Modality::Joint) {
  SyntheticSpec spec;
  spec.class_count = K;
  spec.samples_per_class = n / K;
  spec.frames = 6;
  const Dataset d = make_synthetic_dataset(spec, seed);
  const auto topo = SkeletonTopology::toy9();
  ModalityStream s;
  s.modality = m;
  for (const auto& seq : d.samples) {
    s.tensors.push_back(derive(m, center_on_root(seq, topo), topo));
    s.labels.push_back(seq.label);
    s.sample_ids.push_back(seq.sample_id);
  }
  return s;
}

GraphNetConfig tiny_backbone() {
  GraphNetConfig c;
  c.widths = {6, 8};
  return c;
}

TrainHyperparams tiny_hp() {
  TrainHyperparams hp;
  hp.epochs = 3;
  hp.batch_size = 8;
  hp.learning_rate = 0.05;
  hp.lr_decay_epochs = {2};
  return hp;
}

}  // namespace

TEST_CASE("keep ratio matches the exact rational schedule on the grid") {
  for (int tenths : {2, 5, 8}) {
    for (int t_in : {5, 10}) {
      for (int t = 0; t <= 30; ++t) {
        // 1 - min(t * r / T_in, r) with r = tenths / 10
        const long num = 10L * t_in - static_cast<long>(tenths) * std::min(t, t_in);
        const long den = 10L * t_in;
        const double expected = static_cast<double>(num) / static_cast<double>(den);
        const double got = keep_ratio({tenths / 10.0, t_in}, t);
        CHECK(got == expected);
      }
    }
  }
}

TEST_CASE("keep ratio is non-increasing and settles at 1 - r") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const double r = rng.uniform(0.0, 0.95);
    const int t_in = 1 + static_cast<int>(rng.uniform_index(20));
    double prev = 2.0;
    for (int t = 0; t <= 40; ++t) {
      const double k = keep_ratio({r, t_in}, t);
      CHECK(k <= prev);
      CHECK(k >= 1.0 - r - 1e-15);
      if (t >= t_in) CHECK(k == doctest::Approx(1.0 - r).epsilon(1e-15));
      prev = k;
    }
    CHECK(keep_ratio({r, t_in}, 0) == 1.0);
  }
  CHECK_THROWS_AS_KIND(keep_ratio({1.0, 10}, 0), ErrorKind::InvalidRatio);
  CHECK_THROWS_AS_KIND(keep_ratio({0.2, 0}, 0), ErrorKind::InvalidArgument);
  CHECK_THROWS_AS_KIND(keep_ratio({0.2, 10}, -1), ErrorKind::InvalidArgument);
}

TEST_CASE("keep count is the minimal compliant size") {
  CHECK(keep_count(1.0, 7) == 7);
  CHECK(keep_count(0.5, 4) == 2);
  CHECK(keep_count(0.5, 5) == 3);
  CHECK(keep_count(0.6, 10) == 6);
  CHECK(keep_count(0.7, 10) == 7);
  CHECK(keep_count(0.01, 3) == 1);
  CHECK(keep_count(0.5, 0) == 0);
}

TEST_CASE("small-loss selection examples") {
  const std::vector<double> a{0.5, 0.1, 0.9, 0.2};
  CHECK(small_loss_select(a, 0.5) == std::vector<std::size_t>{1, 3});
  CHECK(small_loss_select(a, 1.0) == std::vector<std::size_t>{0, 1, 2, 3});
  const std::vector<double> same(4, 0.3);
  CHECK(small_loss_select(same, 0.5) == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS_KIND(small_loss_select(std::vector<double>{}, 0.5), ErrorKind::EmptyBatch);
  CHECK_THROWS_AS_KIND(small_loss_select(a, 0.0), ErrorKind::InvalidArgument);
  const std::vector<double> bad{0.1, std::nan("")};
  CHECK_THROWS_AS_KIND(small_loss_select(bad, 0.5), ErrorKind::InvalidArgument);
}

TEST_CASE("small-loss selection matches a sort oracle on random instances") {
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(300);
    std::vector<double> losses(n);
    const bool ties = trial % 2 == 0;
    for (double& l : losses) l = ties ? static_cast<double>(rng.uniform_index(5)) : rng.uniform(0.0, 4.0);
    const double keep = trial % 7 == 0 ? 1.0 : rng.uniform(0.05, 1.0);
    const auto got = small_loss_select(losses, keep);
    CHECK(got == brute_force_select(losses, keep));
    CHECK(got.size() >= keep * n - 1e-9);
  }
}

TEST_CASE("learning rate decays at the listed epochs") {
  TrainHyperparams hp;
  hp.learning_rate = 0.1;
  hp.lr_decay_epochs = {35, 55};
  CHECK(hp.learning_rate_at(0) == 0.1);
  CHECK(hp.learning_rate_at(34) == 0.1);
  CHECK(hp.learning_rate_at(35) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(hp.learning_rate_at(60) == doctest::Approx(0.001).epsilon(1e-15));
}

TEST_CASE("full retention co-teaching is two independent plain SGD steps") {
  const auto stream = tiny_stream(16, 4, 5);
  auto a = make_backbone(tiny_backbone(), stream, 4, 1);
  auto b = make_backbone(tiny_backbone(), stream, 4, 2);
  auto ref_a = a, ref_b = b;
  const TrainHyperparams hp = tiny_hp();
  CoTeachingState state(std::make_unique<ReferenceSTGCN>(a), std::make_unique<ReferenceSTGCN>(b), hp);
  state.net1->set_training(true);
  state.net2->set_training(true);

  std::vector<std::size_t> idx(stream.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Batch batch = make_batch(stream.tensors, idx);
  const auto step = co_teaching_step(state, batch, stream.labels, 1.0);
  CHECK(step.selected_by_net1.size() == idx.size());
  CHECK(step.selected_by_net2.size() == idx.size());

  for (auto* ref : {&ref_a, &ref_b}) {
    std::vector<double> grad(ref->parameters().size(), 0.0);
    mean_loss_gradient(*ref, batch, stream.labels, idx, grad);
    SgdMomentum opt(hp.learning_rate, hp.momentum, hp.weight_decay);
    opt.step(ref->parameters(), grad);
  }
  CHECK(std::ranges::equal(state.net1->parameters(), ref_a.parameters()));
  CHECK(std::ranges::equal(state.net2->parameters(), ref_b.parameters()));
}

TEST_CASE("each peer is updated on the other's small-loss selection") {
  const auto stream = tiny_stream(20, 4, 6);
  auto a = make_backbone(tiny_backbone(), stream, 4, 11);
  auto b = make_backbone(tiny_backbone(), stream, 4, 12);
  const auto before_a = a, before_b = b;
  const TrainHyperparams hp = tiny_hp();
  CoTeachingState state(std::make_unique<ReferenceSTGCN>(a), std::make_unique<ReferenceSTGCN>(b), hp);
  state.net1->set_training(true);
  state.net2->set_training(true);

  std::vector<std::size_t> idx(stream.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Batch batch = make_batch(stream.tensors, idx);
  const double keep = 0.6;
  const auto step = co_teaching_step(state, batch, stream.labels, keep, 0, idx);

  // selections come from the parameters before either update
  CHECK(step.selected_by_net1 == small_loss_select(per_sample_loss(before_a, batch, stream.labels), keep));
  CHECK(step.selected_by_net2 == small_loss_select(per_sample_loss(before_b, batch, stream.labels), keep));
  CHECK(step.selected_by_net1.size() == 12);

  auto ref_a = before_a, ref_b = before_b;
  std::vector<double> ga(ref_a.parameters().size(), 0.0), gb(ref_b.parameters().size(), 0.0);
  mean_loss_gradient(ref_a, batch, stream.labels, step.selected_by_net2, ga);
  mean_loss_gradient(ref_b, batch, stream.labels, step.selected_by_net1, gb);
  SgdMomentum oa(hp.learning_rate, hp.momentum, hp.weight_decay), ob(hp.learning_rate, hp.momentum, hp.weight_decay);
  oa.step(ref_a.parameters(), ga);
  ob.step(ref_b.parameters(), gb);
  CHECK(std::ranges::equal(state.net1->parameters(), ref_a.parameters()));
  CHECK(std::ranges::equal(state.net2->parameters(), ref_b.parameters()));

  // the log records who selected what
  std::size_t by1 = 0, by2 = 0;
  for (const auto& rec : state.log) (rec.net == 1 ? by1 : by2)++;
  CHECK(by1 == step.selected_by_net1.size());
  CHECK(by2 == step.selected_by_net2.size());
}

namespace {

// Two handles onto one parameter buffer.
class SharedClassifier final : public Classifier {
 public:
  explicit SharedClassifier(std::shared_ptr<std::vector<double>> p) : p_(std::move(p)) {}
  int class_count() const override { return 2; }
  Matrix forward(const Batch& x) const override { return Matrix(x.size(), 2); }
  Matrix forward_backward(const Batch& x, const OutputGradientFn&, std::span<double>) const override {
    return Matrix(x.size(), 2);
  }
  std::span<double> parameters() override { return *p_; }
  std::span<const double> parameters() const override { return *p_; }
  bool training() const override { return true; }
  void set_training(bool) override {}
  nlohmann::json describe() const override { return {}; }
  std::unique_ptr<Classifier> clone() const override { return std::make_unique<SharedClassifier>(p_); }

 private:
  std::shared_ptr<std::vector<double>> p_;
};

}  // namespace

TEST_CASE("co-teaching rejects shared or missing peers") {
  auto buffer = std::make_shared<std::vector<double>>(4, 0.0);
  CHECK_THROWS_AS_KIND(CoTeachingState(std::make_unique<SharedClassifier>(buffer),
                                       std::make_unique<SharedClassifier>(buffer), tiny_hp()),
                       ErrorKind::InvalidArgument);
  CHECK_THROWS_AS_KIND(CoTeachingState(nullptr, nullptr, tiny_hp()), ErrorKind::InvalidArgument);
}

TEST_CASE("cross training is deterministic and reports selector quality") {
  const auto clean = tiny_stream(48, 4, 8);
  Dataset d;
  d.class_count = 4;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    SkeletonSequence s;
    s.sample_id = clean.sample_ids[i];
    s.label = clean.labels[i];
    s.frames = Tensor3f(1, 1, 3);
    d.samples.push_back(s);
  }
  const auto noisy = inject_symmetric_noise(d, 0.25, 4);
  ModalityStream train = clean;
  for (std::size_t i = 0; i < train.size(); ++i) train.labels[i] = noisy.samples[i].label;
  const auto eval = tiny_stream(8, 4, 9);

  const SelectionSchedule sched{0.25, 2};
  auto r1 = cross_train(train, eval, noisy.corrupted, sched, tiny_hp(), tiny_backbone(), 4, 77);
  auto r2 = cross_train(train, eval, noisy.corrupted, sched, tiny_hp(), tiny_backbone(), 4, 77);
  CHECK(parameter_hash(r1.model->net()) == parameter_hash(r2.model->net()));
  CHECK(r1.chosen_net == r2.chosen_net);
  REQUIRE(r1.epochs.size() == 3);
  CHECK(r1.epochs[0].keep_ratio == 1.0);
  CHECK(r1.epochs[1].keep_ratio == doctest::Approx(0.875));
  CHECK(r1.epochs[2].keep_ratio == doctest::Approx(0.75));
  CHECK(r1.epochs[0].precision_net1 == doctest::Approx(0.75));
  CHECK(r1.epochs[0].recall_net1 == doctest::Approx(1.0));
  CHECK(r1.selection_log.size() == r2.selection_log.size());
  CHECK_FALSE(r1.model->training());
  const double chosen_acc = r1.chosen_net == 1 ? r1.holdout_acc_net1 : r1.holdout_acc_net2;
  CHECK(chosen_acc >= std::min(r1.holdout_acc_net1, r1.holdout_acc_net2));
  CHECK((r1.chosen_net == 1) == (r1.holdout_acc_net1 >= r1.holdout_acc_net2));

  const auto dir = test::temp_dir("sellog");
  write_selection_log_csv(r1.selection_log, train.sample_ids, dir / "log.csv");
  std::ifstream in(dir / "log.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,batch,net,sample_id");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == r1.selection_log.size());

  auto other = cross_train(train, eval, noisy.corrupted, sched, tiny_hp(), tiny_backbone(), 4, 78);
  CHECK(parameter_hash(other.model->net()) != parameter_hash(r1.model->net()));
}

TEST_CASE("plain training is deterministic and lowers the loss") {
  const auto stream = tiny_stream(32, 4, 10);
  auto hp = tiny_hp();
  hp.epochs = 6;
  auto a = train_plain(stream, hp, tiny_backbone(), 4, 3);
  auto b = train_plain(stream, hp, tiny_backbone(), 4, 3);
  CHECK(parameter_hash(a.model->net()) == parameter_hash(b.model->net()));
  CHECK(a.epochs.back().loss_net1 < a.epochs.front().loss_net1);
  ModalityStream empty;
  CHECK_THROWS_AS_KIND(train_plain(empty, hp, tiny_backbone(), 4, 3), ErrorKind::InvalidConfiguration);
}

TEST_CASE("epoch order is a seeded permutation") {
  const auto a = epoch_order(50, 1, 0);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(sorted[i] == i);
  CHECK(epoch_order(50, 1, 0) == a);
  CHECK(epoch_order(50, 1, 1) != a);
  CHECK(epoch_order(50, 2, 0) != a);
}
