#include <doctest.h>

#include <cmath>
#include <numeric>

#include "skelnoise/cm_moe.hpp"
#include "skelnoise/dataset.hpp"
#include "test_util.hpp"

using namespace skelnoise;

namespace {

std::vector<double> random_simplex(Rng& rng, std::size_t k) {
  std::vector<double> v(k);
  double total = 0.0;
  for (double& x : v) total += (x = -std::log(rng.uniform(1e-12, 1.0)));
  for (double& x : v) x /= total;
  return v;
}

struct Fixture {
  SkeletonTopology topo = SkeletonTopology::toy9();
  Dataset data;
  std::array<ModalityStream, 3> streams;
  std::unique_ptr<FusionModel> model;

  explicit Fixture(std::uint64_t seed, int per_class = 5) {
    SyntheticSpec spec;
    spec.class_count = 3;
    spec.samples_per_class = per_class;
    spec.frames = 6;
    data = make_synthetic_dataset(spec, seed);
    std::vector<SkeletonSequence> centred;
    for (const auto& s : data.samples) centred.push_back(center_on_root(s, topo));
    GraphNetConfig cfg;
    cfg.widths = {4, 6};
    std::array<std::unique_ptr<Classifier>, 3> experts;
    for (int m = 0; m < 3; ++m) {
      streams[m] = make_stream(kModalities[m], centred, topo);
      experts[m] = std::make_unique<ReferenceSTGCN>(make_backbone(cfg, streams[m], 3, seed + m));
    }
    model = std::make_unique<FusionModel>(std::move(experts), GateNetwork(spec.frames, topo.joint_count(), "toy9",
                                                                          seed + 7, {4}));
  }

  ModalityStreams view() const { return {{&streams[0], &streams[1], &streams[2]}}; }
};

void jitter(std::span<double> p, Rng& rng, double scale) {
  for (double& x : p) x += scale * rng.normal();
}

// mean -log S_y over `rows`, straight from the batched fused scores
double fused_nll(const FusionModel& model, const ModalityStreams& data, std::span<const std::size_t> rows) {
  const Matrix s = fused_scores(model, data);
  double total = 0.0;
  for (std::size_t i : rows) total += -std::log(s.at(i, data[0].labels[i]));
  return total / static_cast<double>(rows.size());
}

}  // namespace

TEST_CASE("one-hot gate returns the chosen expert exactly") {
  Fixture f(1);
  const std::size_t n = f.model->gate.net().parameter_count();
  for (int chosen = 0; chosen < 3; ++chosen) {
    FusionModel m(*f.model);
    m.gate.net().parameters()[n - 3 + chosen] = 1000.0;
    for (const auto& sample : f.data.samples) {
      const auto pred = fuse(m, sample, f.topo);
      CHECK(pred.weights[chosen] == 1.0);
      CHECK(pred.weights[(chosen + 1) % 3] == 0.0);
      CHECK(pred.fused == pred.expert_scores[chosen]);
    }
  }

  Rng rng(2);
  std::array<std::vector<double>, 3> scores{random_simplex(rng, 5), random_simplex(rng, 5), random_simplex(rng, 5)};
  const auto out = combine_scores(scores, {0.0, 1.0, 0.0});
  CHECK(out.fused == scores[1]);
}

TEST_CASE("fused scores stay on the simplex") {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + rng.uniform_index(59);
    std::array<std::vector<double>, 3> scores{random_simplex(rng, k), random_simplex(rng, k), random_simplex(rng, k)};
    const auto w = random_simplex(rng, 3);
    const auto out = combine_scores(scores, {w[0], w[1], w[2]});
    const double total = std::accumulate(out.fused.begin(), out.fused.end(), 0.0);
    CHECK(std::abs(total - 1.0) <= 1e-6);
    for (std::size_t c = 0; c < k; ++c) {
      const double lo = std::min({scores[0][c], scores[1][c], scores[2][c]});
      const double hi = std::max({scores[0][c], scores[1][c], scores[2][c]});
      CHECK(out.fused[c] >= lo - 1e-15);
      CHECK(out.fused[c] <= hi + 1e-15);
    }
  }

  Fixture f(4);
  FusionModel m(*f.model);
  jitter(m.gate.net().parameters(), rng, 0.5);
  for (const auto& sample : f.data.samples) {
    const auto pred = fuse(m, sample, f.topo);
    CHECK(pred.weights[0] + pred.weights[1] + pred.weights[2] == doctest::Approx(1.0).epsilon(1e-12));
    for (double w : pred.weights) CHECK(w > 0.0);
    CHECK(std::accumulate(pred.fused.begin(), pred.fused.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
  }
  const Matrix batched = fused_scores(m, f.view());
  for (std::size_t i = 0; i < f.data.samples.size(); ++i) {
    const auto pred = fuse(m, f.data.samples[i], f.topo);
    for (std::size_t c = 0; c < 3; ++c) CHECK(batched.at(i, c) == doctest::Approx(pred.fused[c]).epsilon(1e-12));
  }
}

TEST_CASE("fresh gate weighs the experts equally") {
  Fixture f(5);
  const Matrix w = gate_weights(f.model->gate, f.view());
  for (std::size_t r = 0; r < w.rows; ++r)
    for (int m = 0; m < 3; ++m) CHECK(w.at(r, m) == 1.0 / 3.0);
}

TEST_CASE("fixed weights match a scalar loop") {
  Fixture f(6);
  const std::array<double, 3> weights{0.6, 0.6, 0.4};
  const Classifier* experts[3] = {f.model->experts[0].get(), f.model->experts[1].get(), f.model->experts[2].get()};
  const auto probs = expert_probabilities(*f.model, f.view());
  const Matrix batched = fixed_weight_scores(probs, weights);
  for (std::size_t i = 0; i < f.data.samples.size(); ++i) {
    const auto pred = fixed_weight_ensemble(experts, weights, f.data.samples[i], f.topo);
    int best = 0;
    for (int c = 0; c < 3; ++c) {
      double expect = 0.0;
      expect += 0.6 * pred.expert_scores[0][c];
      expect += 0.6 * pred.expert_scores[1][c];
      expect += 0.4 * pred.expert_scores[2][c];
      CHECK(pred.fused[c] == expect);
      const double b = 0.6 * probs[0].at(i, c) + 0.6 * probs[1].at(i, c) + 0.4 * probs[2].at(i, c);
      CHECK(batched.at(i, c) == b);
      CHECK(probs[0].at(i, c) == doctest::Approx(pred.expert_scores[0][c]).epsilon(1e-12));
      if (pred.fused[c] > pred.fused[best]) best = c;
    }
    CHECK(pred.predicted == best);
  }
}

TEST_CASE("scaling the weights keeps the prediction") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::array<std::vector<double>, 3> scores{random_simplex(rng, 7), random_simplex(rng, 7), random_simplex(rng, 7)};
    const std::array<double, 3> w{rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)};
    const double s = 1 << rng.uniform_index(6);
    const auto a = combine_scores(scores, w);
    const auto b = combine_scores(scores, {s * w[0], s * w[1], s * w[2]});
    CHECK(a.predicted == b.predicted);
  }
}

TEST_CASE("all-zero ensemble weights are rejected") {
  Fixture f(8);
  const Classifier* experts[3] = {f.model->experts[0].get(), f.model->experts[1].get(), f.model->experts[2].get()};
  CHECK_THROWS_AS_KIND(fixed_weight_ensemble(experts, {0.0, 0.0, 0.0}, f.data.samples[0], f.topo),
                       ErrorKind::DegenerateWeights);
  CHECK_THROWS_AS_KIND(fixed_weight_scores(expert_probabilities(*f.model, f.view()), {0.0, 0.0, 0.0}),
                       ErrorKind::DegenerateWeights);
  CHECK_THROWS_AS_KIND(fixed_weight_ensemble(std::span(experts, 2), {1.0, 1.0, 1.0}, f.data.samples[0], f.topo),
                       ErrorKind::InvalidConfiguration);
  f.model->experts[1]->set_training(true);
  CHECK_THROWS_AS_KIND(fixed_weight_ensemble(experts, {1.0, 1.0, 1.0}, f.data.samples[0], f.topo),
                       ErrorKind::InvalidArgument);
}

TEST_CASE("gate fine-tuning preconditions") {
  Fixture f(9);
  FusionHyperparams hp;
  const std::vector<std::size_t> clean{0, 3, 4};
  CHECK_THROWS_AS_KIND(finetune_gate(*f.model, f.view(), {}, hp, 1), ErrorKind::InvalidConfiguration);
  const std::vector<std::size_t> bad{0, 999};
  CHECK_THROWS_AS_KIND(finetune_gate(*f.model, f.view(), bad, hp, 1), ErrorKind::Lookup);

  hp.epochs = 0;
  const std::vector<double> before(f.model->gate.net().parameters().begin(), f.model->gate.net().parameters().end());
  CHECK(finetune_gate(*f.model, f.view(), clean, hp, 1).empty());
  CHECK(std::equal(before.begin(), before.end(), f.model->gate.net().parameters().begin()));
}

TEST_CASE("frozen experts stay untouched, unfrozen ones move") {
  Fixture f(10);
  FusionHyperparams hp;
  hp.epochs = 2;
  hp.batch_size = 4;
  std::vector<std::size_t> clean(f.data.samples.size());
  std::iota(clean.begin(), clean.end(), std::size_t{0});

  FusionModel frozen(*f.model);
  std::array<std::string, 3> hashes;
  for (int m = 0; m < 3; ++m)
    hashes[m] = parameter_hash(static_cast<const ReferenceSTGCN&>(*frozen.experts[m]).net());
  const std::string gate_before = parameter_hash(frozen.gate.net());
  const auto stats = finetune_gate(frozen, f.view(), clean, hp, 3);
  REQUIRE(stats.size() == 2);
  for (const auto& s : stats) {
    CHECK(std::isfinite(s.loss));
    CHECK(s.mean_weights[0] + s.mean_weights[1] + s.mean_weights[2] == doctest::Approx(1.0));
  }
  for (int m = 0; m < 3; ++m) {
    CHECK(parameter_hash(static_cast<const ReferenceSTGCN&>(*frozen.experts[m]).net()) == hashes[m]);
    CHECK_FALSE(frozen.experts[m]->training());
  }
  CHECK(parameter_hash(frozen.gate.net()) != gate_before);
  CHECK_FALSE(frozen.gate.training());

  FusionModel again(*f.model);
  finetune_gate(again, f.view(), clean, hp, 3);
  CHECK(parameter_hash(again.gate.net()) == parameter_hash(frozen.gate.net()));

  hp.freeze_experts = false;
  FusionModel open(*f.model);
  finetune_gate(open, f.view(), clean, hp, 3);
  for (int m = 0; m < 3; ++m)
    CHECK(parameter_hash(static_cast<const ReferenceSTGCN&>(*open.experts[m]).net()) != hashes[m]);
}

TEST_CASE("one full-batch gate step follows the fused-loss gradient") {
  // momentum 0, no decay, a single batch: theta' = theta - lr * grad
  for (bool freeze : {true, false}) {
    CAPTURE(freeze);
    Fixture f(11, 3);
    Rng rng(12);
    jitter(f.model->gate.net().parameters(), rng, 0.3);
    for (auto& ex : f.model->experts) jitter(ex->parameters(), rng, 0.05);
    const std::vector<std::size_t> clean{0, 2, 3, 5, 6, 8};

    FusionHyperparams hp;
    hp.epochs = 1;
    hp.batch_size = 64;
    hp.learning_rate = 1e-3;
    hp.momentum = 0.0;
    hp.weight_decay = 0.0;
    hp.freeze_experts = freeze;
    FusionModel stepped(*f.model);
    finetune_gate(stepped, f.view(), clean, hp, 1);

    std::vector<std::span<double>> base{f.model->gate.net().parameters()};
    std::vector<std::span<double>> after{stepped.gate.net().parameters()};
    if (!freeze)
      for (int m = 0; m < 3; ++m) {
        base.push_back(f.model->experts[m]->parameters());
        after.push_back(stepped.experts[m]->parameters());
      }
    std::vector<std::vector<double>> grad;
    for (std::size_t b = 0; b < base.size(); ++b) {
      grad.emplace_back(base[b].size());
      for (std::size_t i = 0; i < base[b].size(); ++i) grad[b][i] = (base[b][i] - after[b][i]) / hp.learning_rate;
    }

    const double h = 1e-5;
    for (int dir = 0; dir < 10; ++dir) {
      std::vector<std::vector<double>> d;
      double analytic = 0.0;
      for (std::size_t b = 0; b < base.size(); ++b) {
        d.emplace_back(base[b].size());
        for (std::size_t i = 0; i < d[b].size(); ++i) analytic += grad[b][i] * (d[b][i] = rng.normal());
      }
      auto shift = [&](double s) {
        for (std::size_t b = 0; b < base.size(); ++b)
          for (std::size_t i = 0; i < d[b].size(); ++i) base[b][i] += s * d[b][i];
      };
      shift(h);
      const double up = fused_nll(*f.model, f.view(), clean);
      shift(-2 * h);
      const double down = fused_nll(*f.model, f.view(), clean);
      shift(h);
      const double numeric = (up - down) / (2 * h);
      CHECK(std::abs(numeric - analytic) / std::max(std::abs(numeric), 1e-8) < 1e-4);
    }
  }
}
