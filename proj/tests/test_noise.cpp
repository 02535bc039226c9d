#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <numeric>
#include <set>

#include "skelnoise/noise.hpp"
#include "test_util.hpp"

using namespace skelnoise;

namespace {

// Labels only; tensors are tiny since injection never looks at them.
Dataset labelled_dataset(std::size_t n, int K, std::uint64_t seed = 1) {
  Dataset d;
  d.class_count = K;
  d.joint_count = 1;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    SkeletonSequence s;
    s.sample_id = "s" + std::to_string(i);
    s.label = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(K)));
    s.frames = Tensor3f(1, 1, 3);
    s.frames.at(0, 0, 0) = static_cast<float>(i);
    d.samples.push_back(s);
  }
  return d;
}

double uniformity_p_value(const NoisyDataset& noisy, int true_class) {
  const int K = noisy.class_count;
  std::vector<double> counts(K, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    if (!noisy.corrupted[i] || noisy.true_labels[i] != true_class) continue;
    counts[noisy.samples[i].label] += 1.0;
    total += 1.0;
  }
  const double expected = total / (K - 1);
  double stat = 0.0;
  for (int c = 0; c < K; ++c) {
    if (c == true_class) continue;
    stat += (counts[c] - expected) * (counts[c] - expected) / expected;
  }
  boost::math::chi_squared dist(K - 2);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace

TEST_CASE("zero ratio leaves every label alone") {
  auto d = labelled_dataset(50, 4);
  auto noisy = inject_symmetric_noise(d, 0.0, 9);
  CHECK(noisy.corrupted_count() == 0);
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    CHECK(noisy.samples[i].label == d.samples[i].label);
    CHECK(noisy.true_labels[i] == d.samples[i].label);
  }
}

TEST_CASE("n=100 at ratio 0.2 flips exactly 20 labels") {
  auto noisy = inject_symmetric_noise(labelled_dataset(100, 5), 0.2, 4);
  CHECK(noisy.corrupted_count() == 20);
  for (std::size_t i = 0; i < noisy.size(); ++i)
    if (noisy.corrupted[i]) CHECK(noisy.samples[i].label != noisy.true_labels[i]);
}

TEST_CASE("corruption count is floor(r n) over a grid") {
  for (double r : {0.0, 0.1, 0.2, 0.29, 0.3, 0.4, 0.5, 0.7, 0.8, 0.95}) {
    for (std::size_t n : {1u, 2u, 7u, 10u, 33u, 100u, 999u}) {
      // exact rational floor: r is a two-decimal number
      const auto hundredths = static_cast<std::size_t>(std::llround(r * 100));
      const std::size_t expected = hundredths * n / 100;
      CHECK(corruption_count(r, n) == expected);
      auto noisy = inject_symmetric_noise(labelled_dataset(n, 3, n), r, 11);
      CHECK(noisy.corrupted_count() == expected);
    }
  }
}

TEST_CASE("injection invariants hold for random configurations") {
  Rng rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    const int K = 2 + static_cast<int>(rng.uniform_index(9));
    const std::size_t n = 1 + rng.uniform_index(400);
    const double r = rng.uniform(0.0, 0.99);
    auto d = labelled_dataset(n, K, trial);
    auto noisy = inject_symmetric_noise(d, r, rng.next_u64());
    REQUIRE(noisy.size() == n);
    CHECK(noisy.corrupted_count() == static_cast<std::size_t>(std::floor(r * n + 1e-9)));
    for (std::size_t i = 0; i < n; ++i) {
      const bool flipped = noisy.samples[i].label != noisy.true_labels[i];
      CHECK(flipped == static_cast<bool>(noisy.corrupted[i]));
      CHECK(noisy.samples[i].label >= 0);
      CHECK(noisy.samples[i].label < K);
      CHECK(noisy.true_labels[i] == d.samples[i].label);
      CHECK(noisy.samples[i].sample_id == d.samples[i].sample_id);
      CHECK(noisy.samples[i].frames == d.samples[i].frames);
    }
  }
}

TEST_CASE("same seed gives identical output and manifest bytes") {
  auto d = labelled_dataset(500, 6);
  auto a = inject_symmetric_noise(d, 0.4, 123);
  auto b = inject_symmetric_noise(d, 0.4, 123);
  CHECK(a.corrupted == b.corrupted);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.samples[i].label == b.samples[i].label);
  CHECK(nlohmann::json(make_manifest(a)).dump() == nlohmann::json(make_manifest(b)).dump());

  auto c = inject_symmetric_noise(d, 0.4, 124);
  CHECK(c.corrupted != a.corrupted);
}

TEST_CASE("noisy labels are uniform over the wrong classes") {
  auto noisy = inject_symmetric_noise(labelled_dataset(10000, 10, 5), 0.5, 2024);
  for (int c = 0; c < 10; ++c) CHECK(uniformity_p_value(noisy, c) > 0.01);
}

TEST_CASE("flipped samples are spread uniformly over positions") {
  // Each of 10 position buckets should hold about a tenth of the flips.
  auto noisy = inject_symmetric_noise(labelled_dataset(10000, 4, 8), 0.3, 99);
  std::vector<double> buckets(10, 0.0);
  for (std::size_t i = 0; i < noisy.size(); ++i)
    if (noisy.corrupted[i]) buckets[i / 1000] += 1.0;
  double stat = 0.0;
  for (double b : buckets) stat += (b - 300.0) * (b - 300.0) / 300.0;
  boost::math::chi_squared dist(9);
  CHECK(boost::math::cdf(boost::math::complement(dist, stat)) > 0.01);
}

TEST_CASE("invalid ratios and degenerate class counts are rejected") {
  auto d = labelled_dataset(10, 3);
  CHECK_THROWS_AS_KIND(inject_symmetric_noise(d, 1.0, 1), ErrorKind::InvalidRatio);
  CHECK_THROWS_AS_KIND(inject_symmetric_noise(d, -0.1, 1), ErrorKind::InvalidRatio);
  CHECK_THROWS_AS_KIND(inject_symmetric_noise(d, std::nan(""), 1), ErrorKind::InvalidRatio);
  auto single = labelled_dataset(10, 1);
  CHECK_THROWS_AS_KIND(inject_symmetric_noise(single, 0.2, 1), ErrorKind::DegenerateClasses);
  std::vector<double> confusion(9, 1.0 / 3);
  CHECK_THROWS_AS_KIND(inject_asymmetric_noise(d, confusion, 1), ErrorKind::NotImplemented);
}

TEST_CASE("manifest round-trips through JSON and reapplies") {
  auto d = labelled_dataset(200, 4);
  auto noisy = inject_symmetric_noise(d, 0.5, 31);
  const NoiseManifest m = make_manifest(noisy);
  CHECK(m.records.size() == d.samples.size());
  const auto j = nlohmann::json(m);
  CHECK(j.at("corrupted_count").get<std::size_t>() == 100);
  const auto back = j.get<NoiseManifest>();
  CHECK(back == m);

  auto again = apply_manifest(d, back);
  CHECK(again.corrupted == noisy.corrupted);
  for (std::size_t i = 0; i < d.samples.size(); ++i) CHECK(again.samples[i].label == noisy.samples[i].label);

  auto broken = back;
  broken.records[3].true_label = (broken.records[3].true_label + 1) % 4;
  CHECK_THROWS_AS_KIND(apply_manifest(d, broken), ErrorKind::Inconsistent);
  broken = back;
  broken.records.pop_back();
  CHECK_THROWS_AS_KIND(apply_manifest(d, broken), ErrorKind::Inconsistent);
}

TEST_CASE("selector quality on the clean set and on everything") {
  auto noisy = inject_symmetric_noise(labelled_dataset(1000, 5), 0.4, 3);
  std::vector<std::string> clean, all;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    all.push_back(noisy.samples[i].sample_id);
    if (!noisy.corrupted[i]) clean.push_back(noisy.samples[i].sample_id);
  }
  auto q = selector_quality(clean, noisy);
  REQUIRE(q.precision.has_value());
  CHECK(*q.precision == 1.0);
  CHECK(q.recall == 1.0);

  auto everything = selector_quality(all, noisy);
  CHECK(*everything.precision == doctest::Approx(1.0 - 400.0 / 1000.0).epsilon(1e-12));
  CHECK(everything.recall == 1.0);

  auto none = selector_quality(std::vector<std::string>{}, noisy);
  CHECK_FALSE(none.precision.has_value());
  CHECK(none.recall == 0.0);

  std::vector<std::string> bad{"nope"};
  CHECK_THROWS_AS_KIND(selector_quality(bad, noisy), ErrorKind::Lookup);
}

TEST_CASE("random half selection at r=0.4 has precision near 0.6") {
  auto noisy = inject_symmetric_noise(labelled_dataset(5000, 4), 0.4, 17);
  Rng rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<std::size_t> idx(noisy.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
    idx.resize(2500);
    auto q = selector_quality(std::span<const std::size_t>(idx), noisy);
    CHECK(*q.precision == doctest::Approx(0.6).epsilon(0.05));
    CHECK(q.recall == doctest::Approx(0.5).epsilon(0.1));
  }
}
