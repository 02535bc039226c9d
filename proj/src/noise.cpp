#include "skelnoise/noise.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "skelnoise/error.hpp"
#include "skelnoise/rng.hpp"

namespace skelnoise {

using nlohmann::json;

std::size_t NoisyDataset::corrupted_count() const {
  return static_cast<std::size_t>(std::count(corrupted.begin(), corrupted.end(), std::uint8_t{1}));
}

std::size_t NoisyDataset::index_of(const std::string& sample_id) const {
  if (index_.size() != samples.size()) {
    index_.clear();
    for (std::size_t i = 0; i < samples.size(); ++i) index_.emplace(samples[i].sample_id, i);
  }
  auto it = index_.find(sample_id);
  if (it == index_.end()) fail(ErrorKind::Lookup, "unknown sample id '" + sample_id + "'");
  return it->second;
}

void to_json(json& j, const NoiseManifest& m) {
  json records = json::array();
  for (const NoiseRecord& r : m.records)
    records.push_back({{"sample_id", r.sample_id}, {"true_label", r.true_label}, {"noisy_label", r.noisy_label}});
  j = json{{"noise_type", m.noise_type},
           {"seed", m.seed},
           {"noise_ratio", m.noise_ratio},
           {"class_count", m.class_count},
           {"corrupted_count", std::count_if(m.records.begin(), m.records.end(),
                                             [](const NoiseRecord& r) { return r.true_label != r.noisy_label; })},
           {"records", std::move(records)}};
}

void from_json(const json& j, NoiseManifest& m) {
  m.noise_type = j.value("noise_type", std::string("symmetric"));
  m.seed = j.at("seed").get<std::uint64_t>();
  m.noise_ratio = j.at("noise_ratio").get<double>();
  m.class_count = j.at("class_count").get<int>();
  m.records.clear();
  for (const json& r : j.at("records"))
    m.records.push_back({r.at("sample_id").get<std::string>(), r.at("true_label").get<int>(),
                         r.at("noisy_label").get<int>()});
}

std::size_t corruption_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

NoisyDataset inject_symmetric_noise(const Dataset& data, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0))
    fail(ErrorKind::InvalidRatio, "noise ratio must lie in [0, 1), got " + std::to_string(ratio));
  const int K = data.class_count;
  if (K < 2) fail(ErrorKind::DegenerateClasses, "symmetric noise needs at least 2 classes");

  NoisyDataset out;
  out.samples = data.samples;
  out.noise_ratio = ratio;
  out.seed = seed;
  out.class_count = K;
  const std::size_t n = out.samples.size();
  out.true_labels.resize(n);
  out.corrupted.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (out.samples[i].label < 0 || out.samples[i].label >= K)
      fail(ErrorKind::InvalidLabel, out.samples[i].sample_id + ": label out of range");
    out.true_labels[i] = out.samples[i].label;
  }

  const std::size_t flips = corruption_count(ratio, n);
  Rng rng(derive_seed(seed, "symmetric-noise"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Partial Fisher-Yates: the first `flips` slots become a uniform sample
  // without replacement.
  for (std::size_t i = 0; i < flips; ++i) {
    const std::size_t j = i + rng.uniform_index(n - i);
    std::swap(order[i], order[j]);
  }
  for (std::size_t i = 0; i < flips; ++i) {
    const std::size_t idx = order[i];
    const int truth = out.true_labels[idx];
    int noisy = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(K - 1)));
    if (noisy >= truth) ++noisy;
    out.samples[idx].label = noisy;
    out.corrupted[idx] = 1;
  }
  return out;
}

NoisyDataset inject_asymmetric_noise(const Dataset&, std::span<const double>, std::uint64_t) {
  fail(ErrorKind::NotImplemented, "asymmetric label noise is not supported");
}

NoiseManifest make_manifest(const NoisyDataset& noisy) {
  NoiseManifest m;
  m.seed = noisy.seed;
  m.noise_ratio = noisy.noise_ratio;
  m.class_count = noisy.class_count;
  m.records.reserve(noisy.size());
  for (std::size_t i = 0; i < noisy.size(); ++i)
    m.records.push_back({noisy.samples[i].sample_id, noisy.true_labels[i], noisy.samples[i].label});
  return m;
}

NoisyDataset apply_manifest(const Dataset& data, const NoiseManifest& manifest) {
  if (manifest.records.size() != data.samples.size())
    fail(ErrorKind::Inconsistent, "manifest has " + std::to_string(manifest.records.size()) +
                                      " records for " + std::to_string(data.samples.size()) + " samples");
  NoisyDataset out;
  out.samples = data.samples;
  out.noise_ratio = manifest.noise_ratio;
  out.seed = manifest.seed;
  out.class_count = manifest.class_count;
  out.true_labels.resize(out.samples.size());
  out.corrupted.assign(out.samples.size(), 0);
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const NoiseRecord& r = manifest.records[i];
    SkeletonSequence& s = out.samples[i];
    if (r.sample_id != s.sample_id || r.true_label != s.label)
      fail(ErrorKind::Inconsistent, "manifest record " + std::to_string(i) + " does not match sample " + s.sample_id);
    out.true_labels[i] = r.true_label;
    s.label = r.noisy_label;
    out.corrupted[i] = r.noisy_label != r.true_label ? 1 : 0;
  }
  return out;
}

SelectorQuality selector_quality(std::span<const std::size_t> selected, const NoisyDataset& noisy) {
  SelectorQuality q;
  q.selected = selected.size();
  std::vector<std::uint8_t> seen(noisy.size(), 0);
  for (std::size_t idx : selected) {
    if (idx >= noisy.size()) fail(ErrorKind::Lookup, "selected index out of range");
    if (seen[idx]) fail(ErrorKind::InvalidArgument, "duplicate selection index");
    seen[idx] = 1;
    if (!noisy.corrupted[idx]) ++q.selected_clean;
  }
  const std::size_t clean_total = noisy.size() - noisy.corrupted_count();
  if (q.selected > 0) q.precision = static_cast<double>(q.selected_clean) / static_cast<double>(q.selected);
  q.recall = clean_total == 0 ? 0.0 : static_cast<double>(q.selected_clean) / static_cast<double>(clean_total);
  return q;
}

SelectorQuality selector_quality(std::span<const std::string> selected_ids, const NoisyDataset& noisy) {
  std::vector<std::size_t> idx;
  idx.reserve(selected_ids.size());
  for (const std::string& id : selected_ids) idx.push_back(noisy.index_of(id));
  return selector_quality(std::span<const std::size_t>(idx), noisy);
}

}  // namespace skelnoise
