// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Every oracle below is written from scratch here rather than borrowed from the library.
#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "skelnoise/cm_moe.hpp"
#include "skelnoise/config.hpp"
#include "skelnoise/cross_training.hpp"
#include "skelnoise/dataset.hpp"
#include "skelnoise/global_select.hpp"
#include "skelnoise/model.hpp"
#include "skelnoise/noise.hpp"
#include "skelnoise/pipeline.hpp"
#include "skelnoise/rng.hpp"

using namespace skelnoise;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // records the first few problems, keeps counting the rest
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    if (pass || ++extra_ < 3) detail << (detail.tellp() > 0 ? "; " : "") << what;
    pass = false;
  }

 private:
  int extra_ = 0;
};

int failures = 0;

void criterion(int id, const char* name, double time_limit_s, const std::function<void(Outcome&)>& body) {
  Outcome out;
  const auto t0 = Clock::now();
  try {
    body(out);
  } catch (const std::exception& e) {
    out.pass = false;
    out.detail << (out.detail.tellp() > 0 ? "; " : "") << "exception: " << e.what();
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (time_limit_s > 0 && secs >= time_limit_s) {
    out.pass = false;
    out.detail << (out.detail.tellp() > 0 ? "; " : "") << "over the " << time_limit_s << " s budget";
  }
  if (!out.pass) ++failures;
  std::printf("%s [%d] %s (%.1f s)%s%s\n", out.pass ? "PASS" : "FAIL", id, name, secs,
              out.detail.tellp() > 0 ? ": " : "", out.detail.str().c_str());
  std::fflush(stdout);
}

std::string fmt(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------- 1

// random tree over V joints: a shuffled order, each joint hangs off an earlier one
std::vector<int> random_parents(Rng& rng, int V) {
  std::vector<int> order(V);
  std::iota(order.begin(), order.end(), 0);
  for (int i = V - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_index(i + 1)]);
  std::vector<int> parent(V);
  parent[order[0]] = order[0];
  for (int i = 1; i < V; ++i) parent[order[i]] = order[rng.uniform_index(i)];
  return parent;
}

void modality_oracles(Outcome& out) {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const int T = 2 + static_cast<int>(rng.uniform_index(63));
    const int V = 1 + static_cast<int>(rng.uniform_index(25));
    const auto parent = random_parents(rng, V);
    std::vector<std::pair<int, int>> pairs;
    for (int v = 0; v < V; ++v) pairs.emplace_back(v, parent[v]);
    const SkeletonTopology topo("random", V, pairs);

    SkeletonSequence seq;
    seq.sample_id = "t" + std::to_string(trial);
    seq.frames = Tensor3f(T, V, 3);
    std::vector<float> raw(static_cast<std::size_t>(T) * V * 3);
    for (float& x : raw) x = static_cast<float>(rng.uniform(-3.0, 3.0));
    std::copy(raw.begin(), raw.end(), seq.frames.data().begin());

    std::vector<float> bone(raw.size()), motion(raw.size(), 0.0f);
    for (int t = 0; t < T; ++t)
      for (int v = 0; v < V; ++v)
        for (int c = 0; c < 3; ++c) {
          const std::size_t i = (static_cast<std::size_t>(t) * V + v) * 3 + c;
          bone[i] = raw[(static_cast<std::size_t>(t) * V + parent[v]) * 3 + c] - raw[i];
          if (t + 1 < T) motion[i] = raw[i + static_cast<std::size_t>(V) * 3] - raw[i];
        }

    const auto b = derive_bone(seq, topo);
    const auto m = derive_motion(seq);
    const bool bone_ok = std::memcmp(b.data.data().data(), bone.data(), bone.size() * sizeof(float)) == 0;
    const bool motion_ok = std::memcmp(m.data.data().data(), motion.data(), motion.size() * sizeof(float)) == 0;
    out.expect(bone_ok, "bone differs on sequence " + std::to_string(trial));
    out.expect(motion_ok, "motion differs on sequence " + std::to_string(trial));
  }
  if (out.pass) out.detail << "100 sequences bitwise equal";
}

// ---------------------------------------------------------------- 2

Dataset labelled(std::size_t n, int K, std::uint64_t seed) {
  Dataset d;
  d.class_count = K;
  d.joint_count = 1;
  Rng rng(seed);
  d.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.samples[i].sample_id = "n" + std::to_string(100000 + i);
    d.samples[i].label = static_cast<int>(rng.uniform_index(K));
    d.samples[i].frames = Tensor3f(1, 1, 3);
  }
  return d;
}

void noise_injector(Outcome& out) {
  const std::size_t n = 10000;
  const int K = 5;
  const Dataset d = labelled(n, K, 7);
  double worst_p = 1.0;
  for (int tenths : {2, 4, 5, 8}) {
    const double r = tenths / 10.0;
    const std::size_t expected = tenths * n / 10;
    const auto noisy = inject_symmetric_noise(d, r, 2024);
    std::size_t flipped = 0;
    std::vector<std::vector<double>> counts(K, std::vector<double>(K, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      const int truth = d.samples[i].label;
      const int got = noisy.samples[i].label;
      if (noisy.corrupted[i]) {
        ++flipped;
        out.expect(got != truth, "flipped label equals the true label");
        counts[truth][got] += 1.0;
      } else {
        out.expect(got == truth, "unflipped label changed");
      }
    }
    out.expect(flipped == expected, "r=" + fmt(r, 1) + ": " + std::to_string(flipped) + " flips, want " +
                                        std::to_string(expected));
    for (int c = 0; c < K; ++c) {
      double total = 0.0;
      for (int k = 0; k < K; ++k) total += counts[c][k];
      const double e = total / (K - 1);
      double stat = 0.0;
      for (int k = 0; k < K; ++k)
        if (k != c) stat += (counts[c][k] - e) * (counts[c][k] - e) / e;
      const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(K - 2), stat));
      worst_p = std::min(worst_p, p);
      out.expect(p > 0.01, "r=" + fmt(r, 1) + " class " + std::to_string(c) + " chi-square p=" + fmt(p));
    }
    const std::string a = nlohmann::json(make_manifest(noisy)).dump();
    const std::string b = nlohmann::json(make_manifest(inject_symmetric_noise(d, r, 2024))).dump();
    out.expect(a == b, "manifest differs between identical seeds at r=" + fmt(r, 1));
  }
  if (out.pass) out.detail << "exact counts, min chi-square p " << fmt(worst_p);
}

// ---------------------------------------------------------------- 3

void schedule(Outcome& out) {
  int cells = 0;
  for (int tenths : {2, 5, 8})
    for (int t_in : {5, 10})
      for (int t = 0; t <= 30; ++t) {
        // 1 - r * min(t, T_in) / T_in as the fraction (10 T_in - tenths min(t, T_in)) / (10 T_in)
        const long num = 10L * t_in - static_cast<long>(tenths) * std::min(t, t_in);
        const double want = static_cast<double>(num) / static_cast<double>(10L * t_in);
        const double got = keep_ratio({tenths / 10.0, t_in}, t);
        ++cells;
        out.expect(got == want, "r=0." + std::to_string(tenths) + " T_in=" + std::to_string(t_in) +
                                    " T=" + std::to_string(t) + ": " + fmt(got, 17) + " vs " + fmt(want, 17));
      }
  if (out.pass) out.detail << cells << " grid cells exact";
}

// ---------------------------------------------------------------- 4

std::size_t oracle_count(double ratio, std::size_t n) {
  std::size_t m = 0;
  while (m < n && static_cast<double>(m) < ratio * static_cast<double>(n) - 1e-9) ++m;
  return n == 0 ? 0 : std::max<std::size_t>(m, 1);
}

std::vector<std::size_t> oracle_smallest(const std::vector<double>& losses, std::size_t m) {
  std::vector<std::pair<double, std::size_t>> pairs;
  for (std::size_t i = 0; i < losses.size(); ++i) pairs.emplace_back(losses[i], i);
  std::sort(pairs.begin(), pairs.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m; ++i) out.push_back(pairs[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> random_losses(Rng& rng, std::size_t n, bool ties) {
  std::vector<double> l(n);
  for (double& x : l) x = ties ? static_cast<double>(rng.uniform_index(6)) : rng.uniform(0.0, 5.0);
  return l;
}

void selection_oracles(Outcome& out) {
  Rng rng(404);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(1024);
    const double keep = trial % 10 == 0 ? 1.0 : rng.uniform(0.01, 1.0);
    const auto losses = random_losses(rng, n, trial % 2 == 0);
    const auto got = small_loss_select(losses, keep);
    out.expect(got == oracle_smallest(losses, oracle_count(keep, n)),
               "small_loss_select differs on instance " + std::to_string(trial));
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(2048);
    const double p = trial % 10 == 0 ? 1.0 : rng.uniform(0.01, 1.0);
    std::array<LossTable, 3> tables;
    std::set<std::size_t> expected;
    std::vector<std::uint8_t> bits(n, 0);
    for (int m = 0; m < 3; ++m) {
      tables[m].modality = kModalities[m];
      for (std::size_t i = 0; i < n; ++i) tables[m].sample_ids.push_back("s" + std::to_string(i));
      tables[m].losses = random_losses(rng, n, trial % 2 == 1);
      for (std::size_t i : oracle_smallest(tables[m].losses, oracle_count(p, n))) {
        expected.insert(i);
        bits[i] |= static_cast<std::uint8_t>(1u << m);
      }
    }
    const auto sel = select_clean(tables, p);
    out.expect(sel.clean_set == std::vector<std::size_t>(expected.begin(), expected.end()),
               "select_clean union differs on instance " + std::to_string(trial));
    out.expect(sel.membership == bits, "membership differs on instance " + std::to_string(trial));
  }
  if (out.pass) out.detail << "2 x 1000 instances match";
}

// ---------------------------------------------------------------- 5

double mean_nll(const GraphNet& net, const Batch& x, const std::vector<int>& labels) {
  const Matrix z = net.forward(x);
  double total = 0.0;
  for (std::size_t r = 0; r < z.rows; ++r) {
    double mx = z.at(r, 0);
    for (std::size_t c = 1; c < z.cols; ++c) mx = std::max(mx, z.at(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < z.cols; ++c) s += std::exp(z.at(r, c) - mx);
    total += mx + std::log(s) - z.at(r, labels[r]);
  }
  return total / static_cast<double>(z.rows);
}

void gradient_check(Outcome& out) {
  GraphNetConfig cfg;
  cfg.widths = {5, 6};
  cfg.temporal_kernel = 3;
  cfg.out_dim = 3;
  cfg.frames = 6;
  cfg.joints = 4;
  cfg.topology = "chain4";
  GraphNet net(cfg, 5);
  Rng rng(55);
  for (double& p : net.parameters()) p += 0.1 * rng.normal();  // lift biases off the ReLU kinks
  Batch x;
  x.layout = {3, 6, 4};
  x.channels = 3;
  x.values.resize(x.layout.rows() * 3);
  for (double& v : x.values) v = rng.uniform(-1.0, 1.0);
  const std::vector<int> labels{2, 0, 1};

  std::vector<double> grad(net.parameter_count(), 0.0);
  net.forward_backward(
      x,
      [&](const Matrix& z, Matrix& d) {
        for (std::size_t r = 0; r < z.rows; ++r) {
          double mx = z.at(r, 0), s = 0.0;
          for (std::size_t c = 1; c < z.cols; ++c) mx = std::max(mx, z.at(r, c));
          for (std::size_t c = 0; c < z.cols; ++c) s += std::exp(z.at(r, c) - mx);
          for (std::size_t c = 0; c < z.cols; ++c)
            d.at(r, c) = (std::exp(z.at(r, c) - mx) / s - (static_cast<int>(c) == labels[r] ? 1.0 : 0.0)) /
                         static_cast<double>(z.rows);
        }
      },
      grad);

  const std::vector<double> base(net.parameters().begin(), net.parameters().end());
  const double h = 1e-5;
  double worst = 0.0;
  for (int dir = 0; dir < 20; ++dir) {
    std::vector<double> u(base.size());
    double norm = 0.0;
    for (double& e : u) {
      e = rng.normal();
      norm += e * e;
    }
    for (double& e : u) e /= std::sqrt(norm);
    auto p = net.parameters();
    for (std::size_t i = 0; i < u.size(); ++i) p[i] = base[i] + h * u[i];
    const double plus = mean_nll(net, x, labels);
    for (std::size_t i = 0; i < u.size(); ++i) p[i] = base[i] - h * u[i];
    const double minus = mean_nll(net, x, labels);
    std::copy(base.begin(), base.end(), p.begin());
    const double numeric = (plus - minus) / (2 * h);
    const double analytic = std::inner_product(grad.begin(), grad.end(), u.begin(), 0.0);
    const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-12});
    worst = std::max(worst, rel);
  }
  out.expect(worst < 1e-4, "worst relative error " + fmt(worst, 8));
  if (out.pass) out.detail << "worst relative error " << worst << " over 20 directions";
}

// ---------------------------------------------------------------- 6

void fusion_algebra(Outcome& out) {
  SyntheticSpec spec;
  spec.class_count = 4;
  spec.samples_per_class = 250;
  spec.frames = 6;
  const Dataset data = make_synthetic_dataset(spec, 61);
  const auto topo = SkeletonTopology::toy9();
  std::vector<SkeletonSequence> centred;
  for (const auto& s : data.samples) centred.push_back(center_on_root(s, topo));
  GraphNetConfig cfg;
  cfg.widths = {4, 6};
  Rng rng(62);
  std::array<ModalityStream, 3> streams;
  std::array<std::unique_ptr<Classifier>, 3> experts;
  for (int m = 0; m < 3; ++m) {
    streams[m] = make_stream(kModalities[m], centred, topo);
    auto e = std::make_unique<ReferenceSTGCN>(make_backbone(cfg, streams[m], 4, 70 + m));
    for (double& p : e->parameters()) p += 0.3 * rng.normal();
    experts[m] = std::move(e);
  }
  GateNetwork gate(spec.frames, topo.joint_count(), "toy9", 80, {4});
  for (double& p : gate.net().parameters()) p += 0.5 * rng.normal();
  FusionModel model(std::move(experts), std::move(gate));

  // one-hot: a huge head bias saturates the gate softmax to exactly one expert
  const std::size_t head = model.gate.net().parameter_count() - 3;
  for (int chosen = 0; chosen < 3; ++chosen) {
    FusionModel hot(model);
    for (double& p : hot.gate.net().parameters()) p = 0.0;
    hot.gate.net().parameters()[head + chosen] = 1000.0;
    for (std::size_t i = 0; i < 50; ++i) {
      const auto pred = fuse(hot, data.samples[i], topo);
      out.expect(pred.fused == pred.expert_scores[chosen], "one-hot gate is not the lone expert");
    }
  }

  // 1000 samples through the trained-looking gate
  double worst = 0.0;
  for (const auto& s : data.samples) {
    const auto pred = fuse(model, s, topo);
    worst = std::max(worst, std::abs(std::accumulate(pred.fused.begin(), pred.fused.end(), 0.0) - 1.0));
  }
  out.expect(data.samples.size() == 1000, "expected 1000 cases");
  out.expect(worst <= 1e-6, "fused scores sum off by " + fmt(worst, 10));

  const std::array<double, 3> w{0.6, 0.6, 0.4};
  const Classifier* raw[3] = {model.experts[0].get(), model.experts[1].get(), model.experts[2].get()};
  for (const auto& s : data.samples) {
    const auto pred = fixed_weight_ensemble(raw, w, s, topo);
    int best = 0;
    for (std::size_t c = 0; c < pred.fused.size(); ++c) {
      double want = 0.6 * pred.expert_scores[0][c];
      want += 0.6 * pred.expert_scores[1][c];
      want += 0.4 * pred.expert_scores[2][c];
      out.expect(pred.fused[c] == want, "fixed-weight score differs from scalar arithmetic");
      if (want > pred.fused[best]) best = static_cast<int>(c);
    }
    out.expect(pred.predicted == best, "fixed-weight prediction is not the argmax");
  }
  if (out.pass) out.detail << "one-hot exact, max |sum S - 1| " << worst << ", (0.6, 0.6, 0.4) exact";
}

// ---------------------------------------------------------------- 7, 8

struct ToyRun {
  nlohmann::json accuracy;
  double precision = 0.0;
  std::string sha;
};

ToyRun toy_run(double r, std::uint64_t seed, const fs::path& dir) {
  ExperimentConfig c = toy_config();
  c.noise_ratio = r;
  c.seed = seed;
  c.output_dir = dir.string();
  fs::remove_all(dir);
  PipelineOptions opt;
  opt.resume = false;
  const RunResult run = run_pipeline(c, opt);
  ToyRun out;
  out.accuracy = run.report.at("accuracy");
  out.precision = run.report.at("stages").at("select").at("quality").at("union").at("precision");
  out.sha = run.report_sha256;
  std::printf("     toy r=%.1f seed %llu: plain %.3f, experts %.3f/%.3f/%.3f, ensemble %.3f, cm_moe %.3f, "
              "precision(D_c) %.3f\n",
              r, static_cast<unsigned long long>(seed), out.accuracy.at("plain").get<double>(),
              out.accuracy.at("expert_joint").get<double>(), out.accuracy.at("expert_bone").get<double>(),
              out.accuracy.at("expert_motion").get<double>(), out.accuracy.at("ensemble").get<double>(),
              out.accuracy.at("cm_moe").get<double>(), out.precision);
  std::fflush(stdout);
  return out;
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "skelnoise_acceptance";
  fs::create_directories(work);

  criterion(1, "bone/motion match naive loops", 10, modality_oracles);
  criterion(2, "noise injector counts, uniformity, determinism", 30, noise_injector);
  criterion(3, "keep-ratio schedule on the grid", 0, schedule);
  criterion(4, "selection oracles", 60, selection_oracles);
  criterion(5, "gradient check V=4 T=6 K=3", 0, gradient_check);
  criterion(6, "fusion algebra", 0, fusion_algebra);

  // Criterion 7 runs four toy pipelines; the seed-1 report is reused by 8.
  std::string first_sha;
  const auto t7 = Clock::now();
  std::vector<ToyRun> noisy;
  ToyRun clean;
  bool toy_ok = true;
  std::string toy_error;
  try {
    for (std::uint64_t seed : {1, 2, 3}) noisy.push_back(toy_run(0.4, seed, work / ("toy_r0.4_s" + std::to_string(seed))));
    clean = toy_run(0.0, 1, work / "toy_r0.0_s1");
    first_sha = noisy.front().sha;
  } catch (const std::exception& e) {
    toy_ok = false;
    toy_error = e.what();
  }
  const double toy_secs = std::chrono::duration<double>(Clock::now() - t7).count();
  const std::string budget = "toy runs took " + fmt(toy_secs, 0) + " s of 900";

  criterion(7, "toy (a) cross-trained expert beats plain by >= 5 points at r=0.4", 0, [&](Outcome& out) {
    if (!toy_ok) throw std::runtime_error(toy_error);
    double gap = 0.0;
    for (const auto& run : noisy)
      gap += run.accuracy.at("expert_joint").get<double>() - run.accuracy.at("plain").get<double>();
    gap = 100.0 * gap / static_cast<double>(noisy.size());
    out.expect(gap >= 5.0, "mean gap " + fmt(gap, 2) + " points");
    out.expect(toy_secs < 900.0, budget);
    if (out.pass) out.detail << "mean gap " << fmt(gap, 2) << " points over seeds 1-3, " << budget;
  });
  criterion(7, "toy (b) precision(D_c) > 1 - r", 0, [&](Outcome& out) {
    if (!toy_ok) throw std::runtime_error(toy_error);
    std::string seen;
    for (const auto& run : noisy) {
      out.expect(run.precision > 0.6, "precision " + fmt(run.precision));
      seen += (seen.empty() ? "" : ", ") + fmt(run.precision, 3);
    }
    if (out.pass) out.detail << "precision " << seen << " vs 0.6";
  });
  criterion(7, "toy (c) CM-MoE >= best single cross-trained expert", 0, [&](Outcome& out) {
    if (!toy_ok) throw std::runtime_error(toy_error);
    std::string seen;
    for (const auto& run : noisy) {
      double best = 0.0;
      for (const char* m : {"expert_joint", "expert_bone", "expert_motion"})
        best = std::max(best, run.accuracy.at(m).get<double>());
      const double fused = run.accuracy.at("cm_moe");
      out.expect(fused >= best, "cm_moe " + fmt(fused, 3) + " < best expert " + fmt(best, 3));
      seen += (seen.empty() ? "" : ", ") + fmt(fused, 3) + " vs " + fmt(best, 3);
    }
    if (out.pass) out.detail << seen;
  });
  criterion(7, "toy (d) r=0: CM-MoE within 2 points of plain", 0, [&](Outcome& out) {
    if (!toy_ok) throw std::runtime_error(toy_error);
    const double plain = clean.accuracy.at("plain"), fused = clean.accuracy.at("cm_moe");
    out.expect(std::abs(fused - plain) <= 0.02, "cm_moe " + fmt(fused, 3) + " vs plain " + fmt(plain, 3));
    if (out.pass) out.detail << "cm_moe " << fmt(fused, 3) << ", plain " << fmt(plain, 3);
  });

  criterion(8, "identical configs give identical RunReport hashes", 0, [&](Outcome& out) {
    if (!toy_ok) throw std::runtime_error(toy_error);
    const ToyRun again = toy_run(0.4, 1, work / "toy_r0.4_s1_again");
    out.expect(again.sha == first_sha, again.sha + " != " + first_sha);
    if (out.pass) out.detail << "sha256 " << first_sha;
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
