// Serial vs OpenMP kernel timings. Also confirms both backends agree bit for bit.
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "skelnoise/kernels.hpp"
#include "skelnoise/model.hpp"
#include "skelnoise/rng.hpp"

using namespace skelnoise;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double best_ms(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = Clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
  }
  return best;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

int failures = 0;

void row(const char* name, double serial_ms, double omp_ms, bool equal) {
  std::printf("%-26s %10.3f %10.3f %8.2fx  %s\n", name, serial_ms, omp_ms, serial_ms / omp_ms,
              equal ? "identical" : "MISMATCH");
  if (!equal) ++failures;
}

}  // namespace

int main(int argc, char** argv) {
  const int batch = argc > 1 ? std::atoi(argv[1]) : 64;
  const int reps = argc > 2 ? std::atoi(argv[2]) : 5;
  const int T = 32, V = 25, C = 64, K = 9;
  Rng rng(7);
  const kernels::Layout layout{batch, T, V};
  const std::size_t rows = layout.rows();

  std::printf("batch %d, T=%d, V=%d, C=%d, %d OpenMP threads, best of %d\n", batch, T, V, C, omp_get_max_threads(),
              reps);
  std::printf("%-26s %10s %10s %9s\n", "kernel", "serial ms", "openmp ms", "speedup");

  const auto adj = random_vec(rng, V * V);
  const auto in = random_vec(rng, rows * C);
  const auto w = random_vec(rng, C * C);
  const auto tw = random_vec(rng, K * C * C);
  const auto b = random_vec(rng, C);
  const auto dout = random_vec(rng, rows * C);
  std::vector<double> s(rows * C), o(rows * C);

  {
    const double ts = best_ms(reps, [&] { kernels::serial::graph_mix(layout, C, adj, in, s); });
    const double to = best_ms(reps, [&] { kernels::omp::graph_mix(layout, C, adj, in, o); });
    row("graph_mix", ts, to, same_bits(s, o));
  }
  {
    const double ts = best_ms(reps, [&] { kernels::serial::dense_forward(rows, C, C, in, w, b, s); });
    const double to = best_ms(reps, [&] { kernels::omp::dense_forward(rows, C, C, in, w, b, o); });
    row("dense_forward", ts, to, same_bits(s, o));
  }
  {
    const double ts = best_ms(reps, [&] { kernels::serial::dense_backward_input(rows, C, C, dout, w, s); });
    const double to = best_ms(reps, [&] { kernels::omp::dense_backward_input(rows, C, C, dout, w, o); });
    row("dense_backward_input", ts, to, same_bits(s, o));
  }
  {
    std::vector<double> gw1(C * C), gb1(C), gw2(C * C), gb2(C);
    const double ts = best_ms(reps, [&] {
      std::fill(gw1.begin(), gw1.end(), 0.0);
      std::fill(gb1.begin(), gb1.end(), 0.0);
      kernels::serial::dense_backward_params(rows, C, C, in, dout, gw1, gb1);
    });
    const double to = best_ms(reps, [&] {
      std::fill(gw2.begin(), gw2.end(), 0.0);
      std::fill(gb2.begin(), gb2.end(), 0.0);
      kernels::omp::dense_backward_params(rows, C, C, in, dout, gw2, gb2);
    });
    row("dense_backward_params", ts, to, same_bits(gw1, gw2) && same_bits(gb1, gb2));
  }
  {
    const double ts = best_ms(reps, [&] { kernels::serial::temporal_forward(layout, K, C, C, in, tw, b, s); });
    const double to = best_ms(reps, [&] { kernels::omp::temporal_forward(layout, K, C, C, in, tw, b, o); });
    row("temporal_forward", ts, to, same_bits(s, o));
  }
  {
    const double ts = best_ms(reps, [&] { kernels::serial::temporal_backward_input(layout, K, C, C, dout, tw, s); });
    const double to = best_ms(reps, [&] { kernels::omp::temporal_backward_input(layout, K, C, C, dout, tw, o); });
    row("temporal_backward_input", ts, to, same_bits(s, o));
  }
  {
    std::vector<double> gw1(K * C * C), gb1(C), gw2(K * C * C), gb2(C);
    const double ts = best_ms(reps, [&] {
      std::fill(gw1.begin(), gw1.end(), 0.0);
      std::fill(gb1.begin(), gb1.end(), 0.0);
      kernels::serial::temporal_backward_params(layout, K, C, C, in, dout, gw1, gb1);
    });
    const double to = best_ms(reps, [&] {
      std::fill(gw2.begin(), gw2.end(), 0.0);
      std::fill(gb2.begin(), gb2.end(), 0.0);
      kernels::omp::temporal_backward_params(layout, K, C, C, in, dout, gw2, gb2);
    });
    row("temporal_backward_params", ts, to, same_bits(gw1, gw2) && same_bits(gb1, gb2));
  }

  // whole network, forward + backward
  GraphNetConfig cfg;
  cfg.widths = {32, 64, 64};
  cfg.temporal_kernel = 9;
  cfg.out_dim = 10;
  cfg.frames = T;
  cfg.joints = V;
  cfg.topology = "ntu25";
  GraphNet net(cfg, 3);
  Batch x;
  x.layout = layout;
  x.channels = 3;
  x.values = random_vec(rng, rows * 3);
  auto step = [&](kernels::Backend backend, std::vector<double>& grad) {
    net.set_backend(backend);
    std::fill(grad.begin(), grad.end(), 0.0);
    net.forward_backward(
        x, [](const Matrix& out, Matrix& d) { std::copy(out.values.begin(), out.values.end(), d.values.begin()); },
        grad);
  };
  std::vector<double> g1(net.parameter_count()), g2(net.parameter_count());
  const double ts = best_ms(reps, [&] { step(kernels::Backend::Serial, g1); });
  const double to = best_ms(reps, [&] { step(kernels::Backend::OpenMP, g2); });
  row("graphnet forward+backward", ts, to, same_bits(g1, g2));

  return failures == 0 ? 0 : 1;
}
