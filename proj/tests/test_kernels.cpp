#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <vector>

#include "skelnoise/kernels.hpp"
#include "test_util.hpp"

using namespace skelnoise;
using namespace skelnoise::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::size_t row(Layout l, int b, int t, int v) {
  return (static_cast<std::size_t>(b) * l.frames + t) * l.joints + v;
}

// Naive oracles written directly from the index formulas.
std::vector<double> naive_temporal(Layout l, int K, int ci, int co, const std::vector<double>& in,
                                   const std::vector<double>& w, const std::vector<double>& bias) {
  std::vector<double> out(l.rows() * co);
  for (int b = 0; b < l.batch; ++b)
    for (int t = 0; t < l.frames; ++t)
      for (int v = 0; v < l.joints; ++v)
        for (int o = 0; o < co; ++o) {
          double s = bias[o];
          for (int k = 0; k < K; ++k) {
            const int ts = t + k - K / 2;
            if (ts < 0 || ts >= l.frames) continue;
            for (int i = 0; i < ci; ++i) s += in[row(l, b, ts, v) * ci + i] * w[(k * ci + i) * co + o];
          }
          out[row(l, b, t, v) * co + o] = s;
        }
  return out;
}

struct Shapes {
  Layout layout;
  int in_ch;
  int out_ch;
  int kernel;
};

Shapes random_shapes(Rng& rng) {
  Shapes s;
  s.layout = {1 + static_cast<int>(rng.uniform_index(4)), 1 + static_cast<int>(rng.uniform_index(7)),
              1 + static_cast<int>(rng.uniform_index(6))};
  s.in_ch = 1 + static_cast<int>(rng.uniform_index(9));
  s.out_ch = 1 + static_cast<int>(rng.uniform_index(9));
  s.kernel = 1 + 2 * static_cast<int>(rng.uniform_index(3));
  return s;
}

}  // namespace

TEST_CASE("dense and temporal forward match naive loops") {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const Shapes s = random_shapes(rng);
    const std::size_t rows = s.layout.rows();
    auto x = random_vec(rng, rows * s.in_ch);
    auto w = random_vec(rng, static_cast<std::size_t>(s.in_ch) * s.out_ch);
    auto b = random_vec(rng, s.out_ch);
    std::vector<double> y(rows * s.out_ch);
    serial::dense_forward(rows, s.in_ch, s.out_ch, x, w, b, y);
    for (std::size_t n = 0; n < rows; ++n)
      for (int o = 0; o < s.out_ch; ++o) {
        double ref = b[o];
        for (int i = 0; i < s.in_ch; ++i) ref += x[n * s.in_ch + i] * w[i * s.out_ch + o];
        CHECK(y[n * s.out_ch + o] == doctest::Approx(ref).epsilon(1e-12));
      }

    auto wt = random_vec(rng, static_cast<std::size_t>(s.kernel) * s.in_ch * s.out_ch);
    std::vector<double> yt(rows * s.out_ch);
    serial::temporal_forward(s.layout, s.kernel, s.in_ch, s.out_ch, x, wt, b, yt);
    const auto ref = naive_temporal(s.layout, s.kernel, s.in_ch, s.out_ch, x, wt, b);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(yt[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward kernels are adjoint to the forward maps") {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const Shapes s = random_shapes(rng);
    const std::size_t rows = s.layout.rows();
    auto x = random_vec(rng, rows * s.in_ch);
    auto g = random_vec(rng, rows * s.out_ch);
    const std::vector<double> zero_bias(s.out_ch, 0.0);

    // <A x, g> == <x, A^T g> for the linear part of each layer
    auto w = random_vec(rng, static_cast<std::size_t>(s.in_ch) * s.out_ch);
    std::vector<double> y(rows * s.out_ch), dx(rows * s.in_ch, 7.0);
    serial::dense_forward(rows, s.in_ch, s.out_ch, x, w, zero_bias, y);
    serial::dense_backward_input(rows, s.in_ch, s.out_ch, g, w, dx);
    CHECK(dot(y, g) == doctest::Approx(dot(x, dx)).epsilon(1e-10));

    auto wt = random_vec(rng, static_cast<std::size_t>(s.kernel) * s.in_ch * s.out_ch);
    serial::temporal_forward(s.layout, s.kernel, s.in_ch, s.out_ch, x, wt, zero_bias, y);
    serial::temporal_backward_input(s.layout, s.kernel, s.in_ch, s.out_ch, g, wt, dx);
    CHECK(dot(y, g) == doctest::Approx(dot(x, dx)).epsilon(1e-10));

    // The output is linear in the weights too: <y(w), g> == <w, dW>
    std::vector<double> dw(wt.size(), 0.0), db(s.out_ch, 0.0);
    serial::temporal_backward_params(s.layout, s.kernel, s.in_ch, s.out_ch, x, g, dw, db);
    CHECK(dot(y, g) == doctest::Approx(dot(wt, dw)).epsilon(1e-10));
    for (int o = 0; o < s.out_ch; ++o) {
      double col = 0.0;
      for (std::size_t n = 0; n < rows; ++n) col += g[n * s.out_ch + o];
      CHECK(db[o] == doctest::Approx(col).epsilon(1e-12));
    }

    std::vector<double> dwd(w.size(), 0.0), dbd(s.out_ch, 0.0);
    serial::dense_forward(rows, s.in_ch, s.out_ch, x, w, zero_bias, y);
    serial::dense_backward_params(rows, s.in_ch, s.out_ch, x, g, dwd, dbd);
    CHECK(dot(y, g) == doctest::Approx(dot(w, dwd)).epsilon(1e-10));
  }
}

TEST_CASE("graph mix and pooling adjoints") {
  Rng rng(3);
  const Layout l{3, 4, 5};
  const int C = 6;
  std::vector<double> adj(25, 0.0);
  for (int v = 0; v < 5; ++v)
    for (int u = v; u < 5; ++u) adj[v * 5 + u] = adj[u * 5 + v] = (u == v || u == v + 1) ? rng.uniform(0.1, 1.0) : 0.0;
  auto x = random_vec(rng, l.rows() * C);
  auto g = random_vec(rng, l.rows() * C);
  std::vector<double> y(x.size()), dx(x.size());
  serial::graph_mix(l, C, adj, x, y);
  serial::graph_mix(l, C, adj, g, dx);
  CHECK(dot(y, g) == doctest::Approx(dot(x, dx)).epsilon(1e-12));

  std::vector<double> pooled(3 * C), gp = random_vec(rng, 3 * C), back(x.size());
  serial::mean_pool_forward(l, C, x, pooled);
  serial::mean_pool_backward(l, C, gp, back);
  CHECK(dot(pooled, gp) == doctest::Approx(dot(x, back)).epsilon(1e-12));
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int r = 0; r < 20; ++r) s += x[(20 + r) * C + c];
    CHECK(pooled[C + c] == doctest::Approx(s / 20.0).epsilon(1e-12));
  }
}

TEST_CASE("relu forward and backward") {
  std::vector<double> v{-1.0, 0.0, 2.5, -0.0, 3.0};
  serial::relu_forward(v);
  CHECK(v == std::vector<double>{0.0, 0.0, 2.5, 0.0, 3.0});
  std::vector<double> g{1.0, 1.0, 1.0, 1.0, 1.0};
  serial::relu_backward(v, g);
  CHECK(g == std::vector<double>{0.0, 0.0, 1.0, 0.0, 1.0});
}

TEST_CASE("openmp kernels are bitwise equal to serial kernels") {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(4);
  Rng rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    const Shapes s = random_shapes(rng);
    const Layout l = s.layout;
    const std::size_t rows = l.rows();
    auto x = random_vec(rng, rows * s.in_ch);
    auto g = random_vec(rng, rows * s.out_ch);
    auto w = random_vec(rng, static_cast<std::size_t>(s.in_ch) * s.out_ch);
    auto wt = random_vec(rng, static_cast<std::size_t>(s.kernel) * s.in_ch * s.out_ch);
    auto b = random_vec(rng, s.out_ch);
    std::vector<double> adj = random_vec(rng, static_cast<std::size_t>(l.joints) * l.joints);

    auto both = [&](auto&& run) {
      auto a = run(true);
      auto c = run(false);
      CHECK(a == c);
    };
    both([&](bool ser) {
      std::vector<double> y(rows * s.in_ch);
      ser ? serial::graph_mix(l, s.in_ch, adj, x, y) : omp::graph_mix(l, s.in_ch, adj, x, y);
      return y;
    });
    both([&](bool ser) {
      std::vector<double> y(rows * s.out_ch);
      ser ? serial::dense_forward(rows, s.in_ch, s.out_ch, x, w, b, y)
          : omp::dense_forward(rows, s.in_ch, s.out_ch, x, w, b, y);
      return y;
    });
    both([&](bool ser) {
      std::vector<double> d(rows * s.in_ch);
      ser ? serial::dense_backward_input(rows, s.in_ch, s.out_ch, g, w, d)
          : omp::dense_backward_input(rows, s.in_ch, s.out_ch, g, w, d);
      return d;
    });
    both([&](bool ser) {
      std::vector<double> dw(w.size(), 0.5), db(s.out_ch, -0.5);
      ser ? serial::dense_backward_params(rows, s.in_ch, s.out_ch, x, g, dw, db)
          : omp::dense_backward_params(rows, s.in_ch, s.out_ch, x, g, dw, db);
      dw.insert(dw.end(), db.begin(), db.end());
      return dw;
    });
    both([&](bool ser) {
      std::vector<double> y(rows * s.out_ch);
      ser ? serial::temporal_forward(l, s.kernel, s.in_ch, s.out_ch, x, wt, b, y)
          : omp::temporal_forward(l, s.kernel, s.in_ch, s.out_ch, x, wt, b, y);
      return y;
    });
    both([&](bool ser) {
      std::vector<double> d(rows * s.in_ch);
      ser ? serial::temporal_backward_input(l, s.kernel, s.in_ch, s.out_ch, g, wt, d)
          : omp::temporal_backward_input(l, s.kernel, s.in_ch, s.out_ch, g, wt, d);
      return d;
    });
    both([&](bool ser) {
      std::vector<double> dw(wt.size(), 0.25), db(s.out_ch, 0.0);
      ser ? serial::temporal_backward_params(l, s.kernel, s.in_ch, s.out_ch, x, g, dw, db)
          : omp::temporal_backward_params(l, s.kernel, s.in_ch, s.out_ch, x, g, dw, db);
      dw.insert(dw.end(), db.begin(), db.end());
      return dw;
    });
    both([&](bool ser) {
      std::vector<double> p(static_cast<std::size_t>(l.batch) * s.in_ch), back(rows * s.in_ch);
      ser ? serial::mean_pool_forward(l, s.in_ch, x, p) : omp::mean_pool_forward(l, s.in_ch, x, p);
      ser ? serial::mean_pool_backward(l, s.in_ch, p, back) : omp::mean_pool_backward(l, s.in_ch, p, back);
      p.insert(p.end(), back.begin(), back.end());
      return p;
    });
    both([&](bool ser) {
      auto v = x;
      auto gg = x;
      for (double& e : gg) e += 0.1;
      ser ? serial::relu_forward(v) : omp::relu_forward(v);
      ser ? serial::relu_backward(v, gg) : omp::relu_backward(v, gg);
      v.insert(v.end(), gg.begin(), gg.end());
      return v;
    });
  }
  omp_set_num_threads(saved);
}

TEST_CASE("backend names round-trip") {
  CHECK(backend_from_string(to_string(Backend::Serial)) == Backend::Serial);
  CHECK(backend_from_string(to_string(Backend::OpenMP)) == Backend::OpenMP);
  CHECK(backend_from_string("omp") == Backend::OpenMP);
  CHECK_THROWS_AS_KIND(backend_from_string("cuda"), ErrorKind::InvalidArgument);
}
