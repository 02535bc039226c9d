#include "skelnoise/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <vector>
#include <cstdint>

// Parameter-gradient kernels are split over the parameter rows rather than
// over samples so that each accumulator still sums rows in ascending order,
// the same order as the serial loops.

namespace skelnoise::kernels::omp {

namespace {

// Contiguous share of [0, count) for the calling thread.
std::pair<int, int> thread_range(int count) {
  const int threads = omp_get_num_threads();
  const int id = omp_get_thread_num();
  const int chunk = count / threads;
  const int extra = count % threads;
  const int begin = id * chunk + std::min(id, extra);
  return {begin, begin + chunk + (id < extra ? 1 : 0)};
}

// The slices take plain arguments so the compiler sees no aliasing between
// the accumulators and the loop bounds captured by the parallel region.
void dense_params_slice(std::size_t rows, int in_ch, int out_ch, const double* in, const double* d_out,
                        double* d_weight, int k0, int k1) {
  for (std::size_t n = 0; n < rows; ++n) {
    const double* x = in + n * in_ch;
    const double* g = d_out + n * out_ch;
    for (int k = k0; k < k1; ++k) {
      const double a = x[k];
      double* dw = d_weight + static_cast<std::size_t>(k) * out_ch;
      for (int j = 0; j < out_ch; ++j) dw[j] += a * g[j];
    }
  }
}

// rows r of the (kernel * in_ch) x out_ch gradient, r in [r0, r1)
void temporal_params_slice(Layout layout, int kernel, int in_ch, int out_ch, const double* in, const double* d_out,
                           double* d_weight, int r0, int r1) {
  const int half = kernel / 2;
  const std::size_t V = layout.joints;
  for (int k = r0 / in_ch; k < kernel && k * in_ch < r1; ++k) {
    const int i0 = std::max(r0 - k * in_ch, 0);
    const int i1 = std::min(r1 - k * in_ch, in_ch);
    double* wk = d_weight + static_cast<std::size_t>(k) * in_ch * out_ch;
    for (int b = 0; b < layout.batch; ++b) {
      for (int t = 0; t < layout.frames; ++t) {
        const int ts = t + k - half;
        if (ts < 0 || ts >= layout.frames) continue;
        for (std::size_t v = 0; v < V; ++v) {
          const std::size_t n = (static_cast<std::size_t>(b) * layout.frames + t) * V + v;
          const std::size_t ns = (static_cast<std::size_t>(b) * layout.frames + ts) * V + v;
          const double* x = in + ns * in_ch;
          const double* g = d_out + n * out_ch;
          for (int i = i0; i < i1; ++i) {
            const double a = x[i];
            double* dw = wk + static_cast<std::size_t>(i) * out_ch;
            for (int j = 0; j < out_ch; ++j) dw[j] += a * g[j];
          }
        }
      }
    }
  }
}

void bias_slice(std::size_t rows, int out_ch, const double* d_out, double* d_bias, int j0, int j1) {
  for (std::size_t n = 0; n < rows; ++n) {
    const double* g = d_out + n * out_ch;
    for (int j = j0; j < j1; ++j) d_bias[j] += g[j];
  }
}

std::vector<double> transpose(std::span<const double> w, int rows, int cols) {
  std::vector<double> t(w.size());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      t[static_cast<std::size_t>(c) * rows + r] = w[static_cast<std::size_t>(r) * cols + c];
  return t;
}

}  // namespace

void graph_mix(Layout layout, int channels, std::span<const double> adj,
               std::span<const double> in, std::span<double> out) {
  const int V = layout.joints;
  const auto groups = static_cast<std::int64_t>(layout.batch) * layout.frames;
#pragma omp parallel for schedule(static)
  for (std::int64_t g = 0; g < groups; ++g) {
    const double* src = in.data() + g * V * channels;
    double* dst = out.data() + g * V * channels;
    for (int v = 0; v < V; ++v) {
      double* row = dst + static_cast<std::size_t>(v) * channels;
      std::fill(row, row + channels, 0.0);
      for (int u = 0; u < V; ++u) {
        const double a = adj[static_cast<std::size_t>(v) * V + u];
        if (a == 0.0) continue;
        const double* s = src + static_cast<std::size_t>(u) * channels;
        for (int c = 0; c < channels; ++c) row[c] += a * s[c];
      }
    }
  }
}

void dense_forward(std::size_t rows, int in_ch, int out_ch, std::span<const double> in,
                   std::span<const double> weight, std::span<const double> bias,
                   std::span<double> out) {
  const auto n_rows = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < n_rows; ++n) {
    const double* x = in.data() + n * in_ch;
    double* y = out.data() + n * out_ch;
    std::copy(bias.begin(), bias.end(), y);
    for (int k = 0; k < in_ch; ++k) {
      const double a = x[k];
      const double* w = weight.data() + static_cast<std::size_t>(k) * out_ch;
      for (int j = 0; j < out_ch; ++j) y[j] += a * w[j];
    }
  }
}

void dense_backward_input(std::size_t rows, int in_ch, int out_ch, std::span<const double> d_out,
                          std::span<const double> weight, std::span<double> d_in) {
  const std::vector<double> wt = transpose(weight, in_ch, out_ch);
#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < static_cast<std::int64_t>(rows); ++n) {
    const double* g = d_out.data() + n * out_ch;
    double* dx = d_in.data() + n * in_ch;
    std::fill(dx, dx + in_ch, 0.0);
    for (int j = 0; j < out_ch; ++j) {
      const double a = g[j];
      const double* w = wt.data() + static_cast<std::size_t>(j) * in_ch;
      for (int k = 0; k < in_ch; ++k) dx[k] += a * w[k];
    }
  }
}

void dense_backward_params(std::size_t rows, int in_ch, int out_ch, std::span<const double> in,
                           std::span<const double> d_out, std::span<double> d_weight,
                           std::span<double> d_bias) {
#pragma omp parallel
  {
    const auto [k0, k1] = thread_range(in_ch);
    const auto [j0, j1] = thread_range(out_ch);
    dense_params_slice(rows, in_ch, out_ch, in.data(), d_out.data(), d_weight.data(), k0, k1);
    bias_slice(rows, out_ch, d_out.data(), d_bias.data(), j0, j1);
  }
}

void temporal_forward(Layout layout, int kernel, int in_ch, int out_ch, std::span<const double> in,
                      std::span<const double> weight, std::span<const double> bias,
                      std::span<double> out) {
  const int half = kernel / 2;
  const std::size_t V = layout.joints;
  const std::size_t tap = static_cast<std::size_t>(in_ch) * out_ch;
  const auto groups = static_cast<std::int64_t>(layout.batch) * layout.frames;
#pragma omp parallel for schedule(static)
  for (std::int64_t bt = 0; bt < groups; ++bt) {
    const std::int64_t b = bt / layout.frames;
    const int t = static_cast<int>(bt % layout.frames);
    for (std::size_t v = 0; v < V; ++v) {
      const std::size_t n = static_cast<std::size_t>(bt) * V + v;
      double* y = out.data() + n * out_ch;
      std::copy(bias.begin(), bias.end(), y);
      for (int k = 0; k < kernel; ++k) {
        const int ts = t + k - half;
        if (ts < 0 || ts >= layout.frames) continue;
        const std::size_t ns = (static_cast<std::size_t>(b) * layout.frames + ts) * V + v;
        const double* x = in.data() + ns * in_ch;
        const double* wk = weight.data() + k * tap;
        for (int i = 0; i < in_ch; ++i) {
          const double a = x[i];
          const double* w = wk + static_cast<std::size_t>(i) * out_ch;
          for (int j = 0; j < out_ch; ++j) y[j] += a * w[j];
        }
      }
    }
  }
}

void temporal_backward_input(Layout layout, int kernel, int in_ch, int out_ch,
                             std::span<const double> d_out, std::span<const double> weight,
                             std::span<double> d_in) {
  const int half = kernel / 2;
  const std::size_t V = layout.joints;
  const std::size_t tap = static_cast<std::size_t>(in_ch) * out_ch;
  std::vector<double> wt(weight.size());
  for (int k = 0; k < kernel; ++k)
    for (int i = 0; i < in_ch; ++i)
      for (int o = 0; o < out_ch; ++o)
        wt[k * tap + static_cast<std::size_t>(o) * in_ch + i] = weight[k * tap + static_cast<std::size_t>(i) * out_ch + o];
  const auto groups = static_cast<std::int64_t>(layout.batch) * layout.frames;
#pragma omp parallel for schedule(static)
  for (std::int64_t bt = 0; bt < groups; ++bt) {
    const std::int64_t b = bt / layout.frames;
    const int ts = static_cast<int>(bt % layout.frames);
    for (std::size_t v = 0; v < V; ++v) {
      const std::size_t ns = static_cast<std::size_t>(bt) * V + v;
      double* dx = d_in.data() + ns * in_ch;
      std::fill(dx, dx + in_ch, 0.0);
      for (int k = 0; k < kernel; ++k) {
        const int t = ts - k + half;
        if (t < 0 || t >= layout.frames) continue;
        const std::size_t n = (static_cast<std::size_t>(b) * layout.frames + t) * V + v;
        const double* g = d_out.data() + n * out_ch;
        const double* wk = wt.data() + k * tap;
        for (int j = 0; j < out_ch; ++j) {
          const double a = g[j];
          const double* w = wk + static_cast<std::size_t>(j) * in_ch;
          for (int i = 0; i < in_ch; ++i) dx[i] += a * w[i];
        }
      }
    }
  }
}

void temporal_backward_params(Layout layout, int kernel, int in_ch, int out_ch,
                              std::span<const double> in, std::span<const double> d_out,
                              std::span<double> d_weight, std::span<double> d_bias) {
#pragma omp parallel
  {
    const auto [r0, r1] = thread_range(kernel * in_ch);
    const auto [j0, j1] = thread_range(out_ch);
    temporal_params_slice(layout, kernel, in_ch, out_ch, in.data(), d_out.data(), d_weight.data(), r0, r1);
    bias_slice(layout.rows(), out_ch, d_out.data(), d_bias.data(), j0, j1);
  }
}

void relu_forward(std::span<double> values) {
  const auto n = static_cast<std::int64_t>(values.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) values[i] = values[i] > 0.0 ? values[i] : 0.0;
}

void relu_backward(std::span<const double> forward_out, std::span<double> grad) {
  const auto n = static_cast<std::int64_t>(grad.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    if (!(forward_out[i] > 0.0)) grad[i] = 0.0;
}

void mean_pool_forward(Layout layout, int channels, std::span<const double> in,
                       std::span<double> pooled) {
  const std::size_t per = layout.rows_per_sample();
  const double scale = 1.0 / static_cast<double>(per);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < layout.batch; ++b) {
    double* p = pooled.data() + static_cast<std::size_t>(b) * channels;
    std::fill(p, p + channels, 0.0);
    for (std::size_t r = 0; r < per; ++r) {
      const double* x = in.data() + (b * per + r) * channels;
      for (int c = 0; c < channels; ++c) p[c] += x[c];
    }
    for (int c = 0; c < channels; ++c) p[c] *= scale;
  }
}

void mean_pool_backward(Layout layout, int channels, std::span<const double> d_pooled,
                        std::span<double> d_in) {
  const std::size_t per = layout.rows_per_sample();
  const double scale = 1.0 / static_cast<double>(per);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < layout.batch; ++b) {
    const double* g = d_pooled.data() + static_cast<std::size_t>(b) * channels;
    for (std::size_t r = 0; r < per; ++r) {
      double* dx = d_in.data() + (b * per + r) * channels;
      for (int c = 0; c < channels; ++c) dx[c] = g[c] * scale;
    }
  }
}

}  // namespace skelnoise::kernels::omp
