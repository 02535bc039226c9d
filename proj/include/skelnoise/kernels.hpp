#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Inner loops of the graph network. Activations are row-major matrices with
// one row per (sample, frame, joint) and one column per channel:
// row = (b * frames + t) * joints + v.
//
// `serial` is the reference implementation; `omp` splits the same loops over
// OpenMP threads. Every output element is accumulated in the same order in
// both, so results are bitwise identical for any thread count.

namespace skelnoise::kernels {

struct Layout {
  int batch = 0;
  int frames = 0;
  int joints = 0;

  std::size_t rows() const noexcept {
    return static_cast<std::size_t>(batch) * static_cast<std::size_t>(frames) *
           static_cast<std::size_t>(joints);
  }
  std::size_t rows_per_sample() const noexcept {
    return static_cast<std::size_t>(frames) * static_cast<std::size_t>(joints);
  }
};

enum class Backend { Serial, OpenMP };

std::string_view to_string(Backend b) noexcept;
Backend backend_from_string(std::string_view name);

/// Backend picked up by newly constructed Dispatch objects.
Backend default_backend() noexcept;
void set_default_backend(Backend b) noexcept;

#define SKELNOISE_KERNEL_DECLS                                                                    \
  /* out[b,t,v,:] = sum_u adj[v,u] * in[b,t,u,:]  (adj symmetric, V x V) */                    \
  void graph_mix(Layout layout, int channels, std::span<const double> adj,                       \
                 std::span<const double> in, std::span<double> out);                             \
  /* out = in * weight + bias; weight is (in_ch x out_ch) */                                     \
  void dense_forward(std::size_t rows, int in_ch, int out_ch, std::span<const double> in,       \
                     std::span<const double> weight, std::span<const double> bias,              \
                     std::span<double> out);                                                     \
  /* d_in = d_out * weight^T (overwrites d_in) */                                                \
  void dense_backward_input(std::size_t rows, int in_ch, int out_ch,                             \
                            std::span<const double> d_out, std::span<const double> weight,       \
                            std::span<double> d_in);                                             \
  /* d_weight += in^T * d_out; d_bias += column sums of d_out */                                 \
  void dense_backward_params(std::size_t rows, int in_ch, int out_ch, std::span<const double> in, \
                             std::span<const double> d_out, std::span<double> d_weight,          \
                             std::span<double> d_bias);                                          \
  /* Temporal convolution, odd kernel, zero padding, stride 1.                                  \
     weight is (kernel x in_ch x out_ch). */                                                     \
  void temporal_forward(Layout layout, int kernel, int in_ch, int out_ch,                        \
                        std::span<const double> in, std::span<const double> weight,              \
                        std::span<const double> bias, std::span<double> out);                    \
  void temporal_backward_input(Layout layout, int kernel, int in_ch, int out_ch,                 \
                               std::span<const double> d_out, std::span<const double> weight,    \
                               std::span<double> d_in);                                          \
  void temporal_backward_params(Layout layout, int kernel, int in_ch, int out_ch,                \
                                std::span<const double> in, std::span<const double> d_out,       \
                                std::span<double> d_weight, std::span<double> d_bias);           \
  void relu_forward(std::span<double> values);                                                   \
  /* zeroes grad where the forward output was not positive */                                    \
  void relu_backward(std::span<const double> forward_out, std::span<double> grad);               \
  /* pooled[b, c] = mean over the frames * joints rows of sample b */                            \
  void mean_pool_forward(Layout layout, int channels, std::span<const double> in,                \
                         std::span<double> pooled);                                              \
  void mean_pool_backward(Layout layout, int channels, std::span<const double> d_pooled,         \
                          std::span<double> d_in);

namespace serial {
SKELNOISE_KERNEL_DECLS
}  // namespace serial

namespace omp {
SKELNOISE_KERNEL_DECLS
}  // namespace omp

#undef SKELNOISE_KERNEL_DECLS

/// Runtime dispatch over the two implementations.
struct Dispatch {
  Backend backend = default_backend();

  void graph_mix(Layout l, int ch, std::span<const double> adj, std::span<const double> in,
                 std::span<double> out) const;
  void dense_forward(std::size_t rows, int in_ch, int out_ch, std::span<const double> in,
                     std::span<const double> w, std::span<const double> b,
                     std::span<double> out) const;
  void dense_backward_input(std::size_t rows, int in_ch, int out_ch, std::span<const double> d_out,
                            std::span<const double> w, std::span<double> d_in) const;
  void dense_backward_params(std::size_t rows, int in_ch, int out_ch, std::span<const double> in,
                             std::span<const double> d_out, std::span<double> d_w,
                             std::span<double> d_b) const;
  void temporal_forward(Layout l, int k, int in_ch, int out_ch, std::span<const double> in,
                        std::span<const double> w, std::span<const double> b,
                        std::span<double> out) const;
  void temporal_backward_input(Layout l, int k, int in_ch, int out_ch,
                               std::span<const double> d_out, std::span<const double> w,
                               std::span<double> d_in) const;
  void temporal_backward_params(Layout l, int k, int in_ch, int out_ch, std::span<const double> in,
                                std::span<const double> d_out, std::span<double> d_w,
                                std::span<double> d_b) const;
  void relu_forward(std::span<double> v) const;
  void relu_backward(std::span<const double> fwd, std::span<double> g) const;
  void mean_pool_forward(Layout l, int ch, std::span<const double> in,
                         std::span<double> pooled) const;
  void mean_pool_backward(Layout l, int ch, std::span<const double> d_pooled,
                          std::span<double> d_in) const;
};

}  // namespace skelnoise::kernels
