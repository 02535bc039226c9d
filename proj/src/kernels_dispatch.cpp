#include "skelnoise/error.hpp"
#include "skelnoise/kernels.hpp"

#include <atomic>
#include <string>

namespace skelnoise::kernels {

std::string_view to_string(Backend b) noexcept {
  return b == Backend::Serial ? "serial" : "openmp";
}

Backend backend_from_string(std::string_view name) {
  if (name == "serial") return Backend::Serial;
  if (name == "openmp" || name == "omp") return Backend::OpenMP;
  fail(ErrorKind::InvalidArgument, "unknown kernel backend '" + std::string(name) + "'");
}

namespace {
std::atomic<Backend> g_default{Backend::OpenMP};
}

Backend default_backend() noexcept { return g_default.load(std::memory_order_relaxed); }
void set_default_backend(Backend b) noexcept { g_default.store(b, std::memory_order_relaxed); }

#define SKELNOISE_DISPATCH(fn, ...)                        \
  if (backend == Backend::Serial) serial::fn(__VA_ARGS__); \
  else omp::fn(__VA_ARGS__)

void Dispatch::graph_mix(Layout l, int ch, std::span<const double> adj, std::span<const double> in,
                         std::span<double> out) const {
  SKELNOISE_DISPATCH(graph_mix, l, ch, adj, in, out);
}
void Dispatch::dense_forward(std::size_t rows, int in_ch, int out_ch, std::span<const double> in,
                             std::span<const double> w, std::span<const double> b,
                             std::span<double> out) const {
  SKELNOISE_DISPATCH(dense_forward, rows, in_ch, out_ch, in, w, b, out);
}
void Dispatch::dense_backward_input(std::size_t rows, int in_ch, int out_ch,
                                    std::span<const double> d_out, std::span<const double> w,
                                    std::span<double> d_in) const {
  SKELNOISE_DISPATCH(dense_backward_input, rows, in_ch, out_ch, d_out, w, d_in);
}
void Dispatch::dense_backward_params(std::size_t rows, int in_ch, int out_ch,
                                     std::span<const double> in, std::span<const double> d_out,
                                     std::span<double> d_w, std::span<double> d_b) const {
  SKELNOISE_DISPATCH(dense_backward_params, rows, in_ch, out_ch, in, d_out, d_w, d_b);
}
void Dispatch::temporal_forward(Layout l, int k, int in_ch, int out_ch, std::span<const double> in,
                                std::span<const double> w, std::span<const double> b,
                                std::span<double> out) const {
  SKELNOISE_DISPATCH(temporal_forward, l, k, in_ch, out_ch, in, w, b, out);
}
void Dispatch::temporal_backward_input(Layout l, int k, int in_ch, int out_ch,
                                       std::span<const double> d_out, std::span<const double> w,
                                       std::span<double> d_in) const {
  SKELNOISE_DISPATCH(temporal_backward_input, l, k, in_ch, out_ch, d_out, w, d_in);
}
void Dispatch::temporal_backward_params(Layout l, int k, int in_ch, int out_ch,
                                        std::span<const double> in, std::span<const double> d_out,
                                        std::span<double> d_w, std::span<double> d_b) const {
  SKELNOISE_DISPATCH(temporal_backward_params, l, k, in_ch, out_ch, in, d_out, d_w, d_b);
}
void Dispatch::relu_forward(std::span<double> v) const { SKELNOISE_DISPATCH(relu_forward, v); }
void Dispatch::relu_backward(std::span<const double> fwd, std::span<double> g) const {
  SKELNOISE_DISPATCH(relu_backward, fwd, g);
}
void Dispatch::mean_pool_forward(Layout l, int ch, std::span<const double> in,
                                 std::span<double> pooled) const {
  SKELNOISE_DISPATCH(mean_pool_forward, l, ch, in, pooled);
}
void Dispatch::mean_pool_backward(Layout l, int ch, std::span<const double> d_pooled,
                                  std::span<double> d_in) const {
  SKELNOISE_DISPATCH(mean_pool_backward, l, ch, d_pooled, d_in);
}

#undef SKELNOISE_DISPATCH

}  // namespace skelnoise::kernels
