#include "skelnoise/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include "skelnoise/error.hpp"
#include "skelnoise/json_io.hpp"
#include "skelnoise/hash.hpp"
#include "skelnoise/rng.hpp"

namespace skelnoise {

using nlohmann::json;
namespace fs = std::filesystem;

SKELNOISE_JSON_DEFINE(GraphNetConfig, in_channels, widths,
                                                temporal_kernel, out_dim, frames, joints,
                                                topology, zero_init_head)

// ---------------------------------------------------------------- batches

Batch make_batch(std::span<const Tensor3f* const> items, int frames, int joints, int channels) {
  Batch b;
  if (!items.empty()) {
    frames = items.front()->frames();
    joints = items.front()->joints();
    channels = items.front()->channels();
  }
  b.layout = {static_cast<int>(items.size()), frames, joints};
  b.channels = channels;
  b.values.resize(b.layout.rows() * static_cast<std::size_t>(channels));
  const std::size_t per = b.layout.rows_per_sample() * static_cast<std::size_t>(channels);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Tensor3f& t = *items[i];
    if (t.frames() != frames || t.joints() != joints || t.channels() != channels)
      fail(ErrorKind::Dimension, "batch items must share one (T, V, C) shape");
    std::copy(t.data().begin(), t.data().end(), b.values.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return b;
}

Batch make_batch(std::span<const ModalityTensor> pool, std::span<const std::size_t> indices) {
  std::vector<const Tensor3f*> items;
  items.reserve(indices.size());
  for (std::size_t i : indices) items.push_back(&pool[i].data);
  if (items.empty() && !pool.empty())
    return make_batch(items, pool.front().data.frames(), pool.front().data.joints(),
                      pool.front().data.channels());
  return make_batch(items);
}

Batch make_concat_batch(std::span<const ModalityTensor> joint, std::span<const ModalityTensor> bone,
                        std::span<const ModalityTensor> motion, std::span<const std::size_t> indices) {
  if (joint.size() != bone.size() || joint.size() != motion.size())
    fail(ErrorKind::Dimension, "modality streams differ in length");
  Batch b;
  if (joint.empty()) return b;
  const Tensor3f& ref = joint.front().data;
  const int T = ref.frames(), V = ref.joints(), C = ref.channels();
  b.layout = {static_cast<int>(indices.size()), T, V};
  b.channels = 3 * C;
  b.values.resize(b.layout.rows() * static_cast<std::size_t>(b.channels));
  std::size_t row = 0;
  for (std::size_t idx : indices) {
    const Tensor3f* parts[3] = {&joint[idx].data, &bone[idx].data, &motion[idx].data};
    for (const Tensor3f* p : parts)
      if (p->frames() != T || p->joints() != V || p->channels() != C)
        fail(ErrorKind::Dimension, "modalities must share (T, V, C) for concatenation");
    for (int t = 0; t < T; ++t)
      for (int v = 0; v < V; ++v, ++row) {
        double* dst = b.values.data() + row * b.channels;
        for (int m = 0; m < 3; ++m)
          for (int c = 0; c < C; ++c) dst[m * C + c] = parts[m]->at(t, v, c);
      }
  }
  return b;
}

// ---------------------------------------------------------------- GraphNet

struct GraphNet::Tape {
  std::vector<double> input;
  struct BlockTape {
    std::vector<double> mixed, spatial, temporal;
  };
  std::vector<BlockTape> blocks;
  std::vector<double> pooled;
};

GraphNet::GraphNet(GraphNetConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
  const GraphNetConfig& c = config_;
  if (c.out_dim < 1 || c.in_channels < 1 || c.widths.empty() || c.frames < 1)
    fail(ErrorKind::InvalidArgument, "graph net needs positive in/out dims, frames and at least one block");
  if (c.temporal_kernel < 1 || c.temporal_kernel % 2 == 0)
    fail(ErrorKind::InvalidArgument, "temporal kernel must be odd and positive");
  for (int w : c.widths)
    if (w < 1) fail(ErrorKind::InvalidArgument, "block widths must be positive");
  const SkeletonTopology topo = SkeletonTopology::by_name(c.topology);
  if (c.joints != topo.joint_count())
    fail(ErrorKind::Dimension, "config joints do not match topology " + c.topology);
  adjacency_ = topo.normalized_adjacency();

  std::size_t offset = 0;
  auto take = [&offset](std::size_t n) {
    Slot s{offset, n};
    offset += n;
    return s;
  };
  int in_ch = c.in_channels;
  for (int out_ch : c.widths) {
    Block b;
    b.in_ch = in_ch;
    b.out_ch = out_ch;
    b.graph_w = take(static_cast<std::size_t>(in_ch) * out_ch);
    b.graph_b = take(out_ch);
    b.temporal_w = take(static_cast<std::size_t>(c.temporal_kernel) * out_ch * out_ch);
    b.temporal_b = take(out_ch);
    blocks_.push_back(b);
    in_ch = out_ch;
  }
  head_w_ = take(static_cast<std::size_t>(in_ch) * c.out_dim);
  head_b_ = take(c.out_dim);
  params_.assign(offset, 0.0);

  // He-normal for ReLU layers, LeCun-normal for the head; biases zero.
  Rng rng(derive_seed(seed, "graphnet-init"));
  auto fill = [&](Slot s, double fan_in, double gain) {
    const double sd = std::sqrt(gain / fan_in);
    for (std::size_t i = 0; i < s.size; ++i) params_[s.offset + i] = sd * rng.normal();
  };
  for (const Block& b : blocks_) {
    fill(b.graph_w, b.in_ch, 2.0);
    fill(b.temporal_w, static_cast<double>(c.temporal_kernel) * b.out_ch, 2.0);
  }
  if (!c.zero_init_head) fill(head_w_, in_ch, 1.0);

  norm_mean_.assign(c.in_channels, 0.0);
  norm_inv_std_.assign(c.in_channels, 1.0);
}

void GraphNet::fit_input_normalization(const Batch& data) {
  check_input(data);
  const std::size_t rows = data.layout.rows();
  const int C = config_.in_channels;
  if (rows == 0) return;
  std::vector<double> mean(C, 0.0), sq(C, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (int c = 0; c < C; ++c) mean[c] += data.values[r * C + c];
  for (double& m : mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (int c = 0; c < C; ++c) {
      const double d = data.values[r * C + c] - mean[c];
      sq[c] += d * d;
    }
  std::vector<double> inv(C);
  for (int c = 0; c < C; ++c) inv[c] = 1.0 / std::max(std::sqrt(sq[c] / static_cast<double>(rows)), 1e-6);
  set_input_normalization(std::move(mean), std::move(inv));
}

void GraphNet::set_input_normalization(std::vector<double> mean, std::vector<double> inv_std) {
  if (mean.size() != static_cast<std::size_t>(config_.in_channels) || inv_std.size() != mean.size())
    fail(ErrorKind::Dimension, "normalisation vectors must have in_channels entries");
  norm_mean_ = std::move(mean);
  norm_inv_std_ = std::move(inv_std);
}

void GraphNet::check_input(const Batch& x) const {
  if (x.channels != config_.in_channels || (x.layout.batch > 0 && (x.layout.frames != config_.frames ||
                                                                   x.layout.joints != config_.joints)))
    fail(ErrorKind::Dimension,
         "batch shape (T=" + std::to_string(x.layout.frames) + ", V=" + std::to_string(x.layout.joints) +
             ", C=" + std::to_string(x.channels) + ") does not match model (T=" + std::to_string(config_.frames) +
             ", V=" + std::to_string(config_.joints) + ", C=" + std::to_string(config_.in_channels) + ")");
  if (x.values.size() != x.layout.rows() * static_cast<std::size_t>(x.channels))
    fail(ErrorKind::Dimension, "batch buffer size does not match its layout");
}

std::vector<double> GraphNet::normalized_input(const Batch& x) const {
  std::vector<double> out(x.values.size());
  const int C = x.channels;
  const std::size_t rows = x.layout.rows();
  for (std::size_t r = 0; r < rows; ++r)
    for (int c = 0; c < C; ++c) out[r * C + c] = (x.values[r * C + c] - norm_mean_[c]) * norm_inv_std_[c];
  return out;
}

Matrix GraphNet::run(const Batch& x, Tape* tape) const {
  check_input(x);
  kernels::Layout layout = x.layout;
  layout.frames = config_.frames;
  layout.joints = config_.joints;
  const std::size_t rows = layout.rows();
  const int K = config_.temporal_kernel;

  std::vector<double> cur = normalized_input(x);
  if (tape) {
    tape->input = cur;
    tape->blocks.resize(blocks_.size());
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    std::vector<double> mixed(rows * b.in_ch);
    kernels_.graph_mix(layout, b.in_ch, adjacency_, cur, mixed);
    std::vector<double> spatial(rows * b.out_ch);
    kernels_.dense_forward(rows, b.in_ch, b.out_ch, mixed, slot(b.graph_w), slot(b.graph_b), spatial);
    kernels_.relu_forward(spatial);
    std::vector<double> temporal(rows * b.out_ch);
    kernels_.temporal_forward(layout, K, b.out_ch, b.out_ch, spatial, slot(b.temporal_w),
                              slot(b.temporal_b), temporal);
    kernels_.relu_forward(temporal);
    if (tape) {
      tape->blocks[i].mixed = std::move(mixed);
      tape->blocks[i].spatial = std::move(spatial);
      tape->blocks[i].temporal = temporal;
    }
    cur = std::move(temporal);
  }
  const int last = blocks_.back().out_ch;
  std::vector<double> pooled(static_cast<std::size_t>(layout.batch) * last);
  kernels_.mean_pool_forward(layout, last, cur, pooled);
  Matrix out(static_cast<std::size_t>(layout.batch), static_cast<std::size_t>(config_.out_dim));
  kernels_.dense_forward(out.rows, last, config_.out_dim, pooled, slot(head_w_), slot(head_b_), out.values);
  if (tape) tape->pooled = std::move(pooled);
  return out;
}

Matrix GraphNet::forward(const Batch& x) const { return run(x, nullptr); }

Matrix GraphNet::forward_backward(const Batch& x, const OutputGradientFn& loss, std::span<double> grad) const {
  if (grad.size() != params_.size()) fail(ErrorKind::Dimension, "gradient buffer has wrong size");
  Tape tape;
  Matrix out = run(x, &tape);
  Matrix d_out(out.rows, out.cols);
  loss(out, d_out);

  kernels::Layout layout = x.layout;
  layout.frames = config_.frames;
  layout.joints = config_.joints;
  const std::size_t rows = layout.rows();
  const int K = config_.temporal_kernel;
  auto g = [&grad](Slot s) { return grad.subspan(s.offset, s.size); };

  const int last = blocks_.back().out_ch;
  std::vector<double> d_pooled(static_cast<std::size_t>(layout.batch) * last);
  kernels_.dense_backward_params(out.rows, last, config_.out_dim, tape.pooled, d_out.values, g(head_w_), g(head_b_));
  kernels_.dense_backward_input(out.rows, last, config_.out_dim, d_out.values, slot(head_w_), d_pooled);
  std::vector<double> d_cur(rows * last);
  kernels_.mean_pool_backward(layout, last, d_pooled, d_cur);

  for (std::size_t i = blocks_.size(); i-- > 0;) {
    const Block& b = blocks_[i];
    const Tape::BlockTape& bt = tape.blocks[i];
    kernels_.relu_backward(bt.temporal, d_cur);
    kernels_.temporal_backward_params(layout, K, b.out_ch, b.out_ch, bt.spatial, d_cur, g(b.temporal_w),
                                      g(b.temporal_b));
    std::vector<double> d_spatial(rows * b.out_ch);
    kernels_.temporal_backward_input(layout, K, b.out_ch, b.out_ch, d_cur, slot(b.temporal_w), d_spatial);
    kernels_.relu_backward(bt.spatial, d_spatial);
    kernels_.dense_backward_params(rows, b.in_ch, b.out_ch, bt.mixed, d_spatial, g(b.graph_w), g(b.graph_b));
    if (i == 0) break;
    std::vector<double> d_mixed(rows * b.in_ch);
    kernels_.dense_backward_input(rows, b.in_ch, b.out_ch, d_spatial, slot(b.graph_w), d_mixed);
    // The normalised adjacency is symmetric, so its transpose is itself.
    d_cur.assign(rows * b.in_ch, 0.0);
    kernels_.graph_mix(layout, b.in_ch, adjacency_, d_mixed, d_cur);
  }
  return out;
}

// ---------------------------------------------------------------- classifiers

ReferenceSTGCN::ReferenceSTGCN(GraphNetConfig config, std::uint64_t seed) : net_(std::move(config), seed) {}
ReferenceSTGCN::ReferenceSTGCN(GraphNet net) : net_(std::move(net)) {}

json ReferenceSTGCN::describe() const {
  return {{"type", "reference_stgcn"},
          {"architecture", net_.config()},
          {"seed", net_.seed()},
          {"parameter_count", net_.parameter_count()}};
}

std::unique_ptr<Classifier> ReferenceSTGCN::clone() const { return std::make_unique<ReferenceSTGCN>(*this); }

GateNetwork::GateNetwork(int frames, int joints, std::string topology, std::uint64_t seed, std::vector<int> widths,
                         int temporal_kernel)
    : net_(GraphNetConfig{3 * kCoordinates, std::move(widths), temporal_kernel, kExperts, frames, joints,
                          std::move(topology), true},
           seed) {}

GateNetwork::GateNetwork(GraphNet net) : net_(std::move(net)) {
  if (net_.config().out_dim != kExperts) fail(ErrorKind::InvalidArgument, "gate network must emit 3 outputs");
}

Matrix GateNetwork::weights(const Batch& concat) const { return softmax_rows(net_.forward(concat)); }

std::array<double, 3> gate_forward(const GateNetwork& gate, const ModalityTensor& joint, const ModalityTensor& bone,
                                   const ModalityTensor& motion) {
  if (!joint.data.same_shape(bone.data) || !joint.data.same_shape(motion.data))
    fail(ErrorKind::Dimension, "joint, bone and motion tensors must share (T, V, C)");
  const std::size_t only = 0;
  const Matrix w = gate.weights(make_concat_batch({&joint, 1}, {&bone, 1}, {&motion, 1}, {&only, 1}));
  return {w.at(0, 0), w.at(0, 1), w.at(0, 2)};
}

// ---------------------------------------------------------------- losses

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto in = logits.row(r);
    auto out = p.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) sum += out[c] = std::exp(in[c] - mx);
    for (double& v : out) v /= sum;
  }
  return p;
}

std::vector<double> cross_entropy_rows(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows) fail(ErrorKind::Dimension, "one label per row required");
  std::vector<double> out(logits.rows);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols)
      fail(ErrorKind::InvalidLabel, "label " + std::to_string(y) + " outside [0, " + std::to_string(logits.cols) + ")");
    const auto in = logits.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (double v : in) sum += std::exp(v - mx);
    const double l = mx + std::log(sum) - in[y];
    out[r] = l < 0.0 ? 0.0 : l;  // NaN must survive the clamp
  }
  return out;
}

std::vector<double> per_sample_loss(const Classifier& model, const Batch& x, std::span<const int> labels) {
  for (int y : labels)
    if (y < 0 || y >= model.class_count())
      fail(ErrorKind::InvalidLabel, "label " + std::to_string(y) + " outside [0, " +
                                        std::to_string(model.class_count()) + ")");
  return cross_entropy_rows(model.forward(x), labels);
}

double mean_loss_gradient(const Classifier& model, const Batch& x, std::span<const int> labels,
                          std::span<const std::size_t> subset, std::span<double> grad) {
  if (subset.empty()) fail(ErrorKind::EmptyBatch, "gradient over an empty selection");
  if (labels.size() != static_cast<std::size_t>(x.size())) fail(ErrorKind::Dimension, "one label per sample required");
  double loss = 0.0;
  model.forward_backward(
      x,
      [&](const Matrix& logits, Matrix& d) {
        const Matrix p = softmax_rows(logits);
        const double scale = 1.0 / static_cast<double>(subset.size());
        for (std::size_t r : subset) {
          const int y = labels[r];
          if (y < 0 || static_cast<std::size_t>(y) >= logits.cols) fail(ErrorKind::InvalidLabel, "label out of range");
          loss += -std::log(std::max(p.at(r, y), std::numeric_limits<double>::min()));
          for (std::size_t c = 0; c < logits.cols; ++c) d.at(r, c) = scale * (p.at(r, c) - (static_cast<int>(c) == y));
        }
        loss *= scale;
      },
      grad);
  return loss;
}

void SgdMomentum::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size()) fail(ErrorKind::Dimension, "parameter/gradient size mismatch");
  if (velocity_.size() != params.size()) velocity_.assign(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double d = grad[i] + weight_decay_ * params[i];
    velocity_[i] = momentum_ * velocity_[i] + d;
    params[i] -= lr_ * velocity_[i];
  }
}

// ---------------------------------------------------------------- checkpoints

namespace {

std::vector<unsigned char> blob_bytes(std::span<const double> params) {
  std::vector<unsigned char> bytes(params.size() * 8);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(params[i]);
    for (int k = 0; k < 8; ++k) bytes[i * 8 + k] = static_cast<unsigned char>(bits >> (8 * k));
  }
  return bytes;
}

fs::path with_suffix(const fs::path& stem, const char* suffix) {
  fs::path p = stem;
  p += suffix;
  return p;
}

}  // namespace

std::string parameter_hash(const GraphNet& net) { return sha256_hex(blob_bytes(net.parameters())); }

void save_checkpoint(const GraphNet& net, const CheckpointMeta& meta, const fs::path& stem) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  const auto bytes = blob_bytes(net.parameters());
  const fs::path blob = with_suffix(stem, ".bin");
  {
    std::ofstream out(blob, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + blob.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  json header{{"format", "skelnoise-checkpoint"},
              {"version", 1},
              {"architecture", net.config()},
              {"seed", net.seed()},
              {"role", meta.role},
              {"modality", meta.modality},
              {"mode", meta.mode},
              {"epoch", meta.epoch},
              {"parameter_count", net.parameter_count()},
              {"input_mean", std::vector<double>(net.input_mean().begin(), net.input_mean().end())},
              {"input_inv_std", std::vector<double>(net.input_inv_std().begin(), net.input_inv_std().end())},
              {"blob", blob.filename().string()},
              {"blob_sha256", sha256_hex(bytes)},
              {"extra", meta.extra}};
  std::ofstream out(with_suffix(stem, ".json"), std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write checkpoint header for " + stem.string());
  out << header.dump(2) << '\n';
}

GraphNet load_checkpoint(const fs::path& stem, CheckpointMeta* meta) {
  std::ifstream in(with_suffix(stem, ".json"));
  if (!in) fail(ErrorKind::Io, "missing checkpoint header " + with_suffix(stem, ".json").string());
  json header;
  try {
    header = json::parse(in);
    GraphNet net(header.at("architecture").get<GraphNetConfig>(), header.at("seed").get<std::uint64_t>());
    net.set_input_normalization(header.at("input_mean").get<std::vector<double>>(),
                                header.at("input_inv_std").get<std::vector<double>>());
    const fs::path blob = stem.parent_path() / header.at("blob").get<std::string>();
    std::ifstream bin(blob, std::ios::binary);
    if (!bin) fail(ErrorKind::Io, "missing checkpoint blob " + blob.string());
    std::vector<unsigned char> bytes(net.parameter_count() * 8);
    if (!bin.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())) ||
        bin.peek() != std::char_traits<char>::eof())
      fail(ErrorKind::Format, blob.string() + ": blob size does not match architecture");
    if (sha256_hex(bytes) != header.at("blob_sha256").get<std::string>())
      fail(ErrorKind::CorruptModel, blob.string() + ": hash mismatch");
    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::uint64_t bits = 0;
      for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[i * 8 + k]) << (8 * k);
      params[i] = std::bit_cast<double>(bits);
    }
    if (meta) {
      meta->role = header.value("role", std::string{});
      meta->modality = header.value("modality", std::string{});
      meta->mode = header.value("mode", std::string{"eval"});
      meta->epoch = header.value("epoch", 0);
      meta->extra = header.value("extra", json::object());
    }
    return net;
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, stem.string() + ": malformed checkpoint header: " + e.what());
  }
}

}  // namespace skelnoise
