#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skelnoise/kernels.hpp"
#include "skelnoise/skeleton.hpp"

namespace skelnoise {

/// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

/// Model input: `layout.batch` samples stacked as rows of (frame, joint).
struct Batch {
  kernels::Layout layout;
  int channels = 0;
  std::vector<double> values;

  int size() const noexcept { return layout.batch; }
};

/// Stacks tensors that share one (T, V, C) shape. An empty list gives an
/// empty batch with the given frame/joint/channel extents.
Batch make_batch(std::span<const Tensor3f* const> items, int frames = 0, int joints = 0, int channels = 0);
Batch make_batch(std::span<const ModalityTensor> pool, std::span<const std::size_t> indices);
/// Channel-wise concatenation joint || bone || motion -> (T, V, 3C) rows.
Batch make_concat_batch(std::span<const ModalityTensor> joint, std::span<const ModalityTensor> bone,
                        std::span<const ModalityTensor> motion, std::span<const std::size_t> indices);

/// Architecture of the spatio-temporal graph network. Each block is a
/// graph convolution (normalised adjacency, channel projection, ReLU)
/// followed by a temporal convolution (ReLU); a global average pool over
/// frames and joints feeds a linear head.
struct GraphNetConfig {
  int in_channels = kCoordinates;
  std::vector<int> widths{16, 16, 32, 32};
  int temporal_kernel = 3;
  int out_dim = 0;
  int frames = 0;
  int joints = 0;
  std::string topology = "toy9";
  bool zero_init_head = false;

  bool operator==(const GraphNetConfig&) const = default;
};

void to_json(nlohmann::json& j, const GraphNetConfig& c);
void from_json(const nlohmann::json& j, GraphNetConfig& c);

/// Receives the forward output and writes the gradient of the loss with
/// respect to it (same shape).
using OutputGradientFn = std::function<void(const Matrix& output, Matrix& d_output)>;

class GraphNet {
 public:
  GraphNet(GraphNetConfig config, std::uint64_t seed);

  const GraphNetConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  /// Fixed per-channel affine input normalisation (not trained).
  void fit_input_normalization(const Batch& data);
  void set_input_normalization(std::vector<double> mean, std::vector<double> inv_std);
  std::span<const double> input_mean() const noexcept { return norm_mean_; }
  std::span<const double> input_inv_std() const noexcept { return norm_inv_std_; }

  void set_backend(kernels::Backend b) noexcept { kernels_.backend = b; }
  kernels::Backend backend() const noexcept { return kernels_.backend; }

  Matrix forward(const Batch& x) const;
  /// Forward pass with tape, calls `loss` for d_output, then accumulates the
  /// parameter gradient into `grad` (size parameter_count()). Returns the output.
  Matrix forward_backward(const Batch& x, const OutputGradientFn& loss, std::span<double> grad) const;

 private:
  struct Slot {
    std::size_t offset = 0;
    std::size_t size = 0;
  };
  struct Block {
    int in_ch = 0;
    int out_ch = 0;
    Slot graph_w, graph_b, temporal_w, temporal_b;
  };
  struct Tape;

  void check_input(const Batch& x) const;
  std::vector<double> normalized_input(const Batch& x) const;
  Matrix run(const Batch& x, Tape* tape) const;
  std::span<const double> slot(Slot s) const { return {params_.data() + s.offset, s.size}; }

  GraphNetConfig config_;
  std::uint64_t seed_;
  std::vector<double> adjacency_;
  std::vector<Block> blocks_;
  Slot head_w_, head_b_;
  std::vector<double> params_;
  std::vector<double> norm_mean_;
  std::vector<double> norm_inv_std_;
  kernels::Dispatch kernels_;
};

/// Behaviour shared by every classifier the training stages can drive.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual int class_count() const = 0;
  /// Pre-softmax scores, (batch x K).
  virtual Matrix forward(const Batch& x) const = 0;
  virtual Matrix forward_backward(const Batch& x, const OutputGradientFn& loss,
                                  std::span<double> grad) const = 0;

  virtual std::span<double> parameters() = 0;
  virtual std::span<const double> parameters() const = 0;

  virtual bool training() const = 0;
  virtual void set_training(bool on) = 0;

  virtual nlohmann::json describe() const = 0;
  virtual std::unique_ptr<Classifier> clone() const = 0;
};

/// Small fixed-adjacency spatio-temporal GCN used as the backbone.
class ReferenceSTGCN final : public Classifier {
 public:
  ReferenceSTGCN(GraphNetConfig config, std::uint64_t seed);
  explicit ReferenceSTGCN(GraphNet net);

  int class_count() const override { return net_.config().out_dim; }
  Matrix forward(const Batch& x) const override { return net_.forward(x); }
  Matrix forward_backward(const Batch& x, const OutputGradientFn& loss,
                          std::span<double> grad) const override {
    return net_.forward_backward(x, loss, grad);
  }
  std::span<double> parameters() override { return net_.parameters(); }
  std::span<const double> parameters() const override { return net_.parameters(); }
  bool training() const override { return training_; }
  void set_training(bool on) override { training_ = on; }
  nlohmann::json describe() const override;
  std::unique_ptr<Classifier> clone() const override;

  GraphNet& net() noexcept { return net_; }
  const GraphNet& net() const noexcept { return net_; }

 private:
  GraphNet net_;
  bool training_ = false;
};

/// Maps the channel-concatenated joint/bone/motion input to one weight per
/// expert (softmax over 3 outputs).
class GateNetwork {
 public:
  static constexpr int kExperts = 3;

  /// `widths` defaults to two blocks; the head starts at zero so the
  /// initial weighting is uniform.
  GateNetwork(int frames, int joints, std::string topology, std::uint64_t seed,
              std::vector<int> widths = {16, 16}, int temporal_kernel = 3);
  explicit GateNetwork(GraphNet net);

  /// Raw gate logits (batch x 3).
  Matrix logits(const Batch& concat) const { return net_.forward(concat); }
  /// Softmax weights (batch x 3); each row lies in the open simplex.
  Matrix weights(const Batch& concat) const;

  GraphNet& net() noexcept { return net_; }
  const GraphNet& net() const noexcept { return net_; }
  bool training() const noexcept { return training_; }
  void set_training(bool on) noexcept { training_ = on; }

 private:
  GraphNet net_;
  bool training_ = false;
};

/// W = G(j || b || m) for a single sample.
std::array<double, 3> gate_forward(const GateNetwork& gate, const ModalityTensor& joint,
                                   const ModalityTensor& bone, const ModalityTensor& motion);

/// Row-wise softmax.
Matrix softmax_rows(const Matrix& logits);
/// Cross-entropy of softmax(logits_i) at labels[i], per row, no reduction.
std::vector<double> cross_entropy_rows(const Matrix& logits, std::span<const int> labels);

std::vector<double> per_sample_loss(const Classifier& model, const Batch& x, std::span<const int> labels);

/// Mean cross-entropy over the rows listed in `subset` (all rows when empty
/// subset is not allowed). Gradient is accumulated into `grad`.
double mean_loss_gradient(const Classifier& model, const Batch& x, std::span<const int> labels,
                          std::span<const std::size_t> subset, std::span<double> grad);

/// SGD with heavy-ball momentum and L2 weight decay:
///   d = g + wd * w;  v = mu * v + d;  w -= lr * v.
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum, double weight_decay)
      : lr_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::span<double> params, std::span<const double> grad);

  double learning_rate() const noexcept { return lr_; }
  void set_learning_rate(double lr) noexcept { lr_ = lr; }
  std::span<const double> velocity() const noexcept { return velocity_; }

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  std::vector<double> velocity_;
};

/// Checkpoint = `<stem>.json` header + `<stem>.bin` little-endian float64 blob.
struct CheckpointMeta {
  std::string role;  // e.g. "expert", "gate", "plain"
  std::string modality;
  std::string mode = "eval";
  int epoch = 0;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const GraphNet& net, const CheckpointMeta& meta, const std::filesystem::path& stem);
GraphNet load_checkpoint(const std::filesystem::path& stem, CheckpointMeta* meta = nullptr);
/// SHA-256 of the parameter blob bytes (hex).
std::string parameter_hash(const GraphNet& net);

}  // namespace skelnoise
