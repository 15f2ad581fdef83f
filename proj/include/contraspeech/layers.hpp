#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "contraspeech/ops.hpp"
#include "contraspeech/rng.hpp"
#include "contraspeech/tensor.hpp"

namespace contraspeech {

/// Ordered name -> parameter registry. Order is registration order, which
/// is also the order the optimizer and checkpoint writer walk.
class ParameterSet {
 public:
  void add(std::string name, Tensor t);
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<Tensor> tensors() const;
  Tensor find(const std::string& name) const;
  std::size_t element_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// ---------------------------------------------------------------------------
// Functional primitives (each is one tape node with a hand-written rule).

/// Valid cross-correlation of input [C x L] with weight [O x C x K] after
/// symmetric zero padding. L_out = floor((L + 2p - K) / stride) + 1.
Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding = 0);

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t padding = 0);

/// Group normalization of [C x L]: statistics per group over the group's
/// channels and all time steps, then per-channel affine.
Tensor group_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, std::size_t groups,
                  float epsilon = 1e-5f);

/// Forward LSTM recurrence over input [U x D_in] from zero state. Gate
/// layout in the 4H dimension is (input, forget, cell, output).
Tensor lstm(const Tensor& input, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias);

/// Fixed sinusoidal position table [U x D].
Tensor sinusoidal_positions(std::size_t length, std::size_t width);

// ---------------------------------------------------------------------------
// Layers

struct Conv1dLayer {
  std::size_t in_channels = 0, out_channels = 0, kernel_size = 0, stride = 1, padding = 0;
  Tensor weight;  // out x in x kernel
  Tensor bias;    // out

  Conv1dLayer() = default;
  Conv1dLayer(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng,
              std::size_t padding = 0);
  Tensor forward(const Tensor& input) const;
  std::size_t output_length(std::size_t length) const {
    return conv1d_output_length(length, kernel_size, stride, padding);
  }
  void collect(ParameterSet& set, const std::string& prefix) const;
};

struct GroupNormLayer {
  std::size_t num_groups = 1, channels = 0;
  float epsilon = 1e-5f;
  Tensor gamma, beta;

  GroupNormLayer() = default;
  GroupNormLayer(std::size_t groups, std::size_t channels);
  Tensor forward(const Tensor& input) const;
  void collect(ParameterSet& set, const std::string& prefix) const;
};

enum class Direction { Forward, Backward };

struct LstmLayer {
  std::size_t input_size = 0, hidden_size = 0;
  Direction direction = Direction::Forward;
  Tensor w_ih;  // 4H x D_in
  Tensor w_hh;  // 4H x H
  Tensor bias;  // 4H, forget slice starts at 1

  LstmLayer() = default;
  LstmLayer(std::size_t input, std::size_t hidden, Direction direction, Rng& rng);
  /// [U x D_in] -> [U x H]. The backward direction reverses time, runs the
  /// forward recurrence, and reverses the result.
  Tensor forward(const Tensor& input) const;
  void collect(ParameterSet& set, const std::string& prefix) const;
  static std::size_t parameter_count(std::size_t input, std::size_t hidden) {
    return 4 * hidden * (input + hidden + 1);
  }
};

/// Stacked unidirectional LSTM layers without residual connections.
struct LstmStack {
  std::vector<LstmLayer> layers;

  LstmStack() = default;
  LstmStack(std::size_t input, std::size_t hidden, std::size_t num_layers, Direction direction, Rng& rng);
  Tensor forward(const Tensor& input) const;
  std::size_t output_size() const { return layers.empty() ? 0 : layers.back().hidden_size; }
  void collect(ParameterSet& set, const std::string& prefix) const;
  static std::size_t parameter_count(std::size_t input, std::size_t hidden, std::size_t num_layers);
};

/// y = x W + b with W [in x out].
struct Linear {
  Tensor weight, bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  Tensor forward(const Tensor& input) const;
  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }
  void collect(ParameterSet& set, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gamma, beta;
  float epsilon = 1e-5f;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);
  Tensor forward(const Tensor& input) const;
  void collect(ParameterSet& set, const std::string& prefix) const;
};

/// Post-norm transformer block: multi-head self-attention over the whole
/// sequence, residual, layer norm, ReLU feed-forward, residual, layer norm.
struct SelfAttentionBlock {
  std::size_t width = 0, heads = 1;
  Linear query, key, value, output, ff_in, ff_out;
  LayerNorm norm1, norm2;

  SelfAttentionBlock() = default;
  SelfAttentionBlock(std::size_t width, std::size_t heads, std::size_t ff_width, Rng& rng);
  /// When `weights` is given it receives one [U x U] row-stochastic matrix per head.
  Tensor forward(const Tensor& input, std::vector<Tensor>* weights = nullptr) const;
  void collect(ParameterSet& set, const std::string& prefix) const;
};

struct SelfAttentionStack {
  std::vector<SelfAttentionBlock> blocks;
  bool positional_encoding = true;

  SelfAttentionStack() = default;
  SelfAttentionStack(std::size_t width, std::size_t heads, std::size_t ff_width, std::size_t num_blocks, Rng& rng);
  Tensor forward(const Tensor& input) const;
  void collect(ParameterSet& set, const std::string& prefix) const;
};

}  // namespace contraspeech
