#include "contraspeech/layers.hpp"

#include <cmath>

#include "op_support.hpp"

namespace contraspeech {

using detail::check_finite;
using detail::tracking;

void ParameterSet::add(std::string name, Tensor t) {
  for (const auto& [n, _] : items_)
    require(n != name, ErrorKind::Contract, "duplicate parameter name " + name);
  t.set_requires_grad(true);
  items_.emplace_back(std::move(name), std::move(t));
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& [_, t] : items_) out.push_back(t);
  return out;
}

Tensor ParameterSet::find(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  fail(ErrorKind::Contract, "no parameter named " + name);
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : items_) n += t.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

namespace {

Tensor uniform_tensor(Shape shape, float bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (float& v : t.data()) v = uniform(rng, -bound, bound);
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv1d

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t padding) {
  const std::size_t padded = length + 2 * padding;
  require(padded >= kernel, ErrorKind::InputTooShort,
          "input of length " + std::to_string(length) + " is shorter than kernel " + std::to_string(kernel));
  return (padded - kernel) / stride + 1;
}

Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  require(input.rank() == 2 && weight.rank() == 3, ErrorKind::Dimension, "conv1d expects [C x L] input and [O x C x K] weight");
  const std::size_t channels = input.rows(), length = input.cols();
  const std::size_t out_ch = weight.dim(0), kernel = weight.dim(2);
  require(weight.dim(1) == channels, ErrorKind::Dimension,
          "conv1d input has " + std::to_string(channels) + " channels, weight expects " + std::to_string(weight.dim(1)));
  require(bias.numel() == out_ch, ErrorKind::Dimension, "conv1d bias size mismatch");
  require(stride >= 1, ErrorKind::Config, "conv1d stride must be positive");
  const std::size_t out_len = conv1d_output_length(length, kernel, stride, padding);

  // im2col: row (c*K + k), column t holds x[c, t*stride + k - padding].
  const std::size_t patch = channels * kernel;
  RowMatrixXd cols = RowMatrixXd::Zero(patch, out_len);
  auto x = input.data();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t k = 0; k < kernel; ++k)
      for (std::size_t t = 0; t < out_len; ++t) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(padding);
        if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length)) cols(c * kernel + k, t) = x[c * length + pos];
      }
  const Eigen::Map<const RowMatrixXf> w(weight.data().data(), out_ch, patch);
  const RowMatrixXd wd = w.cast<double>();
  RowMatrixXd y = wd * cols;
  const auto b = bias.data();
  for (std::size_t o = 0; o < out_ch; ++o) y.row(o).array() += b[o];

  const bool track = tracking({&input, &weight, &bias});
  Tensor out = Tensor::zeros({out_ch, out_len}, track);
  out.matrix() = y.cast<float>();
  check_finite(out, "conv1d");
  if (track) {
    active_tape().record({input, weight, bias, out}, [=, cols = std::move(cols)]() mutable {
      const RowMatrixXd g = out.grad_matrix().cast<double>();
      if (weight.requires_grad()) {
        Eigen::Map<RowMatrixXf> gw(weight.ensure_grad().data(), out_ch, patch);
        gw += (g * cols.transpose()).cast<float>();
      }
      if (bias.requires_grad()) {
        auto gb = bias.ensure_grad();
        for (std::size_t o = 0; o < out_ch; ++o) gb[o] += static_cast<float>(g.row(o).sum());
      }
      if (input.requires_grad()) {
        const Eigen::Map<const RowMatrixXf> w(weight.data().data(), out_ch, patch);
        const RowMatrixXd dcols = w.cast<double>().transpose() * g;
        auto gx = input.ensure_grad();
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t k = 0; k < kernel; ++k)
            for (std::size_t t = 0; t < out_len; ++t) {
              const std::ptrdiff_t pos =
                  static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(padding);
              if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length))
                gx[c * length + pos] += static_cast<float>(dcols(c * kernel + k, t));
            }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// group_norm

Tensor group_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, std::size_t groups, float epsilon) {
  require(input.rank() == 2, ErrorKind::Dimension, "group_norm expects [C x L]");
  const std::size_t channels = input.rows(), length = input.cols();
  require(groups >= 1 && channels % groups == 0, ErrorKind::Dimension,
          std::to_string(channels) + " channels not divisible into " + std::to_string(groups) + " groups");
  require(gamma.numel() == channels && beta.numel() == channels, ErrorKind::Dimension,
          "group_norm affine size does not match channel count");
  const std::size_t per_group = channels / groups;
  const std::size_t count = per_group * length;

  const bool track = tracking({&input, &gamma, &beta});
  Tensor out = Tensor::zeros(input.shape(), track);
  std::vector<float> normalized(input.numel());
  std::vector<double> inv_std(groups);
  auto x = input.data();
  auto y = out.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t begin = g * per_group * length, end = begin + count;
    double mu = 0.0;
    for (std::size_t i = begin; i < end; ++i) mu += x[i];
    mu /= static_cast<double>(count);
    double var = 0.0;
    for (std::size_t i = begin; i < end; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= static_cast<double>(count);
    inv_std[g] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t c = i / length;
      normalized[i] = static_cast<float>((x[i] - mu) * inv_std[g]);
      y[i] = gm[c] * normalized[i] + bt[c];
    }
  }
  check_finite(out, "group_norm");
  if (track) {
    active_tape().record({input, gamma, beta, out}, [=, normalized = std::move(normalized),
                                                     inv_std = std::move(inv_std)]() mutable {
      auto dy = out.grad();
      auto gm = gamma.data();
      if (gamma.requires_grad() || beta.requires_grad()) {
        for (std::size_t c = 0; c < channels; ++c) {
          double dg = 0.0, db = 0.0;
          for (std::size_t t = 0; t < length; ++t) {
            dg += static_cast<double>(dy[c * length + t]) * normalized[c * length + t];
            db += dy[c * length + t];
          }
          if (gamma.requires_grad()) gamma.ensure_grad()[c] += static_cast<float>(dg);
          if (beta.requires_grad()) beta.ensure_grad()[c] += static_cast<float>(db);
        }
      }
      if (!input.requires_grad()) return;
      auto dx = input.ensure_grad();
      for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t begin = g * per_group * length, end = begin + count;
        double mean_d = 0.0, mean_dn = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
          const double d = static_cast<double>(dy[i]) * gm[i / length];
          mean_d += d;
          mean_dn += d * normalized[i];
        }
        mean_d /= static_cast<double>(count);
        mean_dn /= static_cast<double>(count);
        for (std::size_t i = begin; i < end; ++i) {
          const double d = static_cast<double>(dy[i]) * gm[i / length];
          dx[i] += static_cast<float>(inv_std[g] * (d - mean_d - normalized[i] * mean_dn));
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// lstm

Tensor lstm(const Tensor& input, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias) {
  require(input.rank() == 2, ErrorKind::Dimension, "lstm expects [U x D] input");
  const std::size_t steps = input.rows(), in = input.cols();
  const std::size_t hidden = w_hh.cols();
  require(w_hh.rank() == 2 && w_hh.rows() == 4 * hidden, ErrorKind::Dimension, "lstm w_hh must be [4H x H]");
  require(w_ih.rank() == 2 && w_ih.rows() == 4 * hidden && w_ih.cols() == in, ErrorKind::Dimension,
          "lstm w_ih must be [4H x D_in], got " + shape_string(w_ih.shape()) + " for input " + shape_string(input.shape()));
  require(bias.numel() == 4 * hidden, ErrorKind::Dimension, "lstm bias must have 4H entries");

  const RowMatrixXd x = input.matrix().cast<double>();
  const RowMatrixXd wih = w_ih.matrix().cast<double>();
  const RowMatrixXd whh = w_hh.matrix().cast<double>();
  const Eigen::RowVectorXd b = bias.matrix().cast<double>().row(0);

  const std::size_t H = hidden;
  RowMatrixXd gates(steps, 4 * H);  // post-activation i, f, g, o
  RowMatrixXd cell(steps, H), tanh_cell(steps, H), h(steps, H);
  RowMatrixXd pre = x * wih.transpose();
  pre.rowwise() += b;
  const RowMatrixXd whh_t = whh.transpose();
  Eigen::RowVectorXd h_prev = Eigen::RowVectorXd::Zero(H), c_prev = Eigen::RowVectorXd::Zero(H);
  for (std::size_t t = 0; t < steps; ++t) {
    Eigen::RowVectorXd a = pre.row(t) + h_prev * whh_t;
    for (std::size_t j = 0; j < H; ++j) {
      const double ig = 1.0 / (1.0 + std::exp(-a[j]));
      const double fg = 1.0 / (1.0 + std::exp(-a[H + j]));
      const double gg = std::tanh(a[2 * H + j]);
      const double og = 1.0 / (1.0 + std::exp(-a[3 * H + j]));
      const double c = fg * c_prev[j] + ig * gg;
      const double tc = std::tanh(c);
      gates(t, j) = ig;
      gates(t, H + j) = fg;
      gates(t, 2 * H + j) = gg;
      gates(t, 3 * H + j) = og;
      cell(t, j) = c;
      tanh_cell(t, j) = tc;
      h(t, j) = og * tc;
    }
    h_prev = h.row(t);
    c_prev = cell.row(t);
  }

  const bool track = tracking({&input, &w_ih, &w_hh, &bias});
  Tensor out = Tensor::zeros({steps, H}, track);
  out.matrix() = h.cast<float>();
  check_finite(out, "lstm");
  if (track) {
    active_tape().record({input, w_ih, w_hh, bias, out}, [=, gates = std::move(gates), cell = std::move(cell),
                                                          tanh_cell = std::move(tanh_cell),
                                                          h = std::move(h)]() mutable {
      const RowMatrixXd dh_out = out.grad_matrix().cast<double>();
      const RowMatrixXd whh = w_hh.matrix().cast<double>();
      RowMatrixXd da(steps, 4 * H);
      Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(H), dc_next = Eigen::RowVectorXd::Zero(H);
      for (std::size_t t = steps; t-- > 0;) {
        for (std::size_t j = 0; j < H; ++j) {
          const double ig = gates(t, j), fg = gates(t, H + j), gg = gates(t, 2 * H + j), og = gates(t, 3 * H + j);
          const double dh = dh_out(t, j) + dh_next[j];
          const double tc = tanh_cell(t, j);
          const double dc = dh * og * (1.0 - tc * tc) + dc_next[j];
          const double c_prev = t > 0 ? cell(t - 1, j) : 0.0;
          da(t, j) = dc * gg * ig * (1.0 - ig);
          da(t, H + j) = dc * c_prev * fg * (1.0 - fg);
          da(t, 2 * H + j) = dc * ig * (1.0 - gg * gg);
          da(t, 3 * H + j) = dh * tc * og * (1.0 - og);
          dc_next[j] = dc * fg;
        }
        dh_next = da.row(t) * whh;
      }
      if (w_hh.requires_grad() && steps > 1)
        w_hh.grad_matrix() += (da.bottomRows(steps - 1).transpose() * h.topRows(steps - 1)).cast<float>();
      if (w_ih.requires_grad()) w_ih.grad_matrix() += (da.transpose() * input.matrix().cast<double>()).cast<float>();
      if (bias.requires_grad()) {
        auto gb = bias.ensure_grad();
        const Eigen::RowVectorXd s = da.colwise().sum();
        for (std::size_t k = 0; k < 4 * H; ++k) gb[k] += static_cast<float>(s[k]);
      }
      if (input.requires_grad()) input.grad_matrix() += (da * w_ih.matrix().cast<double>()).cast<float>();
    });
  }
  return out;
}

Tensor sinusoidal_positions(std::size_t length, std::size_t width) {
  Tensor t = Tensor::zeros({length, width});
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      const double angle = static_cast<double>(pos) * freq;
      t[pos * width + i] = static_cast<float>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return t;
}

// ---------------------------------------------------------------------------
// Layer wrappers

Conv1dLayer::Conv1dLayer(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, Rng& rng,
                         std::size_t padding_)
    : in_channels(in), out_channels(out), kernel_size(kernel), stride(stride_), padding(padding_) {
  require(in > 0 && out > 0 && kernel > 0 && stride_ > 0, ErrorKind::Config, "conv1d sizes must be positive");
  const float bound = 1.0f / std::sqrt(static_cast<float>(in * kernel));
  weight = uniform_tensor({out, in, kernel}, bound, rng).set_requires_grad(true);
  bias = Tensor::zeros({out}, true);
}

Tensor Conv1dLayer::forward(const Tensor& input) const { return conv1d(input, weight, bias, stride, padding); }

void Conv1dLayer::collect(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + ".weight", weight);
  set.add(prefix + ".bias", bias);
}

GroupNormLayer::GroupNormLayer(std::size_t groups, std::size_t channels_) : num_groups(groups), channels(channels_) {
  require(groups >= 1 && channels_ % groups == 0, ErrorKind::Config,
          std::to_string(channels_) + " channels not divisible into " + std::to_string(groups) + " groups");
  gamma = Tensor::full({channels_}, 1.0f, true);
  beta = Tensor::zeros({channels_}, true);
}

Tensor GroupNormLayer::forward(const Tensor& input) const {
  require(input.rank() == 2 && input.rows() == channels, ErrorKind::Dimension,
          "group norm configured for " + std::to_string(channels) + " channels, got " + shape_string(input.shape()));
  return group_norm(input, gamma, beta, num_groups, epsilon);
}

void GroupNormLayer::collect(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + ".gamma", gamma);
  set.add(prefix + ".beta", beta);
}

LstmLayer::LstmLayer(std::size_t input, std::size_t hidden, Direction direction_, Rng& rng)
    : input_size(input), hidden_size(hidden), direction(direction_) {
  require(input > 0 && hidden > 0, ErrorKind::Config, "lstm sizes must be positive");
  const float bound = 1.0f / std::sqrt(static_cast<float>(hidden));
  w_ih = uniform_tensor({4 * hidden, input}, bound, rng).set_requires_grad(true);
  w_hh = uniform_tensor({4 * hidden, hidden}, bound, rng).set_requires_grad(true);
  bias = Tensor::zeros({4 * hidden}, true);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) bias[j] = 1.0f;
}

Tensor LstmLayer::forward(const Tensor& input) const {
  if (direction == Direction::Forward) return lstm(input, w_ih, w_hh, bias);
  return reverse_rows(lstm(reverse_rows(input), w_ih, w_hh, bias));
}

void LstmLayer::collect(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + ".w_ih", w_ih);
  set.add(prefix + ".w_hh", w_hh);
  set.add(prefix + ".bias", bias);
}

LstmStack::LstmStack(std::size_t input, std::size_t hidden, std::size_t num_layers, Direction direction, Rng& rng) {
  require(num_layers >= 1, ErrorKind::Config, "lstm stack needs at least one layer");
  for (std::size_t l = 0; l < num_layers; ++l) layers.emplace_back(l == 0 ? input : hidden, hidden, direction, rng);
}

Tensor LstmStack::forward(const Tensor& input) const {
  if (layers.empty()) return input;
  // Reversing once around the whole stack is equivalent to reversing per
  // layer and saves two gathers per layer.
  const Direction dir = layers.front().direction;
  Tensor h = dir == Direction::Backward ? reverse_rows(input) : input;
  for (const auto& layer : layers) h = lstm(h, layer.w_ih, layer.w_hh, layer.bias);
  return dir == Direction::Backward ? reverse_rows(h) : h;
}

void LstmStack::collect(ParameterSet& set, const std::string& prefix) const {
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(set, prefix + "." + std::to_string(l));
}

std::size_t LstmStack::parameter_count(std::size_t input, std::size_t hidden, std::size_t num_layers) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < num_layers; ++l) n += LstmLayer::parameter_count(l == 0 ? input : hidden, hidden);
  return n;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  require(in > 0 && out > 0, ErrorKind::Config, "linear sizes must be positive");
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  weight = uniform_tensor({in, out}, bound, rng).set_requires_grad(true);
  if (with_bias) bias = Tensor::zeros({out}, true);
  else bias = Tensor::zeros({0});
}

Tensor Linear::forward(const Tensor& input) const {
  Tensor y = matmul(input, weight);
  return bias.numel() ? add(y, bias) : y;
}

void Linear::collect(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + ".weight", weight);
  if (bias.numel()) set.add(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(std::size_t width) {
  gamma = Tensor::full({width}, 1.0f, true);
  beta = Tensor::zeros({width}, true);
}

Tensor LayerNorm::forward(const Tensor& input) const { return add(mul(layer_norm(input, epsilon), gamma), beta); }

void LayerNorm::collect(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + ".gamma", gamma);
  set.add(prefix + ".beta", beta);
}

SelfAttentionBlock::SelfAttentionBlock(std::size_t width_, std::size_t heads_, std::size_t ff_width, Rng& rng)
    : width(width_), heads(heads_) {
  require(heads_ >= 1 && width_ % heads_ == 0, ErrorKind::Config,
          "attention width " + std::to_string(width_) + " not divisible by " + std::to_string(heads_) + " heads");
  query = Linear(width_, width_, rng);
  key = Linear(width_, width_, rng);
  value = Linear(width_, width_, rng);
  output = Linear(width_, width_, rng);
  ff_in = Linear(width_, ff_width, rng);
  ff_out = Linear(ff_width, width_, rng);
  norm1 = LayerNorm(width_);
  norm2 = LayerNorm(width_);
}

Tensor SelfAttentionBlock::forward(const Tensor& input, std::vector<Tensor>* weights) const {
  require(input.rank() == 2 && input.cols() == width, ErrorKind::Dimension,
          "attention block expects width " + std::to_string(width) + ", got " + shape_string(input.shape()));
  const std::size_t head_width = width / heads;
  const Tensor q = query.forward(input), k = key.forward(input), v = value.forward(input);
  const float inv_scale = 1.0f / std::sqrt(static_cast<float>(head_width));
  // Per-head column selection as a matmul with a fixed 0/1 selector keeps
  // the whole block on existing primitives.
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Tensor selector = Tensor::zeros({width, head_width});
    for (std::size_t j = 0; j < head_width; ++j) selector[(hd * head_width + j) * head_width + j] = 1.0f;
    const Tensor qh = matmul(q, selector), kh = matmul(k, selector), vh = matmul(v, selector);
    const Tensor attn = softmax(scale(matmul(qh, transpose(kh)), inv_scale));
    if (weights) weights->push_back(attn);
    head_outputs.push_back(matmul(attn, vh));
  }
  const Tensor attended = output.forward(heads == 1 ? head_outputs.front() : concat_cols(head_outputs));
  const Tensor x1 = norm1.forward(add(input, attended));
  const Tensor ff = ff_out.forward(relu(ff_in.forward(x1)));
  return norm2.forward(add(x1, ff));
}

void SelfAttentionBlock::collect(ParameterSet& set, const std::string& prefix) const {
  query.collect(set, prefix + ".query");
  key.collect(set, prefix + ".key");
  value.collect(set, prefix + ".value");
  output.collect(set, prefix + ".output");
  ff_in.collect(set, prefix + ".ff_in");
  ff_out.collect(set, prefix + ".ff_out");
  norm1.collect(set, prefix + ".norm1");
  norm2.collect(set, prefix + ".norm2");
}

SelfAttentionStack::SelfAttentionStack(std::size_t width, std::size_t heads, std::size_t ff_width,
                                       std::size_t num_blocks, Rng& rng) {
  for (std::size_t b = 0; b < num_blocks; ++b) blocks.emplace_back(width, heads, ff_width, rng);
}

Tensor SelfAttentionStack::forward(const Tensor& input) const {
  Tensor h = input;
  if (positional_encoding) h = add(h, sinusoidal_positions(input.rows(), input.cols()));
  for (const auto& block : blocks) h = block.forward(h);
  return h;
}

void SelfAttentionStack::collect(ParameterSet& set, const std::string& prefix) const {
  for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(set, prefix + "." + std::to_string(b));
}

}  // namespace contraspeech
