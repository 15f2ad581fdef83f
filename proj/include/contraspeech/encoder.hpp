#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "contraspeech/layers.hpp"

namespace contraspeech {

/// Conv stack layout: one entry per layer.
struct EncoderSpec {
  std::vector<std::size_t> filters;
  std::vector<std::size_t> kernels;
  std::vector<std::size_t> strides;
  std::size_t groups = 32;
  float relu_cap = 5.0f;

  void validate() const;
  std::size_t total_stride() const;
  std::size_t output_length(std::size_t samples) const;
  /// Shortest waveform that yields one latent frame.
  std::size_t minimum_input_length() const;
  /// Sum over layers of channels x output length: the activations a
  /// training pass keeps alive.
  std::size_t activation_elements(std::size_t samples) const;
  /// Same layout with every layer widened/narrowed to `width` filters.
  EncoderSpec with_constant_width(std::size_t width) const;
};

/// Filters (64, 128, 192, 256, 512, 512), kernels (10, 8, 4, 4, 4, 1),
/// strides (5, 4, 2, 2, 2, 1), 32 groups.
EncoderSpec full_encoder_spec();
/// Same kernels and strides with filters (16, 32, 48, 64, 128, 128) and 16 groups.
EncoderSpec desk_encoder_spec();

/// Conv -> group norm -> clipped ReLU per layer. Maps a waveform [T] to
/// latents [U x D].
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderSpec& spec, Rng& rng);

  Tensor forward(const Tensor& waveform) const;
  const EncoderSpec& spec() const { return spec_; }
  std::size_t width() const { return spec_.filters.back(); }
  void collect(ParameterSet& set, const std::string& prefix) const;

 private:
  EncoderSpec spec_;
  std::vector<Conv1dLayer> convs_;
  std::vector<GroupNormLayer> norms_;
};

}  // namespace contraspeech
