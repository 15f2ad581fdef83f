#include "contraspeech/encoder.hpp"

namespace contraspeech {

void EncoderSpec::validate() const {
  require(!filters.empty(), ErrorKind::Config, "encoder needs at least one layer");
  require(filters.size() == kernels.size() && kernels.size() == strides.size(), ErrorKind::Config,
          "encoder filters/kernels/strides lists differ in length");
  for (std::size_t i = 0; i < filters.size(); ++i) {
    require(filters[i] > 0 && kernels[i] > 0 && strides[i] > 0, ErrorKind::Config, "encoder sizes must be positive");
    require(filters[i] % groups == 0, ErrorKind::Config,
            "encoder layer " + std::to_string(i) + " has " + std::to_string(filters[i]) +
                " filters, not divisible into " + std::to_string(groups) + " groups");
  }
}

std::size_t EncoderSpec::total_stride() const {
  std::size_t s = 1;
  for (std::size_t v : strides) s *= v;
  return s;
}

std::size_t EncoderSpec::output_length(std::size_t samples) const {
  std::size_t length = samples;
  for (std::size_t i = 0; i < kernels.size(); ++i) length = conv1d_output_length(length, kernels[i], strides[i]);
  return length;
}

std::size_t EncoderSpec::minimum_input_length() const {
  std::size_t length = 1;
  for (std::size_t i = kernels.size(); i-- > 0;) length = (length - 1) * strides[i] + kernels[i];
  return length;
}

std::size_t EncoderSpec::activation_elements(std::size_t samples) const {
  std::size_t length = samples, total = 0;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    length = conv1d_output_length(length, kernels[i], strides[i]);
    total += filters[i] * length;
  }
  return total;
}

EncoderSpec EncoderSpec::with_constant_width(std::size_t width) const {
  EncoderSpec s = *this;
  std::fill(s.filters.begin(), s.filters.end(), width);
  return s;
}

EncoderSpec full_encoder_spec() {
  EncoderSpec s;
  s.filters = {64, 128, 192, 256, 512, 512};
  s.kernels = {10, 8, 4, 4, 4, 1};
  s.strides = {5, 4, 2, 2, 2, 1};
  s.groups = 32;
  return s;
}

EncoderSpec desk_encoder_spec() {
  EncoderSpec s = full_encoder_spec();
  s.filters = {16, 32, 48, 64, 128, 128};
  s.groups = 16;
  return s;
}

Encoder::Encoder(const EncoderSpec& spec, Rng& rng) : spec_(spec) {
  spec.validate();
  std::size_t in = 1;
  for (std::size_t i = 0; i < spec.filters.size(); ++i) {
    convs_.emplace_back(in, spec.filters[i], spec.kernels[i], spec.strides[i], rng);
    norms_.emplace_back(spec.groups, spec.filters[i]);
    in = spec.filters[i];
  }
}

Tensor Encoder::forward(const Tensor& waveform) const {
  const std::size_t samples = waveform.numel();
  require(samples >= spec_.minimum_input_length(), ErrorKind::InputTooShort,
          "waveform of " + std::to_string(samples) + " samples is shorter than the encoder minimum " +
              std::to_string(spec_.minimum_input_length()));
  Tensor h = reshape(waveform, {1, samples});
  for (std::size_t i = 0; i < convs_.size(); ++i) h = relu_clipped(norms_[i].forward(convs_[i].forward(h)), spec_.relu_cap);
  return transpose(h);
}

void Encoder::collect(ParameterSet& set, const std::string& prefix) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect(set, prefix + ".conv" + std::to_string(i));
    norms_[i].collect(set, prefix + ".norm" + std::to_string(i));
  }
}

}  // namespace contraspeech
