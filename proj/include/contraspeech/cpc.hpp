#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "contraspeech/encoder.hpp"
#include "contraspeech/layers.hpp"
#include "contraspeech/rng.hpp"

namespace contraspeech {

/// How many context networks sit on the shared encoder and which way they run.
enum class ContextMode {
  Unidirectional,  // one forward network
  Bidirectional,   // forward + backward, trained jointly
  ForwardPair,     // two independent forward networks (same parameter budget as Bidirectional)
};

std::string to_string(ContextMode mode);
ContextMode context_mode_from_string(const std::string& name);

struct CpcConfig {
  EncoderSpec encoder = desk_encoder_spec();
  std::size_t context_layers = 2;
  std::size_t context_units = 128;
  std::size_t offsets = 4;      // K
  std::size_t distractors = 4;  // |D|
  ContextMode mode = ContextMode::Unidirectional;
  float negative_weight = 1.0f;  // lambda

  void validate() const;
  std::size_t latent_width() const { return encoder.filters.back(); }
  std::size_t network_count() const { return mode == ContextMode::Unidirectional ? 1 : 2; }
  std::size_t feature_width() const { return network_count() * context_units; }
};

/// Desk-scale defaults: reduced filters, 2 x 128 LSTM context, K = 4, 4 distractors.
CpcConfig desk_cpc_config();
/// Full-size setup: full-size encoder, 4 x 512 LSTM context, K = 12, 10 distractors.
CpcConfig full_cpc_config();

/// Row i holds the distractor indices drawn for timestep i (0-based).
struct DistractorTable {
  std::size_t steps = 0;
  std::size_t count = 0;
  std::vector<std::size_t> indices;  // steps x count

  std::span<const std::size_t> row(std::size_t i) const { return {indices.data() + i * count, count}; }
};

/// `count` i.i.d. uniform draws from {0, ..., U-1}; may hit the positive.
std::vector<std::size_t> sample_distractors(std::size_t steps, std::size_t count, Rng& rng);
DistractorTable sample_distractor_table(std::size_t steps, std::size_t count, Rng& rng);

/// log sigma(z^T H c) for single vectors z [D_z], c [D_c], H [D_z x D_c].
Tensor step_similarity(const Tensor& z, const Tensor& c, const Tensor& transform);

/// Contrastive loss summed over offsets k = 1..K:
///   sum_i -[ log sigma(z_t^T H_k c_i) + lambda * sum_{d in D_i} log sigma(-z_d^T H_k c_i) ]
/// with target t = i + k (Forward) or t = i - k (Backward). Distractors are
/// shared across k. Throws DegenerateSequence when U <= K.
Tensor wav2vec_loss(const Tensor& latents, const Tensor& context, const std::vector<Tensor>& transforms,
                    Direction direction, const DistractorTable& distractors, float negative_weight = 1.0f);
Tensor wav2vec_loss(const Tensor& latents, const Tensor& context, const std::vector<Tensor>& transforms,
                    Direction direction, std::size_t distractor_count, Rng& rng, float negative_weight = 1.0f);

/// Sum of the forward loss on (c_fwd, H_fwd) and the backward loss on (c_bwd, H_bwd).
Tensor bidirectional_loss(const Tensor& latents, const Tensor& forward_context, const Tensor& backward_context,
                          const std::vector<Tensor>& forward_transforms, const std::vector<Tensor>& backward_transforms,
                          std::size_t distractor_count, Rng& rng, float negative_weight = 1.0f);

struct CpcLoss {
  Tensor total;
  std::vector<float> per_network;  // one entry per context network
};

class CpcModel {
 public:
  CpcModel(const CpcConfig& config, Rng& init_rng);

  const CpcConfig& config() const { return config_; }
  Tensor encode(const Tensor& waveform) const { return encoder_.forward(waveform); }
  /// One context sequence per network, each [U x units], in time order.
  std::vector<Tensor> contexts(const Tensor& latents) const;
  CpcLoss loss(const Tensor& waveform, Rng& distractor_rng) const;
  /// Tape-free features [U x feature_width]: network outputs concatenated.
  Tensor extract(const Tensor& waveform) const;
  ParameterSet parameters() const;
  const std::vector<Tensor>& transforms(std::size_t network) const { return transforms_[network]; }
  const LstmStack& context_network(std::size_t network) const { return networks_[network]; }

 private:
  Direction direction_of(std::size_t network) const;

  CpcConfig config_;
  Encoder encoder_;
  std::vector<LstmStack> networks_;
  std::vector<std::vector<Tensor>> transforms_;
};

}  // namespace contraspeech
