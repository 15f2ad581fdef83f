#pragma once

#include <cstddef>
#include <vector>

#include "contraspeech/encoder.hpp"
#include "contraspeech/layers.hpp"
#include "contraspeech/rng.hpp"

namespace contraspeech {

struct MaskSpec {
  double start_probability = 0.065;  // p
  std::size_t span = 10;             // M
};

/// Sorted indices of masked steps. Each step starts a span with probability
/// p; spans cover the next M steps, clipped at U. An empty draw is redrawn,
/// so the result always holds at least one index.
std::vector<std::size_t> sample_mask(std::size_t steps, const MaskSpec& spec, Rng& rng);

/// z with the listed rows replaced by `embedding` [D].
Tensor apply_mask(const Tensor& latents, const std::vector<std::size_t>& masked, const Tensor& embedding);

struct MaskedSequence {
  Tensor values;
  std::vector<std::size_t> masked;
};
MaskedSequence apply_mask(const Tensor& latents, const MaskSpec& spec, const Tensor& embedding, Rng& rng);

/// Forward value `hard`, gradient routed to `soft` unchanged.
Tensor straight_through(const Tensor& hard, const Tensor& soft);

/// (1/G) sum_g (1 - H(p_g) / ln V) for average assignment probabilities
/// [G x V], with 0 log 0 = 0. Lies in [0, 1]; 0 iff every row is uniform.
Tensor diversity_loss(const Tensor& mean_probabilities);

struct QuantizerConfig {
  std::size_t groups = 2;     // G
  std::size_t entries = 32;   // V
  std::size_t entry_width = 0;  // codeword width per group; 0 -> D / G
};

struct QuantizerOutput {
  Tensor q;              // [U x D]
  Tensor mean_probabilities;  // [G x V], softmax of the clean logits averaged over time
  std::vector<std::size_t> codes;  // U x G selected entries
};

/// z -> G x V logits -> one codeword per group (Gumbel straight-through in
/// training, argmax otherwise) -> concatenation -> linear map back to D.
class Quantizer {
 public:
  Quantizer() = default;
  Quantizer(std::size_t width, const QuantizerConfig& config, Rng& rng);

  QuantizerOutput forward(const Tensor& latents, bool train, float temperature, Rng& rng) const;
  const QuantizerConfig& config() const { return config_; }
  void collect(ParameterSet& set, const std::string& prefix) const;

  Linear logits;
  std::vector<Tensor> codebooks;  // per group [V x entry_width]
  Linear project;

 private:
  QuantizerConfig config_;
};

/// For each masked step u: `count` distractors drawn from the other masked
/// steps (without replacement when enough exist, with replacement
/// otherwise), then u appended last. Row-major [|mask| x N]; N = 1 when the
/// mask holds a single step.
struct MaskedCandidates {
  std::size_t candidates = 0;  // N
  std::vector<std::size_t> anchors;  // the masked steps, in order
  std::vector<std::size_t> indices;  // |mask| x N, target last
};
MaskedCandidates sample_masked_candidates(const std::vector<std::size_t>& masked, std::size_t count, Rng& rng);

/// Cosine similarity row by row; zero rows give 0.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

/// sum_u -log softmax_j(cos(c_u, q_j) / kappa)[target]. The candidate row
/// of each masked step comes from `candidates`.
Tensor masked_contrastive_loss(const Tensor& quantized, const Tensor& context, const MaskedCandidates& candidates,
                               float temperature);

struct MaskedConfig {
  EncoderSpec encoder;  // defaults to masked_encoder_spec()
  std::size_t attention_blocks = 2;
  std::size_t attention_heads = 4;
  std::size_t ff_width = 256;
  MaskSpec mask;
  QuantizerConfig quantizer;
  std::size_t distractors = 10;
  float kappa = 0.1f;
  float diversity_weight = 0.1f;  // alpha
  float gumbel_start = 2.0f;
  float gumbel_end = 0.5f;
  float gumbel_decay = 0.995f;

  MaskedConfig();
  void validate() const;
  std::size_t latent_width() const { return encoder.filters.back(); }
  float gumbel_temperature(std::size_t step) const;
};

/// Seven conv layers with total stride 320 (50 Hz frames at 16 kHz):
/// kernels (10,3,3,3,3,2,2), strides (5,2,2,2,2,2,2), desk widths.
EncoderSpec masked_encoder_spec();

struct MaskedLoss {
  Tensor total;
  float contrastive = 0.0f;
  float diversity = 0.0f;
  std::size_t masked_steps = 0;
  std::size_t candidates = 0;
};

class MaskedModel {
 public:
  MaskedModel(const MaskedConfig& config, Rng& init_rng);

  const MaskedConfig& config() const { return config_; }
  Tensor encode(const Tensor& waveform) const { return encoder_.forward(waveform); }
  /// Contrastive (summed over masked steps) + alpha * masked steps * diversity
  /// on one waveform.
  MaskedLoss loss(const Tensor& waveform, std::size_t step, Rng& mask_rng, Rng& distractor_rng,
                  Rng& gumbel_rng) const;
  /// Unmasked context features [U x D], tape-free.
  Tensor extract(const Tensor& waveform) const;
  ParameterSet parameters() const;

  const Quantizer& quantizer() const { return quantizer_; }
  const Tensor& mask_embedding() const { return mask_embedding_; }

 private:
  MaskedConfig config_;
  Encoder encoder_;
  LayerNorm feature_norm_;
  Tensor mask_embedding_;
  SelfAttentionStack context_;
  Quantizer quantizer_;
};

}  // namespace contraspeech
