#include "contraspeech/masked.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "op_support.hpp"

namespace contraspeech {

using detail::check_finite;
using detail::tracking;

std::vector<std::size_t> sample_mask(std::size_t steps, const MaskSpec& spec, Rng& rng) {
  require(steps >= 1, ErrorKind::Contract, "cannot mask an empty sequence");
  require(spec.span >= 1, ErrorKind::Config, "mask span must be at least 1");
  std::vector<char> hit(steps, 0);
  bool any = false;
  // Redraw on an empty set. With p = 0 (or astronomically unlucky draws)
  // the redraws never succeed, so after a bounded number one start is
  // forced at a uniform position.
  for (int attempt = 0; attempt < 64 && !any; ++attempt) {
    std::fill(hit.begin(), hit.end(), 0);
    for (std::size_t i = 0; i < steps; ++i)
      if (uniform01(rng) < spec.start_probability) {
        for (std::size_t j = i; j < std::min(steps, i + spec.span); ++j) hit[j] = 1;
        any = true;
      }
  }
  if (!any) {
    const std::size_t start = uniform_index(rng, steps);
    for (std::size_t j = start; j < std::min(steps, start + spec.span); ++j) hit[j] = 1;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < steps; ++i)
    if (hit[i]) out.push_back(i);
  return out;
}

Tensor apply_mask(const Tensor& latents, const std::vector<std::size_t>& masked, const Tensor& embedding) {
  require(embedding.numel() == latents.cols(), ErrorKind::Dimension, "mask embedding width differs from latents");
  return replace_rows(latents, masked, embedding);
}

MaskedSequence apply_mask(const Tensor& latents, const MaskSpec& spec, const Tensor& embedding, Rng& rng) {
  MaskedSequence out;
  out.masked = sample_mask(latents.rows(), spec, rng);
  out.values = apply_mask(latents, out.masked, embedding);
  return out;
}

Tensor straight_through(const Tensor& hard, const Tensor& soft) {
  require(hard.shape() == soft.shape(), ErrorKind::Dimension, "straight-through operands differ in shape");
  const bool track = tracking({&soft});
  Tensor out = Tensor::from(hard.shape(), std::vector<float>(hard.data().begin(), hard.data().end()), track);
  if (track) {
    active_tape().record({soft, out}, [soft, out]() {
      auto g = out.grad();
      auto gs = soft.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
    });
  }
  return out;
}

Tensor diversity_loss(const Tensor& p) {
  require(p.rank() == 2, ErrorKind::Dimension, "diversity loss expects [G x V] probabilities");
  const std::size_t G = p.rows(), V = p.cols();
  require(G >= 1 && V >= 1, ErrorKind::Dimension, "empty codebook");
  const double lnV = std::log(static_cast<double>(V));
  const auto pv = p.data();
  double total = 0.0;
  if (V > 1)
    for (std::size_t g = 0; g < G; ++g) {
      double h = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        const double x = pv[g * V + v];
        if (x > 0.0) h -= x * std::log(x);
      }
      total += 1.0 - h / lnV;
    }
  const bool track = tracking({&p});
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(G)), track);
  check_finite(out, "diversity_loss");
  if (track && V > 1) {
    active_tape().record({p, out}, [p, out, G, lnV]() {
      const double g = out.grad()[0];
      auto gp = p.ensure_grad();
      const auto pv = p.data();
      // d/dp of -(-p ln p) / ln V; the p = 0 end uses a tiny floor so the
      // slope stays finite.
      for (std::size_t i = 0; i < pv.size(); ++i) {
        const double x = std::max<double>(pv[i], 1e-30);
        gp[i] += static_cast<float>(g * (std::log(x) + 1.0) / (lnV * static_cast<double>(G)));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

Quantizer::Quantizer(std::size_t width, const QuantizerConfig& config, Rng& rng) : config_(config) {
  require(config.groups >= 1 && config.entries >= 1, ErrorKind::Config, "quantizer needs G >= 1 and V >= 1");
  if (config_.entry_width == 0) config_.entry_width = std::max<std::size_t>(1, width / config.groups);
  logits = Linear(width, config.groups * config.entries, rng);
  // Unit-normal weights on layer-normed inputs give logits with spread about
  // sqrt(width), well above the Gumbel noise, so codeword choices depend on
  // the input from the first step instead of being noise-driven.
  for (float& v : logits.weight.data()) v = static_cast<float>(normal(rng));
  std::fill(logits.bias.data().begin(), logits.bias.data().end(), 0.0f);
  for (std::size_t g = 0; g < config.groups; ++g) {
    Tensor book = Tensor::zeros({config.entries, config_.entry_width});
    for (float& v : book.data()) v = uniform(rng, -1.0f, 1.0f);
    book.set_requires_grad(true);
    codebooks.push_back(book);
  }
  project = Linear(config.groups * config_.entry_width, width, rng);
}

namespace {

Tensor one_hot_argmax(const RowMatrixXf& scores, std::vector<std::size_t>& picks) {
  Tensor out = Tensor::zeros({static_cast<std::size_t>(scores.rows()), static_cast<std::size_t>(scores.cols())});
  auto m = out.matrix();
  picks.resize(scores.rows());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index c;
    scores.row(r).maxCoeff(&c);
    m(r, c) = 1.0f;
    picks[r] = static_cast<std::size_t>(c);
  }
  return out;
}

}  // namespace

QuantizerOutput Quantizer::forward(const Tensor& latents, bool train, float temperature, Rng& rng) const {
  const std::size_t U = latents.rows(), G = config_.groups, V = config_.entries;
  const Tensor flat = reshape(logits.forward(latents), {U * G, V});  // row u*G + g

  QuantizerOutput out;
  out.mean_probabilities = reshape(reduce(ReduceKind::Mean, reshape(softmax(flat), {U, G * V}), 0), {G, V});

  Tensor assignment;
  if (train) {
    require(temperature > 0.0f, ErrorKind::Config, "gumbel temperature must be positive");
    Tensor noise = Tensor::zeros({U * G, V});
    for (float& v : noise.data()) {
      double u = uniform01(rng);
      u = std::clamp(u, 1e-12, 1.0 - 1e-12);
      v = static_cast<float>(-std::log(-std::log(u)));
    }
    const Tensor perturbed = scale(add(flat, noise), 1.0f / temperature);
    const Tensor soft = softmax(perturbed);
    assignment = straight_through(one_hot_argmax(perturbed.matrix(), out.codes), soft);
  } else {
    assignment = one_hot_argmax(flat.matrix(), out.codes);
  }

  std::vector<Tensor> parts;
  for (std::size_t g = 0; g < G; ++g) {
    std::vector<std::size_t> rows(U);
    for (std::size_t u = 0; u < U; ++u) rows[u] = u * G + g;
    parts.push_back(matmul(gather_rows(assignment, rows), codebooks[g]));
  }
  out.q = project.forward(G == 1 ? parts.front() : concat_cols(parts));
  return out;
}

void Quantizer::collect(ParameterSet& set, const std::string& prefix) const {
  logits.collect(set, prefix + ".logits");
  for (std::size_t g = 0; g < codebooks.size(); ++g) set.add(prefix + ".codebook" + std::to_string(g), codebooks[g]);
  project.collect(set, prefix + ".project");
}

// ---------------------------------------------------------------------------

MaskedCandidates sample_masked_candidates(const std::vector<std::size_t>& masked, std::size_t count, Rng& rng) {
  require(!masked.empty(), ErrorKind::Contract, "mask set is empty");
  MaskedCandidates out;
  out.anchors = masked;
  const std::size_t m = masked.size();
  if (m == 1) {
    out.candidates = 1;
    out.indices = masked;
    return out;
  }
  out.candidates = count + 1;
  out.indices.reserve(m * out.candidates);
  std::vector<std::size_t> others;
  for (std::size_t a = 0; a < m; ++a) {
    others.clear();
    for (std::size_t b = 0; b < m; ++b)
      if (b != a) others.push_back(masked[b]);
    if (others.size() >= count) {
      for (std::size_t j = 0; j < count; ++j) {
        std::swap(others[j], others[j + uniform_index(rng, others.size() - j)]);
        out.indices.push_back(others[j]);
      }
    } else {
      for (std::size_t j = 0; j < count; ++j) out.indices.push_back(others[uniform_index(rng, others.size())]);
    }
    out.indices.push_back(masked[a]);
  }
  return out;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  return reduce(ReduceKind::Sum, mul(row_normalize(a), row_normalize(b)), 1);
}

Tensor masked_contrastive_loss(const Tensor& quantized, const Tensor& context, const MaskedCandidates& candidates,
                               float temperature) {
  require(temperature > 0.0f, ErrorKind::Config, "temperature kappa must be positive");
  require(quantized.rank() == 2 && context.rank() == 2 && quantized.shape() == context.shape(), ErrorKind::Dimension,
          "quantized targets and context must both be [U x D]");
  const std::size_t m = candidates.anchors.size(), N = candidates.candidates;
  require(m >= 1 && candidates.indices.size() == m * N, ErrorKind::Contract, "malformed candidate table");
  std::vector<std::size_t> anchor_rows;
  anchor_rows.reserve(m * N);
  for (std::size_t u : candidates.anchors) anchor_rows.insert(anchor_rows.end(), N, u);
  const Tensor qn = row_normalize(quantized);
  const Tensor cn = row_normalize(context);
  const Tensor sims = reduce(ReduceKind::Sum, mul(gather_rows(qn, candidates.indices), gather_rows(cn, anchor_rows)), 1);
  const Tensor logp = log_softmax(scale(reshape(sims, {m, N}), 1.0f / temperature));
  return neg(sum(slice_rows(transpose(logp), N - 1, N)));
}

// ---------------------------------------------------------------------------

EncoderSpec masked_encoder_spec() {
  EncoderSpec s;
  s.filters = {32, 32, 48, 64, 96, 128, 128};
  s.kernels = {10, 3, 3, 3, 3, 2, 2};
  s.strides = {5, 2, 2, 2, 2, 2, 2};
  s.groups = 16;
  return s;
}

MaskedConfig::MaskedConfig() : encoder(masked_encoder_spec()) {}

void MaskedConfig::validate() const {
  encoder.validate();
  require(kappa > 0.0f, ErrorKind::Config, "kappa must be positive");
  require(distractors >= 1, ErrorKind::Config, "distractor count must be at least 1");
  require(mask.start_probability >= 0.0 && mask.start_probability <= 1.0, ErrorKind::Config,
          "mask start probability must lie in [0, 1]");
  require(mask.span >= 1, ErrorKind::Config, "mask span must be at least 1");
  require(attention_heads >= 1 && latent_width() % attention_heads == 0, ErrorKind::Config,
          "attention heads must divide the latent width");
  require(gumbel_start > 0.0f && gumbel_end > 0.0f, ErrorKind::Config, "gumbel temperatures must be positive");
  require(diversity_weight >= 0.0f, ErrorKind::Config, "diversity weight must be non-negative");
}

float MaskedConfig::gumbel_temperature(std::size_t step) const {
  return std::max(gumbel_end, static_cast<float>(gumbel_start * std::pow(gumbel_decay, static_cast<double>(step))));
}

MaskedModel::MaskedModel(const MaskedConfig& config, Rng& init_rng) : config_(config) {
  config.validate();
  const std::size_t D = config.latent_width();
  encoder_ = Encoder(config.encoder, init_rng);
  feature_norm_ = LayerNorm(D);
  mask_embedding_ = Tensor::zeros({D});
  for (float& v : mask_embedding_.data()) v = uniform(init_rng, 0.0f, 1.0f);
  mask_embedding_.set_requires_grad(true);
  context_ = SelfAttentionStack(D, config.attention_heads, config.ff_width, config.attention_blocks, init_rng);
  quantizer_ = Quantizer(D, config.quantizer, init_rng);
}

MaskedLoss MaskedModel::loss(const Tensor& waveform, std::size_t step, Rng& mask_rng, Rng& distractor_rng,
                             Rng& gumbel_rng) const {
  const Tensor z = feature_norm_.forward(encode(waveform));
  const QuantizerOutput quant = quantizer_.forward(z, true, config_.gumbel_temperature(step), gumbel_rng);
  const MaskedSequence masked = apply_mask(z, config_.mask, mask_embedding_, mask_rng);
  const Tensor c = context_.forward(masked.values);
  const MaskedCandidates cand = sample_masked_candidates(masked.masked, config_.distractors, distractor_rng);
  const Tensor contrastive = masked_contrastive_loss(quant.q, c, cand, config_.kappa);
  const Tensor diversity = diversity_loss(quant.mean_probabilities);

  MaskedLoss out;
  out.contrastive = contrastive.item();
  out.diversity = diversity.item();
  out.masked_steps = cand.anchors.size();
  out.candidates = cand.candidates;
  // The contrastive term is a sum over masked steps; the diversity penalty
  // is counted once per masked step as well so alpha keeps its meaning
  // regardless of how many steps were masked.
  const float weight = config_.diversity_weight * static_cast<float>(out.masked_steps);
  out.total = weight > 0.0f ? add(contrastive, scale(diversity, weight)) : contrastive;
  return out;
}

Tensor MaskedModel::extract(const Tensor& waveform) const {
  NoGradGuard guard;
  return context_.forward(feature_norm_.forward(encode(waveform)));
}

ParameterSet MaskedModel::parameters() const {
  ParameterSet set;
  encoder_.collect(set, "encoder");
  feature_norm_.collect(set, "feature_norm");
  set.add("mask_embedding", mask_embedding_);
  context_.collect(set, "context");
  quantizer_.collect(set, "quantizer");
  return set;
}

}  // namespace contraspeech
