#include "contraspeech/cpc.hpp"

#include <cmath>

namespace contraspeech {

std::string to_string(ContextMode mode) {
  switch (mode) {
    case ContextMode::Unidirectional: return "uni";
    case ContextMode::Bidirectional: return "bi";
    case ContextMode::ForwardPair: return "uni2x";
  }
  return "uni";
}

ContextMode context_mode_from_string(const std::string& name) {
  if (name == "uni") return ContextMode::Unidirectional;
  if (name == "bi") return ContextMode::Bidirectional;
  if (name == "uni2x") return ContextMode::ForwardPair;
  fail(ErrorKind::Config, "unknown context mode '" + name + "' (expected uni, bi or uni2x)");
}

void CpcConfig::validate() const {
  encoder.validate();
  require(offsets >= 1, ErrorKind::Config, "offset count K must be at least 1");
  require(distractors >= 1, ErrorKind::Config, "distractor count must be at least 1");
  require(context_layers >= 1 && context_units >= 1, ErrorKind::Config, "context network must be non-empty");
}

CpcConfig desk_cpc_config() { return CpcConfig{}; }

CpcConfig full_cpc_config() {
  CpcConfig c;
  c.encoder = full_encoder_spec();
  c.context_layers = 4;
  c.context_units = 512;
  c.offsets = 12;
  c.distractors = 10;
  return c;
}

std::vector<std::size_t> sample_distractors(std::size_t steps, std::size_t count, Rng& rng) {
  require(steps >= 1, ErrorKind::Contract, "cannot sample distractors from an empty sequence");
  std::vector<std::size_t> out(count);
  for (auto& v : out) v = uniform_index(rng, steps);
  return out;
}

DistractorTable sample_distractor_table(std::size_t steps, std::size_t count, Rng& rng) {
  DistractorTable table;
  table.steps = steps;
  table.count = count;
  table.indices.reserve(steps * count);
  for (std::size_t i = 0; i < steps; ++i) {
    const auto row = sample_distractors(steps, count, rng);
    table.indices.insert(table.indices.end(), row.begin(), row.end());
  }
  return table;
}

Tensor step_similarity(const Tensor& z, const Tensor& c, const Tensor& transform) {
  const Tensor zr = reshape(z, {1, z.numel()});
  const Tensor cc = reshape(c, {c.numel(), 1});
  return reshape(log_sigmoid(matmul(matmul(zr, transform), cc)), {});
}

Tensor wav2vec_loss(const Tensor& latents, const Tensor& context, const std::vector<Tensor>& transforms,
                    Direction direction, const DistractorTable& distractors, float negative_weight) {
  require(latents.rank() == 2 && context.rank() == 2, ErrorKind::Dimension, "latents and context must be [U x D]");
  const std::size_t steps = latents.rows();
  require(context.rows() == steps, ErrorKind::Dimension, "latent and context sequences differ in length");
  const std::size_t K = transforms.size();
  require(K >= 1, ErrorKind::Config, "need at least one step transform");
  require(steps > K, ErrorKind::DegenerateSequence,
          "sequence of " + std::to_string(steps) + " latent frames is too short for " + std::to_string(K) + " offsets");
  require(distractors.steps == steps, ErrorKind::Contract, "distractor table length differs from the sequence");
  for (const auto& h : transforms)
    require(h.rank() == 2 && h.rows() == latents.cols() && h.cols() == context.cols(), ErrorKind::Dimension,
            "step transform must be [D_z x D_c]");

  std::vector<Tensor> terms;
  for (std::size_t k = 1; k <= K; ++k) {
    const std::size_t n = steps - k;
    // Row j of projected is (H_k c_j)^T.
    const Tensor projected = matmul(context, transpose(transforms[k - 1]));
    const std::size_t anchor_begin = direction == Direction::Forward ? 0 : k;
    const std::size_t target_begin = direction == Direction::Forward ? k : 0;
    const Tensor anchors = slice_rows(projected, anchor_begin, anchor_begin + n);
    const Tensor targets = slice_rows(latents, target_begin, target_begin + n);
    const Tensor positive = sum(log_sigmoid(reduce(ReduceKind::Sum, mul(targets, anchors), 1)));

    std::vector<std::size_t> negative_rows, anchor_rows;
    negative_rows.reserve(n * distractors.count);
    anchor_rows.reserve(n * distractors.count);
    for (std::size_t i = anchor_begin; i < anchor_begin + n; ++i)
      for (std::size_t d : distractors.row(i)) {
        negative_rows.push_back(d);
        anchor_rows.push_back(i);
      }
    terms.push_back(positive);
    if (!negative_rows.empty()) {
      const Tensor scores =
          reduce(ReduceKind::Sum, mul(gather_rows(latents, negative_rows), gather_rows(projected, anchor_rows)), 1);
      terms.push_back(scale(sum(log_sigmoid(neg(scores))), negative_weight));
    }
  }
  Tensor total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return neg(total);
}

Tensor wav2vec_loss(const Tensor& latents, const Tensor& context, const std::vector<Tensor>& transforms,
                    Direction direction, std::size_t distractor_count, Rng& rng, float negative_weight) {
  const DistractorTable table = sample_distractor_table(latents.rows(), distractor_count, rng);
  return wav2vec_loss(latents, context, transforms, direction, table, negative_weight);
}

Tensor bidirectional_loss(const Tensor& latents, const Tensor& forward_context, const Tensor& backward_context,
                          const std::vector<Tensor>& forward_transforms, const std::vector<Tensor>& backward_transforms,
                          std::size_t distractor_count, Rng& rng, float negative_weight) {
  const Tensor f = wav2vec_loss(latents, forward_context, forward_transforms, Direction::Forward, distractor_count,
                                rng, negative_weight);
  const Tensor b = wav2vec_loss(latents, backward_context, backward_transforms, Direction::Backward,
                                distractor_count, rng, negative_weight);
  return add(f, b);
}

CpcModel::CpcModel(const CpcConfig& config, Rng& init_rng) : config_(config) {
  config.validate();
  encoder_ = Encoder(config.encoder, init_rng);
  const std::size_t dz = config.latent_width(), dc = config.context_units;
  const float bound = 1.0f / std::sqrt(static_cast<float>(dc));
  for (std::size_t n = 0; n < config.network_count(); ++n) {
    networks_.emplace_back(dz, dc, config.context_layers, direction_of(n), init_rng);
    std::vector<Tensor> hs;
    for (std::size_t k = 0; k < config.offsets; ++k) {
      Tensor h = Tensor::zeros({dz, dc}, true);
      for (float& v : h.data()) v = uniform(init_rng, -bound, bound);
      hs.push_back(h);
    }
    transforms_.push_back(std::move(hs));
  }
}

Direction CpcModel::direction_of(std::size_t network) const {
  return config_.mode == ContextMode::Bidirectional && network == 1 ? Direction::Backward : Direction::Forward;
}

std::vector<Tensor> CpcModel::contexts(const Tensor& latents) const {
  std::vector<Tensor> out;
  for (const auto& net : networks_) out.push_back(net.forward(latents));
  return out;
}

CpcLoss CpcModel::loss(const Tensor& waveform, Rng& distractor_rng) const {
  const Tensor z = encode(waveform);
  const auto cs = contexts(z);
  CpcLoss result;
  for (std::size_t n = 0; n < cs.size(); ++n) {
    const DistractorTable table = sample_distractor_table(z.rows(), config_.distractors, distractor_rng);
    const Tensor l = wav2vec_loss(z, cs[n], transforms_[n], direction_of(n), table, config_.negative_weight);
    result.per_network.push_back(l.item());
    result.total = n == 0 ? l : add(result.total, l);
  }
  return result;
}

Tensor CpcModel::extract(const Tensor& waveform) const {
  NoGradGuard guard;
  const auto cs = contexts(encode(waveform));
  return cs.size() == 1 ? cs.front() : concat_cols(cs);
}

ParameterSet CpcModel::parameters() const {
  ParameterSet set;
  encoder_.collect(set, "encoder");
  static const char* uni_names[] = {"forward", "forward2"};
  static const char* bi_names[] = {"forward", "backward"};
  for (std::size_t n = 0; n < networks_.size(); ++n) {
    const std::string name = config_.mode == ContextMode::Bidirectional ? bi_names[n] : uni_names[n];
    networks_[n].collect(set, "context." + name);
    for (std::size_t k = 0; k < transforms_[n].size(); ++k)
      set.add("steps." + name + "." + std::to_string(k + 1), transforms_[n][k]);
  }
  return set;
}

}  // namespace contraspeech
