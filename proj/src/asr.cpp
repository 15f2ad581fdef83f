#include "contraspeech/asr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "op_support.hpp"

namespace contraspeech {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace

Vocabulary::Vocabulary(std::string symbols) : symbols_(std::move(symbols)) {
  for (std::size_t i = 0; i < symbols_.size(); ++i)
    require(symbols_.find(symbols_[i]) == i, ErrorKind::Config,
            std::string("duplicate vocabulary symbol '") + symbols_[i] + "'");
}

Vocabulary Vocabulary::characters() { return Vocabulary("abcdefghijklmnopqrstuvwxyz '"); }

Vocabulary Vocabulary::synthetic(std::size_t tokens) {
  std::string s;
  for (std::size_t v = 0; v < tokens; ++v) s.push_back(static_cast<char>('a' + v));
  return Vocabulary(s);
}

std::vector<std::size_t> Vocabulary::encode(const std::string& text) const {
  std::vector<std::size_t> out;
  out.reserve(text.size());
  for (char c : text) {
    const auto pos = symbols_.find(c);
    require(pos != std::string::npos, ErrorKind::Contract,
            std::string("symbol '") + c + "' is not in the vocabulary \"" + symbols_ + "\"");
    out.push_back(pos + 1);
  }
  return out;
}

std::string Vocabulary::decode(const std::vector<std::size_t>& labels) const {
  std::string out;
  for (std::size_t l : labels) {
    require(l >= 1 && l <= symbols_.size(), ErrorKind::Contract, "label " + std::to_string(l) + " out of range");
    out.push_back(symbols_[l - 1]);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::array<std::size_t, 3> strides_for_rate(double rate) {
  if (std::abs(rate - 100.0) < 1e-6) return {2, 1, 1};
  if (std::abs(rate - 50.0) < 1e-6) return {1, 1, 1};
  fail(ErrorKind::Config, "no stride preset for a feature rate of " + std::to_string(rate) + " Hz (expected 100 or 50)");
}

void AsrConfig::validate() const {
  require(input_width >= 1, ErrorKind::Config, "ASR input width must be positive");
  const bool halving = strides == std::array<std::size_t, 3>{2, 1, 1};
  const bool full = strides == std::array<std::size_t, 3>{1, 1, 1};
  require(halving || full, ErrorKind::Config, "ASR strides must be (2,1,1) or (1,1,1)");
  require(kernel >= 1 && kernel % 2 == 1, ErrorKind::Config, "ASR kernel must be odd");
  for (std::size_t u : conv_units) require(u >= 1, ErrorKind::Config, "conv units must be positive");
  require(recurrent_layers >= 1 && recurrent_units >= 1, ErrorKind::Config, "recurrent stack must be non-empty");
  require(vocabulary.size() >= 2, ErrorKind::Config, "vocabulary needs at least one symbol besides blank");
}

std::size_t AsrConfig::output_length(std::size_t frames) const {
  std::size_t len = frames;
  for (std::size_t s : strides) len = conv1d_output_length(len, kernel, s, kernel / 2);
  return len;
}

AsrConfig desk_asr_config(std::size_t input_width, double feature_rate, Vocabulary vocabulary) {
  AsrConfig c;
  c.input_width = input_width;
  c.feature_rate = feature_rate;
  c.strides = strides_for_rate(feature_rate);
  c.vocabulary = std::move(vocabulary);
  return c;
}

AsrConfig full_asr_config(std::size_t input_width, double feature_rate, Vocabulary vocabulary) {
  AsrConfig c = desk_asr_config(input_width, feature_rate, std::move(vocabulary));
  c.conv_units = {640, 480, 320};
  c.recurrent_layers = 10;
  c.recurrent_units = 320;
  return c;
}

AsrModel::AsrModel(const AsrConfig& config, Rng& rng) : config_(config) {
  config.validate();
  std::size_t width = config.input_width;
  for (std::size_t i = 0; i < 3; ++i) {
    convs_.emplace_back(width, config.conv_units[i], config.kernel, config.strides[i], rng, config.kernel / 2);
    // No skip on the first layer; later layers project their input when
    // the stride is 1 (always the case for the allowed presets).
    conv_skips_.push_back(i == 0 ? Linear() : Linear(width, config.conv_units[i], rng, false));
    width = config.conv_units[i];
  }
  const std::size_t H = config.recurrent_units;
  for (std::size_t l = 0; l < config.recurrent_layers; ++l) {
    RecurrentLayer layer;
    layer.forward = LstmLayer(width, H, Direction::Forward, rng);
    layer.backward = LstmLayer(width, H, Direction::Backward, rng);
    layer.merge = Linear(2 * H, H, rng);
    layer.project_skip = width != H;
    if (layer.project_skip) layer.skip = Linear(width, H, rng, false);
    recurrent_.push_back(std::move(layer));
    width = H;
  }
  classifier_ = Linear(width, config.vocabulary.size(), rng);
}

Tensor AsrModel::forward(const Tensor& features) const {
  require(features.rank() == 2 && features.cols() == config_.input_width, ErrorKind::Dimension,
          "ASR expects [frames x " + std::to_string(config_.input_width) + "] features, got " +
              shape_string(features.shape()));
  Tensor x = features;  // [L x C]
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    Tensor y = transpose(relu(convs_[i].forward(transpose(x))));
    if (i > 0 && convs_[i].stride == 1) y = add(y, conv_skips_[i].forward(x));
    x = y;
  }
  for (const auto& layer : recurrent_) {
    const Tensor both = concat_cols({layer.forward.forward(x), layer.backward.forward(x)});
    const Tensor merged = layer.merge.forward(both);
    x = add(merged, layer.project_skip ? layer.skip.forward(x) : x);
  }
  return log_softmax(classifier_.forward(x));
}

ParameterSet AsrModel::parameters() const {
  ParameterSet set;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect(set, "asr.conv" + std::to_string(i + 1));
    if (i > 0) conv_skips_[i].collect(set, "asr.conv" + std::to_string(i + 1) + ".skip");
  }
  for (std::size_t l = 0; l < recurrent_.size(); ++l) {
    const std::string p = "asr.rnn" + std::to_string(l + 1);
    recurrent_[l].forward.collect(set, p + ".forward");
    recurrent_[l].backward.collect(set, p + ".backward");
    recurrent_[l].merge.collect(set, p + ".merge");
    if (recurrent_[l].project_skip) recurrent_[l].skip.collect(set, p + ".skip");
  }
  classifier_.collect(set, "asr.classifier");
  return set;
}

// ---------------------------------------------------------------------------
// CTC

std::size_t ctc_minimum_frames(const std::vector<std::size_t>& target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) n += target[i] == target[i - 1];
  return n;
}

CtcLattice ctc_lattice(const RowMatrixXf& lp, const std::vector<std::size_t>& target) {
  const std::size_t T = lp.rows(), V = lp.cols();
  require(T >= 1, ErrorKind::Contract, "CTC needs at least one frame");
  for (std::size_t l : target)
    require(l >= 1 && l < V, ErrorKind::Contract, "target label " + std::to_string(l) + " outside 1.." + std::to_string(V - 1));
  CtcLattice lat;
  lat.labels.assign(2 * target.size() + 1, 0);
  for (std::size_t i = 0; i < target.size(); ++i) lat.labels[2 * i + 1] = target[i];
  const std::size_t S = lat.labels.size();
  auto& labels = lat.labels;
  lat.alpha.assign(T * S, kNegInf);
  lat.beta.assign(T * S, kNegInf);
  auto A = [&](std::size_t t, std::size_t s) -> double& { return lat.alpha[t * S + s]; };
  auto B = [&](std::size_t t, std::size_t s) -> double& { return lat.beta[t * S + s]; };
  auto emit = [&](std::size_t t, std::size_t s) { return static_cast<double>(lp(t, labels[s])); };
  // A move from s - 2 is allowed when it skips a blank between different labels.
  auto can_skip = [&](std::size_t s) { return s >= 2 && labels[s] != 0 && labels[s] != labels[s - 2]; };

  A(0, 0) = emit(0, 0);
  if (S > 1) A(0, 1) = emit(0, 1);
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      double v = A(t - 1, s);
      if (s >= 1) v = log_add(v, A(t - 1, s - 1));
      if (can_skip(s)) v = log_add(v, A(t - 1, s - 2));
      A(t, s) = v == kNegInf ? kNegInf : v + emit(t, s);
    }
  lat.forward_log_likelihood = A(T - 1, S - 1);
  if (S > 1) lat.forward_log_likelihood = log_add(lat.forward_log_likelihood, A(T - 1, S - 2));

  B(T - 1, S - 1) = 0.0;
  if (S > 1) B(T - 1, S - 2) = 0.0;
  for (std::size_t t = T - 1; t-- > 0;)
    for (std::size_t s = 0; s < S; ++s) {
      double v = B(t + 1, s) + emit(t + 1, s);
      if (s + 1 < S) v = log_add(v, B(t + 1, s + 1) + emit(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) v = log_add(v, B(t + 1, s + 2) + emit(t + 1, s + 2));
      B(t, s) = v;
    }
  lat.backward_log_likelihood = B(0, 0) + emit(0, 0);
  if (S > 1) lat.backward_log_likelihood = log_add(lat.backward_log_likelihood, B(0, 1) + emit(0, 1));
  return lat;
}

Tensor ctc_loss(const Tensor& log_probs, const std::vector<std::size_t>& target) {
  require(log_probs.rank() == 2, ErrorKind::Dimension, "CTC expects [frames x vocab] log-probabilities");
  const std::size_t T = log_probs.rows(), V = log_probs.cols();
  const std::size_t need = ctc_minimum_frames(target);
  require(need <= T, ErrorKind::Alignment,
          "target of length " + std::to_string(target.size()) + " needs " + std::to_string(need) +
              " frames but only " + std::to_string(T) + " are available");
  const RowMatrixXf lp = log_probs.matrix();
  CtcLattice lat = ctc_lattice(lp, target);
  const double ll = lat.forward_log_likelihood;
  require(std::isfinite(ll), ErrorKind::Alignment, "target has zero probability under the model");
  const bool track = detail::tracking({&log_probs});
  Tensor out = Tensor::scalar(static_cast<float>(-ll), track);
  if (track) {
    active_tape().record({log_probs, out}, [log_probs, out, lat = std::move(lat), ll, T, V]() {
      const double g = out.grad()[0];
      auto gl = log_probs.ensure_grad();
      const std::size_t S = lat.labels.size();
      // d(-log p)/d lp(t, k) = -sum_{s: label k} exp(alpha + beta - log p)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t s = 0; s < S; ++s) {
          const double a = lat.alpha[t * S + s], b = lat.beta[t * S + s];
          if (a == kNegInf || b == kNegInf) continue;
          gl[t * V + lat.labels[s]] -= static_cast<float>(g * std::exp(a + b - ll));
        }
    });
  }
  return out;
}

std::vector<std::size_t> greedy_decode(const RowMatrixXf& log_probs) {
  std::vector<std::size_t> out;
  std::size_t prev = 0;
  for (Eigen::Index t = 0; t < log_probs.rows(); ++t) {
    Eigen::Index arg;
    log_probs.row(t).maxCoeff(&arg);
    const auto k = static_cast<std::size_t>(arg);
    if (k != 0 && k != prev) out.push_back(k);
    prev = k;
  }
  return out;
}

double ctc_brute_force(const RowMatrixXf& lp, const std::vector<std::size_t>& target) {
  const std::size_t T = lp.rows(), V = lp.cols();
  require(T <= 10 && V <= 5, ErrorKind::OracleScope,
          "brute-force CTC is limited to T <= 10 and V <= 5 (got T=" + std::to_string(T) + ", V=" + std::to_string(V) + ")");
  std::vector<std::size_t> path(T, 0), collapsed;
  double total = kNegInf;
  while (true) {
    collapsed.clear();
    std::size_t prev = 0;
    double score = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      score += lp(t, path[t]);
      if (path[t] != 0 && path[t] != prev) collapsed.push_back(path[t]);
      prev = path[t];
    }
    if (collapsed == target) total = log_add(total, score);
    std::size_t t = 0;
    while (t < T && ++path[t] == V) path[t++] = 0;
    if (t == T) break;
  }
  return total;
}

// ---------------------------------------------------------------------------

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

namespace {

template <typename Split>
double corpus_rate(const std::vector<std::string>& hyps, const std::vector<std::string>& refs, Split split) {
  require(hyps.size() == refs.size(), ErrorKind::Contract, "hypothesis and reference counts differ");
  std::size_t dist = 0, total = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto r = split(refs[i]);
    dist += edit_distance(split(hyps[i]), r).distance;
    total += r.size();
  }
  require(total > 0, ErrorKind::Contract, "error rate is undefined for an empty reference corpus");
  return static_cast<double>(dist) / static_cast<double>(total);
}

}  // namespace

double word_error_rate(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  return corpus_rate(hyps, refs, split_words);
}

double character_error_rate(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  return corpus_rate(hyps, refs, [](const std::string& s) { return s; });
}

}  // namespace contraspeech
