#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "contraspeech/layers.hpp"

namespace contraspeech {

/// Symbol inventory with the CTC blank at index 0; symbol i is stored at
/// index i + 1.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::string symbols);

  /// Lowercase letters, space and apostrophe.
  static Vocabulary characters();
  /// 'a', 'b', ... for the synthetic corpus.
  static Vocabulary synthetic(std::size_t tokens);

  std::size_t size() const { return symbols_.size() + 1; }
  const std::string& symbols() const { return symbols_; }
  std::vector<std::size_t> encode(const std::string& text) const;
  std::string decode(const std::vector<std::size_t>& labels) const;

 private:
  std::string symbols_;
};

struct AsrConfig {
  std::size_t input_width = 0;
  std::array<std::size_t, 3> conv_units{64, 48, 32};
  std::size_t kernel = 3;
  std::array<std::size_t, 3> strides{2, 1, 1};
  std::size_t recurrent_layers = 2;
  std::size_t recurrent_units = 64;
  Vocabulary vocabulary = Vocabulary::synthetic(5);
  double feature_rate = 100.0;  // frames per second of the input features

  void validate() const;
  /// Frame count after the conv front-end (padding 1 on every layer).
  std::size_t output_length(std::size_t frames) const;
};

/// (2, 1, 1) for 100 Hz features, (1, 1, 1) for 50 Hz ones.
std::array<std::size_t, 3> strides_for_rate(double feature_rate);

/// Desk defaults with the stride preset chosen by feature rate.
AsrConfig desk_asr_config(std::size_t input_width, double feature_rate, Vocabulary vocabulary);
/// Conv units (640, 480, 320), 10 bidirectional layers of 320 units.
AsrConfig full_asr_config(std::size_t input_width, double feature_rate, Vocabulary vocabulary);

/// Conv front-end (ReLU, skip projection on all but the first layer), then
/// bidirectional LSTM layers whose concatenated directions are projected
/// back to the layer width and added to the layer input, then a linear
/// classifier with log-softmax.
class AsrModel {
 public:
  AsrModel(const AsrConfig& config, Rng& init_rng);

  const AsrConfig& config() const { return config_; }
  /// features [frames x input_width] -> log-probabilities [frames' x vocab].
  Tensor forward(const Tensor& features) const;
  ParameterSet parameters() const;

 private:
  struct RecurrentLayer {
    LstmLayer forward, backward;
    Linear merge, skip;
    bool project_skip = false;  // identity skip when widths match
  };

  AsrConfig config_;
  std::vector<Conv1dLayer> convs_;
  std::vector<Linear> conv_skips_;  // index 0 unused
  std::vector<RecurrentLayer> recurrent_;
  Linear classifier_;
};

// ---------------------------------------------------------------------------
// CTC

/// Blank-interleaved lattice for one target: forward (alpha, emission at t
/// included) and backward (beta, emission at t excluded) log tables.
struct CtcLattice {
  std::vector<std::size_t> labels;  // length 2L + 1
  std::vector<double> alpha, beta;  // T x (2L + 1)
  double forward_log_likelihood = -std::numeric_limits<double>::infinity();
  double backward_log_likelihood = -std::numeric_limits<double>::infinity();
};

/// Frames needed to emit `target`: its length plus one per adjacent repeat.
std::size_t ctc_minimum_frames(const std::vector<std::size_t>& target);

CtcLattice ctc_lattice(const RowMatrixXf& log_probs, const std::vector<std::size_t>& target);

/// -log p(target | log_probs); throws Alignment when the target cannot fit.
Tensor ctc_loss(const Tensor& log_probs, const std::vector<std::size_t>& target);

/// log p(target) by enumerating every length-T path (T <= 10, V <= 5).
double ctc_brute_force(const RowMatrixXf& log_probs, const std::vector<std::size_t>& target);

/// Per-frame argmax, repeats collapsed, blanks dropped.
std::vector<std::size_t> greedy_decode(const RowMatrixXf& log_probs);

// ---------------------------------------------------------------------------
// Scoring

struct EditCounts {
  std::size_t distance = 0, substitutions = 0, insertions = 0, deletions = 0;
};

template <typename Sequence>
EditCounts edit_distance(const Sequence& hyp, const Sequence& ref) {
  const std::size_t n = hyp.size(), m = ref.size();
  // cell (i, j): best alignment of hyp[0..i) with ref[0..j)
  std::vector<EditCounts> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = {j, 0, 0, j};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {i, 0, i, 0};
    for (std::size_t j = 1; j <= m; ++j) {
      EditCounts sub = prev[j - 1];
      if (!(hyp[i - 1] == ref[j - 1])) {
        ++sub.distance;
        ++sub.substitutions;
      }
      EditCounts ins = prev[j];
      ++ins.distance;
      ++ins.insertions;
      EditCounts del = cur[j - 1];
      ++del.distance;
      ++del.deletions;
      cur[j] = sub;
      if (ins.distance < cur[j].distance) cur[j] = ins;
      if (del.distance < cur[j].distance) cur[j] = del;
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

std::vector<std::string> split_words(const std::string& text);

/// Corpus-level rates: total edit distance over total reference length.
double word_error_rate(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);
double character_error_rate(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);

}  // namespace contraspeech
