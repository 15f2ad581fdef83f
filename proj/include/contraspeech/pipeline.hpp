#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "contraspeech/diagnostics.hpp"
#include "contraspeech/formats.hpp"
#include "contraspeech/run_config.hpp"
#include "contraspeech/training.hpp"

namespace contraspeech {

// Glue between the models, the file formats and the config: what the CLI
// subcommands do, as library calls.

/// Config snapshot as "config.<key>" metadata entries.
void store_config(Checkpoint& checkpoint, const RunConfig& config);
RunConfig stored_config(const Checkpoint& checkpoint);

std::vector<AudioBuffer> load_waveforms(const Manifest& manifest);

/// Every distinct character of the transcripts, sorted.
Vocabulary infer_vocabulary(const std::vector<std::string>& transcripts);

enum class Objective { Cpc, Masked };
std::string to_string(Objective objective);
Objective objective_from_string(const std::string& name);

/// A pretraining model of either objective, rebuilt from a checkpoint or
/// freshly initialized from a config.
class Pretrained {
 public:
  Pretrained(Objective objective, const RunConfig& config, std::uint64_t seed);
  static Pretrained load(const Checkpoint& checkpoint);

  Objective objective() const { return objective_; }
  const RunConfig& config() const { return config_; }
  std::size_t feature_width() const;
  /// Frames per second at 16 kHz input.
  double feature_rate() const;

  TrainingHistory train(const std::vector<AudioBuffer>& corpus, const TrainOptions& options) const;
  /// Tape-free features for one utterance, [frames x feature_width].
  FeatureMatrix extract(const AudioBuffer& audio) const;
  Checkpoint save(std::uint64_t seed, std::size_t steps) const;

 private:
  ParameterSet parameters() const;

  Objective objective_;
  RunConfig config_;
  std::shared_ptr<CpcModel> cpc_;
  std::shared_ptr<MaskedModel> masked_;
};

/// Decorrelating input transform applied before the ASR network.
struct FeatureTransform {
  PcaModel<double> model;
  bool whiten = false;
  double epsilon = 1e-8;

  FeatureMatrix apply(const FeatureMatrix& features) const;
};

/// Tensors "<prefix>mean", "<prefix>components", "<prefix>variance",
/// "<prefix>ratio" plus metadata under the same prefix.
void store_transform(Checkpoint& checkpoint, const FeatureTransform& transform, const std::string& prefix);
std::optional<FeatureTransform> load_transform(const Checkpoint& checkpoint, const std::string& prefix);

/// Two passes over the data through `visit(fn)`, which must call fn once per
/// feature matrix, in the same order both times.
template <typename Visit>
PcaModel<double> fit_streaming(std::size_t width, bool mean_only, Visit visit) {
  TwoPassCovariance<double> acc(width);
  visit([&](const FeatureMatrix& f) {
    require_finite(f);
    acc.add_to_mean(f);
  });
  visit([&](const FeatureMatrix& f) { acc.add_to_covariance(f); });
  const DenseMatrix<double> cov = acc.covariance();
  return mean_only ? mean_only_from_covariance(acc.mean(), cov, acc.count())
                   : pca_from_covariance(acc.mean(), cov, acc.count());
}

/// Where an ASR model reads its input from.
enum class AsrInput { Features, LogMel };

/// ASR network plus everything needed to feed it at evaluation time.
struct AsrBundle {
  std::shared_ptr<AsrModel> model;
  AsrInput input = AsrInput::Features;
  std::optional<FeatureTransform> transform;

  Checkpoint save(const RunConfig& config, std::uint64_t seed, std::size_t steps) const;
  static AsrBundle load(const Checkpoint& checkpoint);
};

/// Transcripts mapped to labels; a symbol outside the vocabulary is a
/// Contract error naming the utterance.
std::vector<std::size_t> encode_transcript(const Vocabulary& vocabulary, const std::string& id, const std::string& text);

}  // namespace contraspeech
