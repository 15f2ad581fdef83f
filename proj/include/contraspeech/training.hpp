#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "contraspeech/adam.hpp"
#include "contraspeech/asr.hpp"
#include "contraspeech/cpc.hpp"
#include "contraspeech/data_io.hpp"
#include "contraspeech/masked.hpp"

namespace contraspeech {

struct TrainOptions {
  std::size_t steps = 200;
  double batch_seconds = 120.0;
  double crop_seconds = 0.0;  // pretraining only; 0 keeps whole utterances
  LrSchedule schedule;        // total_steps is overwritten with `steps`
  std::uint64_t seed = 0;
  std::ostream* log = nullptr;       // tab-separated rows, header first
  std::ostream* progress = nullptr;  // human-readable, every `progress_every` steps
  std::size_t progress_every = 50;
  bool timestamps = false;  // "# started/finished" lines in the log
};

/// One row per update: the batch-mean loss and any per-component means.
struct TrainingHistory {
  std::vector<std::string> columns;  // after "step" and "loss"
  std::vector<double> loss;
  std::vector<std::vector<double>> components;

  /// Mean loss over steps [begin, end).
  double mean_loss(std::size_t begin, std::size_t end) const;
};

/// Duration-budgeted batches drawn epoch after epoch from the "data" stream.
/// Each utterance's loss is scaled by 1 / batch size before backward; one
/// Adam update per batch. Log columns: loss_fwd/loss_bwd for two context
/// networks.
TrainingHistory pretrain_cpc(const CpcModel& model, const std::vector<AudioBuffer>& corpus, const TrainOptions& options);

/// Same loop for the masked objective; log columns contrastive (summed over
/// masked steps), diversity, masked_steps.
TrainingHistory pretrain_masked(const MaskedModel& model, const std::vector<AudioBuffer>& corpus,
                                const TrainOptions& options);

struct AsrExample {
  std::string id;
  FeatureMatrix features;  // [frames x width]
  std::vector<std::size_t> target;
};

struct AsrTrainingResult {
  TrainingHistory history;
  std::size_t skipped = 0;  // utterances whose target cannot fit the output frames
};

/// Skips unalignable utterances (counted in the log); more than half of the
/// corpus unalignable is a Contract error.
AsrTrainingResult train_asr(const AsrModel& model, const std::vector<AsrExample>& corpus, const TrainOptions& options);

/// Greedy decode of every example, returned as symbol strings.
std::vector<std::string> transcribe(const AsrModel& model, const std::vector<FeatureMatrix>& features);

}  // namespace contraspeech
