#include "contraspeech/training.hpp"

#include <chrono>
#include <ctime>
#include <functional>
#include <iomanip>

namespace contraspeech {

namespace {

struct ItemLoss {
  Tensor loss;
  std::vector<double> components;
};

std::string now_string() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Shared update loop: batches by duration, backward per item scaled by
// 1 / batch size, one Adam step per batch.
TrainingHistory run_training(const ParameterSet& params, const std::vector<double>& durations,
                             const TrainOptions& options, std::vector<std::string> columns,
                             const std::function<ItemLoss(std::size_t item, std::size_t step, Rng& data_rng)>& item_loss) {
  require(!durations.empty(), ErrorKind::Config, "training corpus is empty");
  require(options.steps >= 1, ErrorKind::Config, "training needs at least one step");
  LrSchedule schedule = options.schedule;
  schedule.total_steps = options.steps;
  for (const auto& [_, t] : params.items()) t.ensure_grad();
  Adam adam(params, schedule);
  Rng data_rng = make_stream(options.seed, "data");

  TrainingHistory history;
  history.columns = std::move(columns);
  if (options.log) {
    if (options.timestamps) *options.log << "# started\t" << now_string() << '\n';
    *options.log << "step\tloss";
    for (const auto& c : history.columns) *options.log << '\t' << c;
    *options.log << '\n';
  }
  const auto start = std::chrono::steady_clock::now();

  std::vector<std::vector<std::size_t>> batches;
  std::size_t next_batch = 0;
  for (std::size_t step = 0; step < options.steps; ++step) {
    if (next_batch == batches.size()) {
      batches = batch_by_duration(durations, options.batch_seconds, data_rng);
      next_batch = 0;
    }
    const auto& batch = batches[next_batch++];
    const float inv = 1.0f / static_cast<float>(batch.size());
    double total = 0.0;
    std::vector<double> parts(history.columns.size(), 0.0);
    adam.zero_grad();
    for (std::size_t item : batch) {
      ItemLoss l = item_loss(item, step, data_rng);
      total += l.loss.item();
      for (std::size_t c = 0; c < parts.size(); ++c) parts[c] += l.components[c];
      backward(scale(l.loss, inv));
    }
    adam.step();
    total /= static_cast<double>(batch.size());
    for (double& p : parts) p /= static_cast<double>(batch.size());
    history.loss.push_back(total);
    history.components.push_back(parts);

    if (options.log) {
      *options.log << step << '\t' << std::setprecision(7) << total;
      for (double p : parts) *options.log << '\t' << p;
      *options.log << '\n';
    }
    if (options.progress && ((step + 1) % options.progress_every == 0 || step + 1 == options.steps)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      *options.progress << "step " << step + 1 << "/" << options.steps << "  loss " << std::setprecision(5) << total
                        << "  lr " << schedule.at(step);
      if (options.timestamps) *options.progress << "  " << std::fixed << std::setprecision(1) << secs << "s";
      *options.progress << std::defaultfloat << std::endl;
    }
  }
  if (options.log && options.timestamps) *options.log << "# finished\t" << now_string() << '\n';
  return history;
}

Tensor waveform_tensor(const AudioBuffer& audio, double crop_seconds, Rng& rng) {
  const std::size_t n = audio.samples.size();
  const std::size_t crop = crop_seconds > 0 ? static_cast<std::size_t>(crop_seconds * audio.sample_rate) : n;
  if (crop >= n) return Tensor::from({n}, audio.samples);
  const std::size_t offset = uniform_index(rng, n - crop + 1);
  return Tensor::from({crop}, {audio.samples.begin() + offset, audio.samples.begin() + offset + crop});
}

std::vector<double> durations_of(const std::vector<AudioBuffer>& corpus, double crop_seconds) {
  std::vector<double> d;
  for (const auto& a : corpus) d.push_back(crop_seconds > 0 ? std::min(a.duration(), crop_seconds) : a.duration());
  return d;
}

}  // namespace

double TrainingHistory::mean_loss(std::size_t begin, std::size_t end) const {
  end = std::min(end, loss.size());
  require(begin < end, ErrorKind::Contract, "empty step range");
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += loss[i];
  return s / static_cast<double>(end - begin);
}

TrainingHistory pretrain_cpc(const CpcModel& model, const std::vector<AudioBuffer>& corpus, const TrainOptions& options) {
  Rng distractor_rng = make_stream(options.seed, "distractor");
  std::vector<std::string> columns;
  if (model.config().network_count() == 2) columns = {"loss_fwd", "loss_bwd"};
  return run_training(model.parameters(), durations_of(corpus, options.crop_seconds), options, columns,
                      [&](std::size_t item, std::size_t, Rng& data_rng) {
                        const Tensor wave = waveform_tensor(corpus[item], options.crop_seconds, data_rng);
                        CpcLoss l = model.loss(wave, distractor_rng);
                        ItemLoss out{l.total, {}};
                        if (l.per_network.size() == 2) out.components = {l.per_network[0], l.per_network[1]};
                        return out;
                      });
}

TrainingHistory pretrain_masked(const MaskedModel& model, const std::vector<AudioBuffer>& corpus,
                                const TrainOptions& options) {
  Rng mask_rng = make_stream(options.seed, "mask");
  Rng distractor_rng = make_stream(options.seed, "distractor");
  Rng gumbel_rng = make_stream(options.seed, "gumbel");
  return run_training(model.parameters(), durations_of(corpus, options.crop_seconds), options,
                      {"contrastive", "diversity", "masked_steps"},
                      [&](std::size_t item, std::size_t step, Rng& data_rng) {
                        const Tensor wave = waveform_tensor(corpus[item], options.crop_seconds, data_rng);
                        MaskedLoss l = model.loss(wave, step, mask_rng, distractor_rng, gumbel_rng);
                        return ItemLoss{l.total, {l.contrastive, l.diversity, static_cast<double>(l.masked_steps)}};
                      });
}

AsrTrainingResult train_asr(const AsrModel& model, const std::vector<AsrExample>& corpus, const TrainOptions& options) {
  const AsrConfig& cfg = model.config();
  std::vector<std::size_t> usable;
  std::vector<double> durations;
  AsrTrainingResult result;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& ex = corpus[i];
    require(static_cast<std::size_t>(ex.features.cols()) == cfg.input_width, ErrorKind::Contract,
            "utterance " + ex.id + " has feature width " + std::to_string(ex.features.cols()) + ", model expects " +
                std::to_string(cfg.input_width));
    const std::size_t frames = static_cast<std::size_t>(ex.features.rows());
    if (frames == 0 || ctc_minimum_frames(ex.target) > cfg.output_length(frames)) {
      ++result.skipped;
      continue;
    }
    usable.push_back(i);
    durations.push_back(static_cast<double>(frames) / cfg.feature_rate);
  }
  require(!corpus.empty(), ErrorKind::Config, "ASR training corpus is empty");
  require(2 * result.skipped <= corpus.size(), ErrorKind::Contract,
          std::to_string(result.skipped) + " of " + std::to_string(corpus.size()) +
              " utterances cannot be aligned at this frame rate (more than half)");
  if (options.log) *options.log << "# skipped_unalignable\t" << result.skipped << '\n';

  result.history = run_training(model.parameters(), durations, options, {}, [&](std::size_t item, std::size_t, Rng&) {
    const auto& ex = corpus[usable[item]];
    return ItemLoss{ctc_loss(model.forward(Tensor::from_matrix(ex.features)), ex.target), {}};
  });
  return result;
}

std::vector<std::string> transcribe(const AsrModel& model, const std::vector<FeatureMatrix>& features) {
  NoGradGuard guard;
  std::vector<std::string> out;
  out.reserve(features.size());
  for (const auto& f : features) {
    const Tensor lp = model.forward(Tensor::from_matrix(f));
    out.push_back(model.config().vocabulary.decode(greedy_decode(lp.matrix())));
  }
  return out;
}

}  // namespace contraspeech
