#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "contraspeech/rng.hpp"
#include "contraspeech/tensor.hpp"

namespace contraspeech {

/// Frames x features, row-major.
using FeatureMatrix = RowMatrixXf;

struct AudioBuffer {
  std::vector<float> samples;  // in [-1, 1]
  std::uint32_t sample_rate = 16000;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// RIFF/WAVE, 16-bit signed PCM, mono. Samples are scaled by 1/32768.
AudioBuffer read_wav(const std::filesystem::path& path);
/// Inverse of read_wav: values are rounded to the nearest 16-bit level and clipped.
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio);

struct MelConfig {
  std::size_t num_filters = 80;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t fft_size = 512;
  float floor = 1e-10f;

  std::size_t window_samples(std::uint32_t rate) const;
  std::size_t hop_samples(std::uint32_t rate) const;
};

/// Triangular mel filters over the rfft bins, spanning 0 Hz to Nyquist.
/// Rows are filters, columns are bins 0..fft_size/2.
RowMatrixXf mel_filterbank(const MelConfig& cfg, std::uint32_t sample_rate);
/// Center frequency (Hz) of each mel filter.
std::vector<double> mel_center_frequencies(const MelConfig& cfg, std::uint32_t sample_rate);

/// Hann-windowed magnitude spectrum -> mel filters -> max(., floor) -> ln.
/// Frame count is floor((T - window) / hop) + 1.
FeatureMatrix log_mel(const AudioBuffer& audio, const MelConfig& cfg = {});

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;  // absolute once loaded
  double duration = 0.0;       // seconds
  std::string transcript;
};

/// "id<TAB>path<TAB>duration<TAB>transcript" per line; relative paths are
/// resolved against the manifest's directory.
struct Manifest {
  std::vector<ManifestEntry> entries;

  double total_duration() const;
};

Manifest read_manifest(const std::filesystem::path& path);
/// Writes paths relative to the manifest's directory when possible.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Random-order packing into batches whose durations sum to <= budget.
/// Every item appears in exactly one batch.
std::vector<std::vector<std::size_t>> batch_by_duration(const std::vector<double>& durations, double budget, Rng& rng);
std::vector<std::vector<std::size_t>> batch_by_duration(const Manifest& manifest, double budget, Rng& rng);

struct SynthOptions {
  std::size_t num_utts = 50;
  std::size_t tokens_per_utt = 8;
  std::size_t vocab_size = 5;
  std::uint64_t seed = 0;
  std::uint32_t sample_rate = 16000;
  std::string id_prefix = "utt";
};

/// Symbols used for synthetic tokens: token v is written as letter 'a' + v.
std::string synth_alphabet(std::size_t vocab_size);

/// Nominal duration of token v in seconds (120-200 ms before jitter).
double synth_token_duration(std::size_t token, std::size_t vocab_size);

/// Waveform of a single token with duration jitter factor `stretch`.
std::vector<float> synth_token(std::size_t token, std::size_t vocab_size, double stretch, std::uint32_t sample_rate,
                               Rng& rng);

struct SynthUtterance {
  std::string id;
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> token_lengths;  // samples per token
  AudioBuffer audio;
};

/// Deterministic per seed.
std::vector<SynthUtterance> synth_utterances(const SynthOptions& options);

/// Writes WAVs and manifest.tsv into `out_dir`; returns the manifest.
Manifest synth_corpus(const SynthOptions& options, const std::filesystem::path& out_dir);

}  // namespace contraspeech
