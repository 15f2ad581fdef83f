#include "contraspeech/data_io.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace contraspeech {

namespace fs = std::filesystem;

namespace {

std::uint32_t read_u32(const std::vector<char>& b, std::size_t at) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[at])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 3])) << 24;
}

std::uint16_t read_u16(const std::vector<char>& b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                    static_cast<unsigned char>(b[at + 1]) << 8);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

AudioBuffer read_wav(const fs::path& path) {
  const std::vector<char> b = slurp(path);
  const std::string where = path.string() + ": ";
  require(b.size() >= 12 && std::memcmp(b.data(), "RIFF", 4) == 0, ErrorKind::Format, where + "missing RIFF magic");
  require(std::memcmp(b.data() + 8, "WAVE", 4) == 0, ErrorKind::Format, where + "RIFF form type is not WAVE");
  AudioBuffer audio;
  bool have_fmt = false, have_data = false;
  std::size_t at = 12;
  while (at + 8 <= b.size()) {
    const std::string id(b.data() + at, 4);
    const std::uint32_t size = read_u32(b, at + 4);
    const std::size_t body = at + 8;
    require(body + size <= b.size(), ErrorKind::Format,
            where + "chunk '" + id + "' declares " + std::to_string(size) + " bytes but only " +
                std::to_string(b.size() - body) + " remain (truncated file)");
    if (id == "fmt ") {
      require(size >= 16, ErrorKind::Format, where + "fmt chunk too small");
      const std::uint16_t format = read_u16(b, body);
      const std::uint16_t channels = read_u16(b, body + 2);
      const std::uint32_t rate = read_u32(b, body + 4);
      const std::uint16_t bits = read_u16(b, body + 14);
      require(format == 1, ErrorKind::Format, where + "audio_format " + std::to_string(format) + " is not PCM (1)");
      require(channels == 1, ErrorKind::Format, where + "num_channels " + std::to_string(channels) + " is not mono");
      require(bits == 16, ErrorKind::Format, where + "bits_per_sample " + std::to_string(bits) + " is not 16");
      require(rate > 0, ErrorKind::Format, where + "sample_rate is zero");
      audio.sample_rate = rate;
      have_fmt = true;
    } else if (id == "data") {
      require(have_fmt, ErrorKind::Format, where + "data chunk precedes fmt chunk");
      require(size % 2 == 0, ErrorKind::Format, where + "data chunk size is not a whole number of samples");
      audio.samples.resize(size / 2);
      for (std::size_t i = 0; i < audio.samples.size(); ++i)
        audio.samples[i] = static_cast<float>(static_cast<std::int16_t>(read_u16(b, body + 2 * i))) / 32768.0f;
      have_data = true;
    }
    at = body + size + (size & 1);
  }
  require(have_fmt, ErrorKind::Format, where + "no fmt chunk");
  require(have_data, ErrorKind::Format, where + "no data chunk");
  return audio;
}

void write_wav(const fs::path& path, const AudioBuffer& audio) {
  const auto data_bytes = static_cast<std::uint32_t>(audio.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, audio.sample_rate);
  put_u32(out, audio.sample_rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (float s : audio.samples) {
    const long q = std::lround(static_cast<double>(s) * 32768.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L))));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail(ErrorKind::Io, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Log mel

std::size_t MelConfig::window_samples(std::uint32_t rate) const {
  return static_cast<std::size_t>(std::lround(window_ms * rate / 1000.0));
}

std::size_t MelConfig::hop_samples(std::uint32_t rate) const {
  return static_cast<std::size_t>(std::lround(hop_ms * rate / 1000.0));
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_edges(const MelConfig& cfg, std::uint32_t rate) {
  const double top = hz_to_mel(rate / 2.0);
  std::vector<double> edges(cfg.num_filters + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(cfg.num_filters + 1));
  return edges;
}

}  // namespace

std::vector<double> mel_center_frequencies(const MelConfig& cfg, std::uint32_t sample_rate) {
  const auto edges = mel_edges(cfg, sample_rate);
  return std::vector<double>(edges.begin() + 1, edges.end() - 1);
}

RowMatrixXf mel_filterbank(const MelConfig& cfg, std::uint32_t sample_rate) {
  const std::size_t bins = cfg.fft_size / 2 + 1;
  const auto edges = mel_edges(cfg, sample_rate);
  RowMatrixXf fb = RowMatrixXf::Zero(cfg.num_filters, bins);
  for (std::size_t m = 0; m < cfg.num_filters; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(cfg.fft_size);
      double w = 0.0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      fb(m, k) = static_cast<float>(w);
    }
  }
  return fb;
}

FeatureMatrix log_mel(const AudioBuffer& audio, const MelConfig& cfg) {
  const std::size_t window = cfg.window_samples(audio.sample_rate);
  const std::size_t hop = cfg.hop_samples(audio.sample_rate);
  require(hop >= 1 && hop <= window, ErrorKind::Config, "mel hop must be in [1, window]");
  require(window <= cfg.fft_size, ErrorKind::Config, "mel window longer than the FFT size");
  require(audio.samples.size() >= window, ErrorKind::InputTooShort,
          "audio of " + std::to_string(audio.samples.size()) + " samples is shorter than one " +
              std::to_string(window) + "-sample window");
  const std::size_t frames = (audio.samples.size() - window) / hop + 1;
  const std::size_t bins = cfg.fft_size / 2 + 1;
  const RowMatrixXf fb = mel_filterbank(cfg, audio.sample_rate);

  std::vector<float> hann(window);
  for (std::size_t i = 0; i < window; ++i)
    hann[i] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(window)));

  Eigen::FFT<float> fft;
  std::vector<float> frame(cfg.fft_size, 0.0f);
  std::vector<std::complex<float>> spectrum;
  RowMatrixXf magnitude(frames, bins);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(frame.begin(), frame.end(), 0.0f);
    for (std::size_t i = 0; i < window; ++i) frame[i] = audio.samples[t * hop + i] * hann[i];
    fft.fwd(spectrum, frame);
    for (std::size_t k = 0; k < bins; ++k) magnitude(t, k) = std::abs(spectrum[k]);
  }
  FeatureMatrix out = magnitude * fb.transpose();
  out = out.array().max(cfg.floor).log().matrix();
  return out;
}

// ---------------------------------------------------------------------------
// Manifests and batching

double Manifest::total_duration() const {
  double total = 0.0;
  for (const auto& e : entries) total += e.duration;
  return total;
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open manifest " + path.string());
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
      if (i == line.size() || line[i] == '\t') {
        fields.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    require(fields.size() == 4, ErrorKind::Format, where + "expected 4 tab-separated fields");
    ManifestEntry e;
    e.id = fields[0];
    e.path = fs::path(fields[1]).is_absolute() ? fs::path(fields[1]) : base / fields[1];
    try {
      e.duration = std::stod(fields[2]);
    } catch (const std::exception&) {
      fail(ErrorKind::Format, where + "bad duration '" + fields[2] + "'");
    }
    require(e.duration > 0.0, ErrorKind::Format, where + "duration must be positive");
    require(fs::exists(e.path), ErrorKind::Io, where + "audio file not found: " + e.path.string());
    e.transcript = fields[3];
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write manifest " + path.string());
  for (const auto& e : manifest.entries) {
    fs::path p = e.path;
    if (p.is_absolute() || p.has_parent_path()) {
      std::error_code ec;
      const fs::path rel = fs::relative(e.path, base, ec);
      if (!ec && !rel.empty()) p = rel;
    }
    out << e.id << '\t' << p.generic_string() << '\t' << std::fixed << std::setprecision(6) << e.duration << '\t'
        << e.transcript << '\n';
  }
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

std::vector<std::vector<std::size_t>> batch_by_duration(const std::vector<double>& durations, double budget,
                                                        Rng& rng) {
  for (std::size_t i = 0; i < durations.size(); ++i)
    require(durations[i] <= budget, ErrorKind::Config,
            "item " + std::to_string(i) + " (" + std::to_string(durations[i]) + " s) exceeds the batch budget of " +
                std::to_string(budget) + " s");
  std::vector<std::size_t> order(durations.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  std::vector<std::vector<std::size_t>> batches;
  double current = 0.0;
  for (std::size_t idx : order) {
    if (batches.empty() || current + durations[idx] > budget) {
      batches.emplace_back();
      current = 0.0;
    }
    batches.back().push_back(idx);
    current += durations[idx];
  }
  return batches;
}

std::vector<std::vector<std::size_t>> batch_by_duration(const Manifest& manifest, double budget, Rng& rng) {
  std::vector<double> durations;
  for (const auto& e : manifest.entries) {
    require(e.duration <= budget, ErrorKind::Config,
            "utterance " + e.id + " (" + std::to_string(e.duration) + " s) exceeds the batch budget of " +
                std::to_string(budget) + " s");
    durations.push_back(e.duration);
  }
  return batch_by_duration(durations, budget, rng);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

std::string synth_alphabet(std::size_t vocab_size) {
  std::string s;
  for (std::size_t v = 0; v < vocab_size; ++v) s.push_back(static_cast<char>('a' + v));
  return s;
}

double synth_token_duration(std::size_t token, std::size_t vocab_size) {
  if (vocab_size <= 1) return 0.16;
  return 0.12 + 0.08 * static_cast<double>(token) / static_cast<double>(vocab_size - 1);
}

std::vector<float> synth_token(std::size_t token, std::size_t vocab_size, double stretch, std::uint32_t sample_rate,
                               Rng& rng) {
  const double duration = synth_token_duration(token, vocab_size) * stretch;
  const auto n = static_cast<std::size_t>(std::lround(duration * sample_rate));
  // Fundamentals spaced by 0.6 octaves from 110 Hz; harmonic mix alternates
  // so neighbouring tokens differ in timbre as well as pitch.
  const double f0 = 110.0 * std::pow(2.0, 0.6 * static_cast<double>(token));
  const double h2 = token % 2 ? 0.8 : 0.3;
  const double h3 = token % 3 == 0 ? 0.5 : 0.15;
  const std::size_t ramp = std::min<std::size_t>(n / 2, sample_rate * 15 / 1000);
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    double v = std::sin(2 * M_PI * f0 * t) + h2 * std::sin(2 * M_PI * 2 * f0 * t) + h3 * std::sin(2 * M_PI * 3 * f0 * t);
    v *= 0.4 / (1.0 + h2 + h3);
    double env = 1.0;
    if (i < ramp) env = 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(i) / static_cast<double>(ramp));
    else if (i >= n - ramp) env = 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(n - 1 - i) / static_cast<double>(ramp));
    out[i] = static_cast<float>(v * env + 0.01 * normal(rng));
  }
  return out;
}

std::vector<SynthUtterance> synth_utterances(const SynthOptions& options) {
  require(options.vocab_size >= 1 && options.vocab_size <= 8, ErrorKind::Argument,
          "synthetic vocabulary size must be in [1, 8], got " + std::to_string(options.vocab_size));
  require(options.tokens_per_utt >= 1, ErrorKind::Argument, "need at least one token per utterance");
  Rng rng = make_stream(options.seed, "synth");
  std::vector<SynthUtterance> utts;
  for (std::size_t u = 0; u < options.num_utts; ++u) {
    SynthUtterance utt;
    std::ostringstream id;
    id << options.id_prefix << '_' << std::setw(5) << std::setfill('0') << u;
    utt.id = id.str();
    utt.audio.sample_rate = options.sample_rate;
    for (std::size_t k = 0; k < options.tokens_per_utt; ++k) {
      const std::size_t token = uniform_index(rng, options.vocab_size);
      const double stretch = 0.9 + 0.2 * uniform01(rng);
      const auto wave = synth_token(token, options.vocab_size, stretch, options.sample_rate, rng);
      utt.tokens.push_back(token);
      utt.token_lengths.push_back(wave.size());
      utt.audio.samples.insert(utt.audio.samples.end(), wave.begin(), wave.end());
    }
    for (float& s : utt.audio.samples) s = std::clamp(s, -1.0f, 32767.0f / 32768.0f);
    utts.push_back(std::move(utt));
  }
  return utts;
}

Manifest synth_corpus(const SynthOptions& options, const fs::path& out_dir) {
  const auto utts = synth_utterances(options);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) fail(ErrorKind::Io, "cannot create directory " + out_dir.string());
  const std::string alphabet = synth_alphabet(options.vocab_size);
  Manifest m;
  for (const auto& u : utts) {
    ManifestEntry e;
    e.id = u.id;
    e.path = out_dir / (u.id + ".wav");
    e.duration = u.audio.duration();
    for (std::size_t t : u.tokens) e.transcript.push_back(alphabet[t]);
    write_wav(e.path, u.audio);
    m.entries.push_back(std::move(e));
  }
  write_manifest(out_dir / "manifest.tsv", m);
  return m;
}

}  // namespace contraspeech
