#include "contraspeech/pipeline.hpp"

#include <set>
#include <sstream>

namespace contraspeech {

namespace {

constexpr double kSampleRate = 16000.0;

std::string config_key(const std::string& key) { return "config." + key; }

Tensor vector_tensor(const DenseVector<double>& v) {
  Tensor t = Tensor::zeros({static_cast<std::size_t>(v.size())});
  for (Eigen::Index i = 0; i < v.size(); ++i) t[i] = static_cast<float>(v(i));
  return t;
}

DenseVector<double> tensor_vector(const Tensor& t) {
  DenseVector<double> v(static_cast<Eigen::Index>(t.numel()));
  for (std::size_t i = 0; i < t.numel(); ++i) v(static_cast<Eigen::Index>(i)) = t[i];
  return v;
}

std::size_t meta_count(const Checkpoint& ck, const std::string& key) {
  try {
    return std::stoul(ck.get(key));
  } catch (const std::logic_error&) {
    fail(ErrorKind::Format, "checkpoint metadata '" + key + "' is not a count");
  }
}

double meta_real(const Checkpoint& ck, const std::string& key) {
  try {
    return std::stod(ck.get(key));
  } catch (const std::logic_error&) {
    fail(ErrorKind::Format, "checkpoint metadata '" + key + "' is not a number");
  }
}

std::string format_real(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

void store_config(Checkpoint& checkpoint, const RunConfig& config) {
  for (const auto& k : config_registry()) checkpoint.set(config_key(k.name), config.get(k.name));
}

RunConfig stored_config(const Checkpoint& checkpoint) {
  RunConfig config;
  for (const auto& [key, value] : checkpoint.meta)
    if (key.rfind("config.", 0) == 0) config.set(key.substr(7), value);
  return config;
}

std::vector<AudioBuffer> load_waveforms(const Manifest& manifest) {
  std::vector<AudioBuffer> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    out.push_back(read_wav(e.path));
    require(out.back().sample_rate == kSampleRate, ErrorKind::Format,
            e.path.string() + ": expected 16 kHz audio, got " + std::to_string(out.back().sample_rate) + " Hz");
  }
  return out;
}

Vocabulary infer_vocabulary(const std::vector<std::string>& transcripts) {
  std::set<char> chars;
  for (const auto& t : transcripts) chars.insert(t.begin(), t.end());
  require(!chars.empty(), ErrorKind::Config, "transcripts contain no symbols");
  return Vocabulary(std::string(chars.begin(), chars.end()));
}

std::string to_string(Objective objective) { return objective == Objective::Cpc ? "cpc" : "masked"; }

Objective objective_from_string(const std::string& name) {
  if (name == "cpc") return Objective::Cpc;
  if (name == "masked") return Objective::Masked;
  fail(ErrorKind::Argument, "unknown objective '" + name + "' (cpc or masked)");
}

Pretrained::Pretrained(Objective objective, const RunConfig& config, std::uint64_t seed)
    : objective_(objective), config_(config) {
  Rng init = make_stream(seed, "init");
  if (objective == Objective::Cpc)
    cpc_ = std::make_shared<CpcModel>(cpc_config_from(config), init);
  else
    masked_ = std::make_shared<MaskedModel>(masked_config_from(config), init);
}

Pretrained Pretrained::load(const Checkpoint& checkpoint) {
  require(checkpoint.get("kind") == "pretrain", ErrorKind::Contract,
          "checkpoint holds a '" + checkpoint.get("kind") + "' model, not a pretrained one");
  Pretrained p(objective_from_string(checkpoint.get("objective")), stored_config(checkpoint),
               meta_count(checkpoint, "seed"));
  checkpoint.load_parameters(p.parameters());
  require(meta_count(checkpoint, "feature_width") == p.feature_width(), ErrorKind::Contract,
          "checkpoint metadata gives feature width " + checkpoint.get("feature_width") + " but its config builds " +
              std::to_string(p.feature_width()));
  return p;
}

std::size_t Pretrained::feature_width() const {
  return cpc_ ? cpc_->config().feature_width() : masked_->config().latent_width();
}

double Pretrained::feature_rate() const {
  const std::size_t stride = cpc_ ? cpc_->config().encoder.total_stride() : masked_->config().encoder.total_stride();
  return kSampleRate / static_cast<double>(stride);
}

ParameterSet Pretrained::parameters() const { return cpc_ ? cpc_->parameters() : masked_->parameters(); }

TrainingHistory Pretrained::train(const std::vector<AudioBuffer>& corpus, const TrainOptions& options) const {
  return cpc_ ? pretrain_cpc(*cpc_, corpus, options) : pretrain_masked(*masked_, corpus, options);
}

FeatureMatrix Pretrained::extract(const AudioBuffer& audio) const {
  const Tensor wave = Tensor::from({audio.samples.size()}, audio.samples);
  const Tensor f = cpc_ ? cpc_->extract(wave) : masked_->extract(wave);
  return f.matrix();
}

Checkpoint Pretrained::save(std::uint64_t seed, std::size_t steps) const {
  Checkpoint ck;
  ck.set("kind", "pretrain");
  ck.set("objective", to_string(objective_));
  ck.set("seed", std::to_string(seed));
  ck.set("steps", std::to_string(steps));
  ck.set("feature_width", std::to_string(feature_width()));
  ck.set("feature_rate", format_real(feature_rate()));
  store_config(ck, config_);
  ck.add_parameters(parameters());
  return ck;
}

FeatureMatrix FeatureTransform::apply(const FeatureMatrix& features) const {
  return pca_transform(features, model, whiten, epsilon).cast<float>();
}

void store_transform(Checkpoint& ck, const FeatureTransform& t, const std::string& prefix) {
  ck.set(prefix + "whiten", t.whiten ? "true" : "false");
  ck.set(prefix + "epsilon", format_real(t.epsilon));
  ck.set(prefix + "samples", std::to_string(t.model.samples));
  ck.set(prefix + "degenerate", t.model.degenerate ? "true" : "false");
  ck.tensors.emplace_back(prefix + "mean", vector_tensor(t.model.mean));
  const auto d = static_cast<std::size_t>(t.model.dim());
  Tensor comps = Tensor::zeros({d, d});
  comps.matrix() = t.model.components.cast<float>();
  ck.tensors.emplace_back(prefix + "components", comps);
  ck.tensors.emplace_back(prefix + "variance", vector_tensor(t.model.explained_variance));
  ck.tensors.emplace_back(prefix + "ratio", vector_tensor(t.model.explained_variance_ratio));
}

std::optional<FeatureTransform> load_transform(const Checkpoint& ck, const std::string& prefix) {
  if (!ck.has(prefix + "whiten")) return std::nullopt;
  FeatureTransform t;
  t.whiten = ck.get(prefix + "whiten") == "true";
  t.epsilon = meta_real(ck, prefix + "epsilon");
  t.model.samples = meta_count(ck, prefix + "samples");
  t.model.degenerate = ck.get(prefix + "degenerate") == "true";
  t.model.mean = tensor_vector(ck.tensor(prefix + "mean"));
  const Tensor comps = ck.tensor(prefix + "components");
  const auto d = static_cast<std::size_t>(t.model.mean.size());
  require(comps.shape() == Shape{d, d}, ErrorKind::Format, "PCA components do not match the mean width");
  t.model.components = comps.matrix().cast<double>();
  t.model.explained_variance = tensor_vector(ck.tensor(prefix + "variance"));
  t.model.explained_variance_ratio = tensor_vector(ck.tensor(prefix + "ratio"));
  require(t.model.explained_variance.size() == t.model.mean.size() &&
              t.model.explained_variance_ratio.size() == t.model.mean.size(),
          ErrorKind::Format, "PCA variance tables do not match the mean width");
  return t;
}

Checkpoint AsrBundle::save(const RunConfig& config, std::uint64_t seed, std::size_t steps) const {
  const AsrConfig& c = model->config();
  Checkpoint ck;
  ck.set("kind", "asr");
  ck.set("input", input == AsrInput::LogMel ? "logmel" : "features");
  ck.set("symbols", c.vocabulary.symbols());
  ck.set("input_width", std::to_string(c.input_width));
  ck.set("feature_rate", format_real(c.feature_rate));
  ck.set("seed", std::to_string(seed));
  ck.set("steps", std::to_string(steps));
  store_config(ck, config);
  ck.add_parameters(model->parameters());
  if (transform) store_transform(ck, *transform, "pca.");
  return ck;
}

AsrBundle AsrBundle::load(const Checkpoint& ck) {
  require(ck.get("kind") == "asr", ErrorKind::Contract, "checkpoint holds a '" + ck.get("kind") + "' model, not ASR");
  AsrBundle b;
  const std::string input = ck.get("input");
  require(input == "logmel" || input == "features", ErrorKind::Format, "unknown ASR input kind '" + input + "'");
  b.input = input == "logmel" ? AsrInput::LogMel : AsrInput::Features;
  const AsrConfig cfg = asr_config_from(stored_config(ck), meta_count(ck, "input_width"), meta_real(ck, "feature_rate"),
                                        Vocabulary(ck.get("symbols")));
  Rng init = make_stream(meta_count(ck, "seed"), "init");
  b.model = std::make_shared<AsrModel>(cfg, init);
  ck.load_parameters(b.model->parameters(), "asr.");
  b.transform = load_transform(ck, "pca.");
  if (b.transform)
    require(b.transform->model.dim() == cfg.input_width, ErrorKind::Contract,
            "embedded PCA width does not match the ASR input width");
  return b;
}

std::vector<std::size_t> encode_transcript(const Vocabulary& vocabulary, const std::string& id, const std::string& text) {
  try {
    return vocabulary.encode(text);
  } catch (const Error& e) {
    fail(ErrorKind::Contract, "utterance " + id + ": " + e.what());
  }
}

}  // namespace contraspeech
