// Command-line front end: synth -> pretrain -> extract -> pca -> train-asr -> eval.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <thread>

#include "contraspeech/pipeline.hpp"

using namespace contraspeech;
namespace fs = std::filesystem;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Argument: return 2;
    case ErrorKind::Io:
    case ErrorKind::Format: return 3;
    default: return 4;
  }
}

// Worker count: hardware threads, capped by CONTRASPEECH_THREADS.
std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CONTRASPEECH_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    require(end != env && *end == '\0' && cap >= 1, ErrorKind::Argument,
            std::string("CONTRASPEECH_THREADS must be a positive integer, got '") + env + "'");
    n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
  }
  return n;
}

// Runs fn(i) for i in [0, n) on up to worker_count() threads. Results must be
// written to per-index slots; the first error is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn fn) {
  const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w)
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Common {
  std::uint64_t seed = 0;
  bool no_timestamps = false;
  std::string config_path;
  std::vector<std::string> overrides;
  bool full = false;
};

void add_common(CLI::App* app, Common& c, bool with_config = true) {
  app->add_option("--seed", c.seed, "seed for every random stream")->capture_default_str();
  app->add_flag("--no-timestamps", c.no_timestamps, "omit wall-clock lines from logs and progress");
  if (!with_config) return;
  app->add_option("--config", c.config_path, "key=value config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "override one config key (key=value); repeatable");
  app->add_flag("--full", c.full, "start from the full-size presets instead of desk scale");
}

RunConfig build_config(const Common& c) {
  RunConfig config;
  if (c.full) apply_preset(config, "full");
  // keys named in the file override the preset; the rest keep it
  if (!c.config_path.empty()) config.update_from_file(c.config_path);
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    require(eq != std::string::npos, ErrorKind::Argument, "--set expects key=value, got '" + o + "'");
    try {
      config.set(o.substr(0, eq), o.substr(eq + 1));
    } catch (const Error& e) {
      fail(ErrorKind::Argument, e.what());
    }
  }
  return config;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  return out;
}

std::map<std::string, std::string> transcripts_by_id(const Manifest& m) {
  std::map<std::string, std::string> out;
  for (const auto& e : m.entries) out[e.id] = e.transcript;
  return out;
}

// Utterance inputs for ASR training or evaluation, in a fixed order.
struct AsrData {
  std::vector<std::string> ids, transcripts;
  std::vector<FeatureMatrix> features;
  double rate = 100.0;
};

AsrData load_asr_inputs(const std::string& features_index, const std::string& logmel_manifest,
                        const Manifest& transcripts) {
  AsrData data;
  const auto refs = transcripts_by_id(transcripts);
  if (!logmel_manifest.empty()) {
    const Manifest m = read_manifest(logmel_manifest);
    data.features.resize(m.entries.size());
    parallel_for(m.entries.size(), [&](std::size_t i) { data.features[i] = log_mel(read_wav(m.entries[i].path)); });
    for (const auto& e : m.entries) {
      const auto it = refs.find(e.id);
      require(it != refs.end(), ErrorKind::Contract, "no transcript for utterance " + e.id);
      data.ids.push_back(e.id);
      data.transcripts.push_back(it->second);
    }
    data.rate = 1000.0 / MelConfig{}.hop_ms;
    return data;
  }
  const FeatureIndex index = read_feature_index(features_index);
  require(!index.entries.empty(), ErrorKind::Contract, "feature index " + features_index + " is empty");
  data.rate = index.rate;
  data.features.resize(index.entries.size());
  parallel_for(index.entries.size(), [&](std::size_t i) {
    FeatureFile f = read_features(index.entries[i].path);
    require(f.id == index.entries[i].id && static_cast<std::size_t>(f.values.rows()) == index.entries[i].rows,
            ErrorKind::Contract, index.entries[i].path.string() + " does not match its index entry");
    data.features[i] = std::move(f.values);
  });
  for (const auto& e : index.entries) {
    const auto it = refs.find(e.id);
    require(it != refs.end(), ErrorKind::Contract, "no transcript for utterance " + e.id);
    data.ids.push_back(e.id);
    data.transcripts.push_back(it->second);
  }
  return data;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t utts = 50, vocab = 5, tokens = 8;
  std::string prefix = "utt";
  std::string out;
  Common common;
};

int cmd_synth(const SynthArgs& a) {
  SynthOptions o;
  o.num_utts = a.utts;
  o.vocab_size = a.vocab;
  o.tokens_per_utt = a.tokens;
  o.seed = a.common.seed;
  o.id_prefix = a.prefix;
  fs::create_directories(a.out);
  const Manifest m = synth_corpus(o, a.out);
  std::cout << (fs::path(a.out) / "manifest.tsv").string() << '\n'
            << "utterances\t" << m.entries.size() << '\n'
            << "total_seconds\t" << std::fixed << std::setprecision(3) << m.total_duration() << '\n';
  return 0;
}

struct PretrainArgs {
  std::string manifest, out, objective = "cpc";
  bool bidirectional = false;
  Common common;
};

int cmd_pretrain(const PretrainArgs& a) {
  RunConfig config = build_config(a.common);
  if (a.bidirectional) config.set("context.mode", "bi");
  const Objective objective = objective_from_string(a.objective);
  require(!(a.bidirectional && objective == Objective::Masked), ErrorKind::Argument,
          "--bidirectional applies to the cpc objective only");
  const Manifest manifest = read_manifest(a.manifest);
  require(!manifest.entries.empty(), ErrorKind::Config, "manifest " + a.manifest + " is empty");
  const auto corpus = load_waveforms(manifest);

  const Pretrained model(objective, config, a.common.seed);
  std::ofstream log = open_output(a.out + ".log");
  TrainOptions o;
  o.steps = config.count("train.steps");
  o.batch_seconds = config.real("train.batch_seconds");
  o.crop_seconds = config.real("train.crop_seconds");
  o.schedule = schedule_from(config, "train");
  o.seed = a.common.seed;
  o.log = &log;
  o.progress = &std::cerr;
  o.timestamps = !a.common.no_timestamps;
  const auto history = model.train(corpus, o);
  write_checkpoint(a.out, model.save(a.common.seed, o.steps));
  std::cout << a.out << '\n'
            << "final_loss\t" << history.mean_loss(history.loss.size() - std::min<std::size_t>(20, history.loss.size()),
                                                   history.loss.size())
            << '\n';
  return 0;
}

struct ExtractArgs {
  std::string checkpoint, manifest, out;
  Common common;
};

int cmd_extract(const ExtractArgs& a) {
  const Pretrained model = Pretrained::load(read_checkpoint(a.checkpoint));
  const Manifest manifest = read_manifest(a.manifest);
  fs::create_directories(a.out);
  FeatureIndex index;
  index.rate = model.feature_rate();
  index.entries.resize(manifest.entries.size());
  parallel_for(manifest.entries.size(), [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    FeatureFile f{e.id, model.extract(read_wav(e.path))};
    require(static_cast<std::size_t>(f.values.cols()) == model.feature_width(), ErrorKind::Contract,
            "extracted width does not match the checkpoint");
    const fs::path path = fs::path(a.out) / (e.id + ".feat");
    write_features(path, f);
    index.entries[i] = {e.id, path, static_cast<std::size_t>(f.values.rows())};
  });
  const fs::path index_path = fs::path(a.out) / "index.tsv";
  write_feature_index(index_path, index);
  std::cout << index_path.string() << '\n'
            << "utterances\t" << index.entries.size() << '\n'
            << "width\t" << model.feature_width() << '\n'
            << "rate\t" << index.rate << '\n';
  return 0;
}

struct PcaArgs {
  std::string index, out, curve;
  double threshold = 0.95, epsilon = 1e-8;
  bool whiten = false, mean_only = false;
  Common common;
};

int cmd_pca(const PcaArgs& a) {
  const FeatureIndex index = read_feature_index(a.index);
  require(!index.entries.empty(), ErrorKind::Contract, "feature index " + a.index + " is empty");
  const std::size_t width = static_cast<std::size_t>(read_features(index.entries.front().path).values.cols());
  FeatureTransform t;
  t.whiten = a.whiten;
  t.epsilon = a.epsilon;
  t.model = fit_streaming(width, a.mean_only, [&](const auto& fn) {
    for (const auto& e : index.entries) fn(read_features(e.path).values);
  });
  if (t.model.degenerate)
    std::cerr << "warning: features have zero total variance; ratios set to 1/D and the transform only centers\n";
  Checkpoint ck;
  ck.set("kind", "pca");
  ck.set("mean_only", a.mean_only ? "true" : "false");
  store_transform(ck, t, "");
  write_checkpoint(a.out, ck);

  const std::string curve_path = a.curve.empty() ? a.out + ".curve.tsv" : a.curve;
  std::ofstream curve = open_output(curve_path);
  curve << std::setprecision(9);
  for (const auto& [m, r] : explained_variance_curve(t.model.explained_variance_ratio)) curve << m << '\t' << r << '\n';
  std::cout << a.out << '\n'
            << "frames\t" << t.model.samples << '\n'
            << "width\t" << width << '\n'
            << "linear_dimensionality\t" << linear_dimensionality(t.model, a.threshold) << "\tat\t" << a.threshold
            << '\n'
            << "curve\t" << curve_path << '\n';
  return 0;
}

struct TrainAsrArgs {
  std::string features, logmel, manifest, pca_model, out;
  Common common;
};

int cmd_train_asr(const TrainAsrArgs& a) {
  const RunConfig config = build_config(a.common);
  const Manifest refs = read_manifest(a.manifest);
  AsrData data = load_asr_inputs(a.features, a.logmel, refs);

  AsrBundle bundle;
  bundle.input = a.logmel.empty() ? AsrInput::Features : AsrInput::LogMel;
  if (!a.pca_model.empty()) {
    const Checkpoint pca = read_checkpoint(a.pca_model);
    require(pca.get("kind") == "pca", ErrorKind::Contract, a.pca_model + " is not a PCA model");
    bundle.transform = load_transform(pca, "");
  }
  const Vocabulary vocab =
      config.get("asr.symbols").empty() ? infer_vocabulary(data.transcripts) : Vocabulary(config.get("asr.symbols"));
  std::vector<AsrExample> corpus;
  for (std::size_t i = 0; i < data.ids.size(); ++i) {
    FeatureMatrix f = bundle.transform ? bundle.transform->apply(data.features[i]) : std::move(data.features[i]);
    corpus.push_back({data.ids[i], std::move(f), encode_transcript(vocab, data.ids[i], data.transcripts[i])});
  }
  const std::size_t width = static_cast<std::size_t>(corpus.front().features.cols());
  Rng init = make_stream(a.common.seed, "init");
  bundle.model = std::make_shared<AsrModel>(asr_config_from(config, width, data.rate, vocab), init);

  std::ofstream log = open_output(a.out + ".log");
  TrainOptions o;
  o.steps = config.count("asr.steps");
  o.batch_seconds = config.real("asr.batch_seconds");
  o.schedule = schedule_from(config, "asr");
  o.seed = a.common.seed;
  o.log = &log;
  o.progress = &std::cerr;
  o.timestamps = !a.common.no_timestamps;
  const auto result = train_asr(*bundle.model, corpus, o);
  if (result.skipped)
    std::cerr << "warning: skipped " << result.skipped << " utterance(s) too short for their transcripts\n";
  write_checkpoint(a.out, bundle.save(config, a.common.seed, o.steps));
  std::cout << a.out << '\n'
            << "skipped\t" << result.skipped << '\n'
            << "final_loss\t" << result.history.loss.back() << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint, features, logmel, manifest, out;
  Common common;
};

int cmd_eval(const EvalArgs& a) {
  const AsrBundle bundle = AsrBundle::load(read_checkpoint(a.checkpoint));
  require((bundle.input == AsrInput::LogMel) == !a.logmel.empty(), ErrorKind::Contract,
          std::string("checkpoint was trained on ") + (bundle.input == AsrInput::LogMel ? "--logmel" : "--features") +
              " input");
  const Manifest refs = read_manifest(a.manifest);
  AsrData data = load_asr_inputs(a.features, a.logmel, refs);
  const AsrConfig& cfg = bundle.model->config();
  require(std::abs(data.rate - cfg.feature_rate) < 1e-9, ErrorKind::Contract, "feature rate differs from training");
  for (std::size_t i = 0; i < data.ids.size(); ++i) {
    encode_transcript(cfg.vocabulary, data.ids[i], data.transcripts[i]);  // vocabulary check
    if (bundle.transform) data.features[i] = bundle.transform->apply(data.features[i]);
  }
  std::vector<std::string> hyps(data.ids.size());
  parallel_for(data.ids.size(), [&](std::size_t i) { hyps[i] = transcribe(*bundle.model, {data.features[i]}).front(); });

  std::ostringstream report;
  for (std::size_t i = 0; i < data.ids.size(); ++i)
    report << data.ids[i] << '\t' << data.transcripts[i] << '\t' << hyps[i] << '\t'
           << edit_distance(hyps[i], data.transcripts[i]).distance << '\n';
  report << std::setprecision(6) << "WER\t" << word_error_rate(hyps, data.transcripts) << '\n'
         << "CER\t" << character_error_rate(hyps, data.transcripts) << '\n';
  std::cout << report.str();
  if (!a.out.empty()) open_output(a.out) << report.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contrastive speech representation toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic token corpus (WAVs + manifest.tsv)");
  s->add_option("--utts", synth.utts, "number of utterances")->capture_default_str();
  s->add_option("--vocab", synth.vocab, "token inventory size (1-8)")->capture_default_str();
  s->add_option("--tokens", synth.tokens, "tokens per utterance")->capture_default_str();
  s->add_option("--prefix", synth.prefix, "utterance id prefix")->capture_default_str();
  s->add_option("--out", synth.out, "output directory")->required();
  add_common(s, synth.common, false);

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "self-supervised pretraining; writes checkpoint and <out>.log");
  p->add_option("--manifest", pre.manifest, "audio manifest")->required();
  p->add_option("--out", pre.out, "checkpoint path")->required();
  p->add_option("--objective", pre.objective, "cpc or masked")->check(CLI::IsMember({"cpc", "masked"}))->capture_default_str();
  p->add_flag("--bidirectional", pre.bidirectional, "add the backward context network (cpc)");
  add_common(p, pre.common);

  ExtractArgs ext;
  auto* e = app.add_subcommand("extract", "write per-utterance feature files and index.tsv");
  e->add_option("--checkpoint", ext.checkpoint, "pretrained checkpoint")->required();
  e->add_option("--manifest", ext.manifest, "audio manifest")->required();
  e->add_option("--out", ext.out, "output directory")->required();
  add_common(e, ext.common, false);

  PcaArgs pca;
  auto* c = app.add_subcommand("pca", "fit the decorrelating transform and export the variance curve");
  c->add_option("--index", pca.index, "feature index")->required();
  c->add_option("--out", pca.out, "model path")->required();
  c->add_option("--curve", pca.curve, "curve file (default <out>.curve.tsv)");
  c->add_option("--threshold", pca.threshold, "variance fraction for linear dimensionality")
      ->check(CLI::Range(1e-9, 1.0))
      ->capture_default_str();
  c->add_flag("--whiten", pca.whiten, "scale components to unit variance");
  c->add_option("--epsilon", pca.epsilon, "variance floor when whitening")->capture_default_str();
  c->add_flag("--mean-only", pca.mean_only, "ablation: center only, no rotation");
  add_common(c, pca.common, false);

  TrainAsrArgs asr;
  auto* t = app.add_subcommand("train-asr", "train the CTC recognizer on features or log-mel spectra");
  auto* feat_opt = t->add_option("--features", asr.features, "feature index from extract");
  auto* mel_opt = t->add_option("--logmel", asr.logmel, "audio manifest; 80-dim log-mel input");
  feat_opt->excludes(mel_opt);
  t->add_option("--manifest", asr.manifest, "manifest with transcripts")->required();
  t->add_option("--pca-model", asr.pca_model, "transform inputs with this model first");
  t->add_option("--out", asr.out, "checkpoint path")->required();
  add_common(t, asr.common);

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "greedy decoding with per-utterance and corpus error rates");
  auto* ev_feat = v->add_option("--features", ev.features, "feature index");
  auto* ev_mel = v->add_option("--logmel", ev.logmel, "audio manifest (log-mel models)");
  ev_feat->excludes(ev_mel);
  v->add_option("--checkpoint", ev.checkpoint, "ASR checkpoint")->required();
  v->add_option("--manifest", ev.manifest, "manifest with reference transcripts")->required();
  v->add_option("--out", ev.out, "also write the report here");
  add_common(v, ev.common, false);

  Common printed;
  bool with_help = false;
  auto* pc = app.add_subcommand("print-config", "print every config key with its effective value");
  pc->add_flag("--comments", with_help, "annotate keys with their meaning");
  add_common(pc, printed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*p) return cmd_pretrain(pre);
    if (*e) return cmd_extract(ext);
    if (*c) return cmd_pca(pca);
    if (*t) {
      require(!asr.features.empty() || !asr.logmel.empty(), ErrorKind::Argument, "give --features or --logmel");
      return cmd_train_asr(asr);
    }
    if (*v) {
      require(!ev.features.empty() || !ev.logmel.empty(), ErrorKind::Argument, "give --features or --logmel");
      return cmd_eval(ev);
    }
    if (*pc) {
      std::cout << build_config(printed).dump(with_help);
      return 0;
    }
  } catch (const Error& err) {
    std::cerr << "error (" << to_string(err.kind()) << "): " << err.what() << '\n';
    return exit_code(err.kind());
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 4;
  }
  return 0;
}
