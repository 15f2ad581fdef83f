#include "contraspeech/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace contraspeech {

namespace {

constexpr double kHuge = 1e12;

ConfigKey integer_key(std::string name, long def, double lo, double hi, std::string help) {
  return {std::move(name), ValueType::Integer, std::to_string(def), lo, hi, {}, std::move(help)};
}
ConfigKey real_key(std::string name, std::string def, double lo, double hi, std::string help) {
  return {std::move(name), ValueType::Real, std::move(def), lo, hi, {}, std::move(help)};
}
ConfigKey list_key(std::string name, std::string def, double lo, double hi, std::string help) {
  return {std::move(name), ValueType::List, std::move(def), lo, hi, {}, std::move(help)};
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const ConfigKey& lookup(const std::string& key) {
  for (const auto& k : config_registry())
    if (k.name == key) return k;
  fail(ErrorKind::Config, "unknown config key '" + key + "'");
}

bool parse_long(const std::string& text, long& out) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(text, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == text.size() && std::isfinite(out);
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> items;
  if (text.empty()) return items;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) items.push_back(trim(item));
  return items;
}

void check_value(const ConfigKey& k, const std::string& value) {
  const std::string where = "config key '" + k.name + "' = '" + value + "': ";
  auto in_range = [&](double v) {
    require(v >= k.min && v <= k.max, ErrorKind::Config,
            where + "out of range [" + std::to_string(k.min) + ", " + std::to_string(k.max) + "]");
  };
  switch (k.type) {
    case ValueType::Integer: {
      long v;
      require(parse_long(value, v), ErrorKind::Config, where + "expected an integer");
      in_range(static_cast<double>(v));
      break;
    }
    case ValueType::Real: {
      double v;
      require(parse_double(value, v), ErrorKind::Config, where + "expected a number");
      in_range(v);
      break;
    }
    case ValueType::Boolean:
      require(value == "true" || value == "false", ErrorKind::Config, where + "expected true or false");
      break;
    case ValueType::List:
      for (const auto& item : split_commas(value)) {
        long v;
        require(parse_long(item, v), ErrorKind::Config, where + "expected comma-separated integers");
        in_range(static_cast<double>(v));
      }
      break;
    case ValueType::Choice:
      require(std::find(k.choices.begin(), k.choices.end(), value) != k.choices.end(), ErrorKind::Config,
              where + "not one of the allowed values");
      break;
    case ValueType::Text:
      require(value.find_first_of("\n=") == std::string::npos, ErrorKind::Config, where + "may not contain '=' or newlines");
      break;
  }
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

const std::vector<ConfigKey>& config_registry() {
  static const std::vector<ConfigKey> registry = [] {
    std::vector<ConfigKey> r;
    // encoder
    r.push_back(list_key("encoder.filters", "", 1, 4096, "conv widths; empty = default stack of the objective"));
    r.push_back(list_key("encoder.kernels", "", 1, 64, "conv kernel sizes; empty = objective default"));
    r.push_back(list_key("encoder.strides", "", 1, 64, "conv strides; empty = objective default"));
    r.push_back(integer_key("encoder.groups", 16, 1, 512, "group-norm groups (must divide every width)"));
    // context
    r.push_back({"context.mode", ValueType::Choice, "uni", 0, 0, {"uni", "bi", "pair"},
                 "cpc context networks: one forward, forward+backward, or two forward"});
    r.push_back(integer_key("context.layers", 2, 1, 64, "LSTM layers per context network"));
    r.push_back(integer_key("context.units", 128, 1, 4096, "LSTM units per context network"));
    r.push_back(integer_key("context.attention_blocks", 2, 1, 64, "self-attention blocks (masked objective)"));
    r.push_back(integer_key("context.heads", 4, 1, 64, "attention heads"));
    r.push_back(integer_key("context.ff_width", 256, 1, 16384, "attention feed-forward width"));
    // loss
    r.push_back(integer_key("loss.offsets", 4, 1, 64, "prediction offsets K"));
    r.push_back(integer_key("loss.distractors", 4, 1, 1024, "distractors per step (cpc)"));
    r.push_back(real_key("loss.negative_weight", "1", 0, kHuge, "weight of the distractor terms"));
    r.push_back(integer_key("loss.masked_distractors", 10, 1, 1024, "distractors per masked step"));
    r.push_back(real_key("loss.kappa", "0.1", 1e-6, kHuge, "cosine-similarity temperature"));
    r.push_back(real_key("loss.diversity_weight", "0.1", 0, kHuge, "weight of the codebook diversity term"));
    r.push_back(real_key("loss.mask_probability", "0.065", 0, 1, "probability a step starts a masked span"));
    r.push_back(integer_key("loss.mask_span", 10, 1, 1000, "masked span length"));
    r.push_back(integer_key("loss.codebook_groups", 2, 1, 64, "quantizer codebook groups"));
    r.push_back(integer_key("loss.codebook_entries", 32, 2, 65536, "entries per codebook"));
    r.push_back(real_key("loss.gumbel_start", "2", 1e-6, kHuge, "initial Gumbel temperature"));
    r.push_back(real_key("loss.gumbel_end", "0.5", 1e-6, kHuge, "temperature floor"));
    r.push_back(real_key("loss.gumbel_decay", "0.995", 1e-6, 1, "per-step temperature decay"));
    // pretraining
    r.push_back(integer_key("train.steps", 500, 1, 100000000, "pretraining updates"));
    r.push_back(real_key("train.batch_seconds", "120", 1e-3, kHuge, "audio seconds per batch"));
    r.push_back(real_key("train.crop_seconds", "0", 0, kHuge, "random crop per utterance; 0 = whole utterance"));
    r.push_back(real_key("train.lr_high", "0.0003", 0, 1, "learning rate before the switch"));
    r.push_back(real_key("train.lr_low", "0.00005", 0, 1, "learning rate after the switch"));
    r.push_back(real_key("train.lr_switch", "0.5", 0, 1, "fraction of steps run at lr_high"));
    // asr
    r.push_back(list_key("asr.conv_units", "64,48,32", 1, 16384, "front-end conv widths (three layers)"));
    r.push_back(integer_key("asr.kernel", 3, 1, 63, "front-end kernel size (odd)"));
    r.push_back(integer_key("asr.recurrent_layers", 2, 1, 64, "bidirectional LSTM layers"));
    r.push_back(integer_key("asr.units", 64, 1, 16384, "units per LSTM direction"));
    r.push_back({"asr.symbols", ValueType::Text, "", 0, 0, {},
                 "output symbols; empty = every character in the training transcripts"});
    r.push_back(integer_key("asr.steps", 500, 1, 100000000, "ASR updates"));
    r.push_back(real_key("asr.batch_seconds", "320", 1e-3, kHuge, "audio seconds per batch"));
    r.push_back(real_key("asr.lr_high", "0.0003", 0, 1, "learning rate before the switch"));
    r.push_back(real_key("asr.lr_low", "0.00005", 0, 1, "learning rate after the switch"));
    r.push_back(real_key("asr.lr_switch", "0.5", 0, 1, "fraction of steps run at lr_high"));
    // pca
    r.push_back(real_key("pca.threshold", "0.95", 1e-9, 1, "variance fraction for the reported dimensionality"));
    r.push_back({"pca.whiten", ValueType::Boolean, "false", 0, 0, {}, "scale components to unit variance"});
    r.push_back(real_key("pca.epsilon", "1e-8", 0, kHuge, "added to variances before whitening"));
    return r;
  }();
  return registry;
}

RunConfig::RunConfig() {
  for (const auto& k : config_registry()) values_[k.name] = k.default_value;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  RunConfig config;
  config.update(text, source);
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  RunConfig config;
  config.update_from_file(path);
  return config;
}

void RunConfig::update(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    require(eq != std::string::npos, ErrorKind::Config, where + "expected key=value");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      fail(e.kind(), where + e.what());
    }
  }
}

void RunConfig::update_from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  update(ss.str(), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  check_value(lookup(key), value);
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  lookup(key);
  return values_.at(key);
}

long RunConfig::integer(const std::string& key) const {
  require(lookup(key).type == ValueType::Integer, ErrorKind::Contract, key + " is not an integer key");
  long v = 0;
  parse_long(values_.at(key), v);
  return v;
}

double RunConfig::real(const std::string& key) const {
  require(lookup(key).type == ValueType::Real, ErrorKind::Contract, key + " is not a real-valued key");
  double v = 0;
  parse_double(values_.at(key), v);
  return v;
}

bool RunConfig::flag(const std::string& key) const {
  require(lookup(key).type == ValueType::Boolean, ErrorKind::Contract, key + " is not a boolean key");
  return values_.at(key) == "true";
}

std::vector<std::size_t> RunConfig::list(const std::string& key) const {
  require(lookup(key).type == ValueType::List, ErrorKind::Contract, key + " is not a list key");
  std::vector<std::size_t> out;
  for (const auto& item : split_commas(values_.at(key))) {
    long v = 0;
    parse_long(item, v);
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::string RunConfig::dump(bool with_help) const {
  std::ostringstream out;
  std::string section;
  for (const auto& k : config_registry()) {
    const std::string prefix = k.name.substr(0, k.name.find('.'));
    if (with_help && prefix != section) out << (section.empty() ? "" : "\n") << "# " << prefix << "\n";
    section = prefix;
    if (with_help) out << "# " << k.help << "\n";
    out << k.name << " = " << values_.at(k.name) << "\n";
  }
  return out.str();
}

void apply_preset(RunConfig& config, const std::string& preset) {
  if (preset == "desk") return;
  require(preset == "full", ErrorKind::Argument, "unknown preset '" + preset + "' (desk or full)");
  const EncoderSpec enc = full_encoder_spec();
  config.set("encoder.filters", join(enc.filters));
  config.set("encoder.kernels", join(enc.kernels));
  config.set("encoder.strides", join(enc.strides));
  config.set("encoder.groups", std::to_string(enc.groups));
  const CpcConfig cpc = full_cpc_config();
  config.set("context.layers", std::to_string(cpc.context_layers));
  config.set("context.units", std::to_string(cpc.context_units));
  config.set("loss.offsets", std::to_string(cpc.offsets));
  config.set("loss.distractors", std::to_string(cpc.distractors));
  const AsrConfig asr = full_asr_config(1, 100.0, Vocabulary::synthetic(1));
  config.set("asr.conv_units", join({asr.conv_units.begin(), asr.conv_units.end()}));
  config.set("asr.recurrent_layers", std::to_string(asr.recurrent_layers));
  config.set("asr.units", std::to_string(asr.recurrent_units));
}

namespace {

// Explicit layer lists override the objective's default stack; the three
// lists must be given together.
EncoderSpec encoder_from(const RunConfig& config, EncoderSpec base) {
  const auto filters = config.list("encoder.filters"), kernels = config.list("encoder.kernels"),
             strides = config.list("encoder.strides");
  const bool any = !filters.empty() || !kernels.empty() || !strides.empty();
  if (any) {
    require(!filters.empty() && !kernels.empty() && !strides.empty(), ErrorKind::Config,
            "encoder.filters, encoder.kernels and encoder.strides must be set together");
    base.filters = filters;
    base.kernels = kernels;
    base.strides = strides;
  }
  base.groups = config.count("encoder.groups");
  base.validate();
  return base;
}

}  // namespace

CpcConfig cpc_config_from(const RunConfig& config) {
  CpcConfig c = desk_cpc_config();
  c.encoder = encoder_from(config, desk_encoder_spec());
  c.context_layers = config.count("context.layers");
  c.context_units = config.count("context.units");
  c.offsets = config.count("loss.offsets");
  c.distractors = config.count("loss.distractors");
  const std::string mode = config.get("context.mode");
  c.mode = mode == "bi" ? ContextMode::Bidirectional : mode == "pair" ? ContextMode::ForwardPair : ContextMode::Unidirectional;
  c.negative_weight = static_cast<float>(config.real("loss.negative_weight"));
  c.validate();
  return c;
}

MaskedConfig masked_config_from(const RunConfig& config) {
  MaskedConfig c;
  c.encoder = encoder_from(config, masked_encoder_spec());
  c.attention_blocks = config.count("context.attention_blocks");
  c.attention_heads = config.count("context.heads");
  c.ff_width = config.count("context.ff_width");
  c.mask.start_probability = config.real("loss.mask_probability");
  c.mask.span = config.count("loss.mask_span");
  c.quantizer.groups = config.count("loss.codebook_groups");
  c.quantizer.entries = config.count("loss.codebook_entries");
  c.distractors = config.count("loss.masked_distractors");
  c.kappa = static_cast<float>(config.real("loss.kappa"));
  c.diversity_weight = static_cast<float>(config.real("loss.diversity_weight"));
  c.gumbel_start = static_cast<float>(config.real("loss.gumbel_start"));
  c.gumbel_end = static_cast<float>(config.real("loss.gumbel_end"));
  c.gumbel_decay = static_cast<float>(config.real("loss.gumbel_decay"));
  c.validate();
  return c;
}

AsrConfig asr_config_from(const RunConfig& config, std::size_t input_width, double feature_rate, Vocabulary vocabulary) {
  AsrConfig c = desk_asr_config(input_width, feature_rate, std::move(vocabulary));
  const auto units = config.list("asr.conv_units");
  require(units.size() == 3, ErrorKind::Config, "asr.conv_units needs exactly three widths");
  std::copy(units.begin(), units.end(), c.conv_units.begin());
  c.kernel = config.count("asr.kernel");
  c.recurrent_layers = config.count("asr.recurrent_layers");
  c.recurrent_units = config.count("asr.units");
  c.validate();
  return c;
}

LrSchedule schedule_from(const RunConfig& config, const std::string& section) {
  LrSchedule s;
  s.high = static_cast<float>(config.real(section + ".lr_high"));
  s.low = static_cast<float>(config.real(section + ".lr_low"));
  s.switch_fraction = config.real(section + ".lr_switch");
  s.total_steps = config.count(section + ".steps");
  return s;
}

}  // namespace contraspeech
