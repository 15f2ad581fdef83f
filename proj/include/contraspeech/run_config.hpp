#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "contraspeech/adam.hpp"
#include "contraspeech/asr.hpp"
#include "contraspeech/cpc.hpp"
#include "contraspeech/masked.hpp"

namespace contraspeech {

enum class ValueType { Integer, Real, Boolean, List, Choice, Text };

struct ConfigKey {
  std::string name;
  ValueType type;
  std::string default_value;
  double min = 0.0, max = 0.0;       // numeric range, inclusive (Integer, Real, List items)
  std::vector<std::string> choices;  // Choice only
  std::string help;
};

/// Every key the toolchain understands, in print order.
const std::vector<ConfigKey>& config_registry();

/// Flat key=value settings validated against the registry. Lines starting
/// with '#' and blank lines are ignored; unknown keys are a Config error.
class RunConfig {
 public:
  RunConfig();  // registry defaults

  static RunConfig parse(const std::string& text, const std::string& source = "<config>");
  static RunConfig load(const std::filesystem::path& path);
  /// Sets only the keys present in `text`.
  void update(const std::string& text, const std::string& source = "<config>");
  void update_from_file(const std::filesystem::path& path);

  /// Validates `value` against the key's type and range.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  long integer(const std::string& key) const;
  std::size_t count(const std::string& key) const { return static_cast<std::size_t>(integer(key)); }
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::size_t> list(const std::string& key) const;

  /// Every key with its current value; parse(dump()) reproduces *this.
  std::string dump(bool with_help = false) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  bool operator==(const RunConfig& other) const { return values_ == other.values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// "desk" leaves the defaults; "full" switches encoder, context, loss and
/// ASR sizes to the full-size values.
void apply_preset(RunConfig& config, const std::string& preset);

CpcConfig cpc_config_from(const RunConfig& config);
MaskedConfig masked_config_from(const RunConfig& config);
/// Width, rate and vocabulary come from the data; the rest from the config.
AsrConfig asr_config_from(const RunConfig& config, std::size_t input_width, double feature_rate, Vocabulary vocabulary);

/// lr schedule from "<section>.lr_high/lr_low/lr_switch" and "<section>.steps".
LrSchedule schedule_from(const RunConfig& config, const std::string& section);

}  // namespace contraspeech
