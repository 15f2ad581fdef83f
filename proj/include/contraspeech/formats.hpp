#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "contraspeech/data_io.hpp"
#include "contraspeech/layers.hpp"

namespace contraspeech {

/// Binary container for model weights:
///   "CSPK" | u16 version | u32 meta bytes | meta (key=value lines)
///   | u32 tensor count | per tensor: u16 name length, name, u8 rank,
///   u64 dims..., u64 element count, little-endian f32 payload.
struct Checkpoint {
  static constexpr std::uint16_t kVersion = 1;

  std::vector<std::pair<std::string, std::string>> meta;  // in insertion order
  std::vector<std::pair<std::string, Tensor>> tensors;

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  /// Format error naming the key when absent.
  const std::string& get(const std::string& key) const;
  Tensor tensor(const std::string& name) const;

  void add_parameters(const ParameterSet& params);
  /// Copies every named tensor into `params`; names and shapes must match
  /// exactly in both directions (optionally restricted to a name prefix).
  void load_parameters(const ParameterSet& params, const std::string& prefix = "") const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// "CSFT" | u16 version | u16 id length | id | u64 rows | u64 cols | f32 data.
struct FeatureFile {
  static constexpr std::uint16_t kVersion = 1;
  std::string id;
  FeatureMatrix values;
};

void write_features(const std::filesystem::path& path, const FeatureFile& file);
/// Rejects files whose length differs from the header's promise.
FeatureFile read_features(const std::filesystem::path& path);

/// "#rate<TAB>hz" header, then "id<TAB>path<TAB>rows" per utterance.
struct FeatureIndex {
  double rate = 100.0;
  struct Entry {
    std::string id;
    std::filesystem::path path;  // absolute once loaded
    std::size_t rows = 0;
  };
  std::vector<Entry> entries;
};

void write_feature_index(const std::filesystem::path& path, const FeatureIndex& index);
FeatureIndex read_feature_index(const std::filesystem::path& path);

}  // namespace contraspeech
