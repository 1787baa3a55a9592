#pragma once

#include <map>
#include <string>

#include "cytonet/dataset.hpp"

namespace cytonet {

/// Everything needed to reproduce a run bit-for-bit: the resolved config, the
/// seed, normalization statistics, split reference, metric outputs and
/// artifact paths. Serialized as flat key=value text.
struct RunManifest {
  std::string tool_version;
  std::string command;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;     // resolved config, config.* keys
  std::map<std::string, std::string> artifacts;  // artifact.* keys -> paths
  std::map<std::string, std::string> metrics;    // metric.* keys
  NormStats norm_stats;
  bool has_norm_stats = false;

  std::string to_text() const;
  static RunManifest from_text(const std::string& text);
  static RunManifest from_file(const std::string& path);
  void write_file(const std::string& path) const;
};

}  // namespace cytonet
