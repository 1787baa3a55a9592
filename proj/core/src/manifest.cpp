#include "cytonet/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "cytonet/error.hpp"
#include "cytonet/kvconfig.hpp"

namespace cytonet {

std::string RunManifest::to_text() const {
  std::ostringstream os;
  os << "tool_version=" << tool_version << "\n";
  os << "command=" << command << "\n";
  os << "seed=" << seed << "\n";
  for (const auto& [k, v] : config) os << "config." << k << "=" << v << "\n";
  if (has_norm_stats) {
    char buf[64];
    const char* chan[3] = {"r", "g", "b"};
    for (int c = 0; c < 3; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", norm_stats.mean[static_cast<std::size_t>(c)]);
      os << "norm.mean." << chan[c] << "=" << buf << "\n";
      std::snprintf(buf, sizeof(buf), "%.17g", norm_stats.stdev[static_cast<std::size_t>(c)]);
      os << "norm.std." << chan[c] << "=" << buf << "\n";
    }
  }
  for (const auto& [k, v] : artifacts) os << "artifact." << k << "=" << v << "\n";
  for (const auto& [k, v] : metrics) os << "metric." << k << "=" << v << "\n";
  return os.str();
}

RunManifest RunManifest::from_text(const std::string& text) {
  RunManifest m;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("manifest: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "tool_version") {
      m.tool_version = value;
    } else if (key == "command") {
      m.command = value;
    } else if (key == "seed") {
      m.seed = std::stoull(value);
    } else if (key.rfind("config.", 0) == 0) {
      m.config[key.substr(7)] = value;
    } else if (key.rfind("artifact.", 0) == 0) {
      m.artifacts[key.substr(9)] = value;
    } else if (key.rfind("metric.", 0) == 0) {
      m.metrics[key.substr(7)] = value;
    } else if (key.rfind("norm.", 0) == 0) {
      m.has_norm_stats = true;
      const std::string rest = key.substr(5);  // mean.r / std.g ...
      const double v = std::stod(value);
      const auto dot = rest.find('.');
      if (dot == std::string::npos) throw IoError("manifest: malformed norm key '" + key + "'");
      const std::string kind = rest.substr(0, dot);
      const std::string chan = rest.substr(dot + 1);
      const std::size_t c = chan == "r" ? 0 : (chan == "g" ? 1 : 2);
      if (kind == "mean") {
        m.norm_stats.mean[c] = v;
      } else {
        m.norm_stats.stdev[c] = v;
      }
    } else {
      throw IoError("manifest: unknown key '" + key + "'");
    }
  }
  return m;
}

RunManifest RunManifest::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return from_text(buf.str());
}

void RunManifest::write_file(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write manifest: " + path);
  f << to_text();
  if (!f) throw IoError("manifest write failed: " + path);
}

}  // namespace cytonet
