#include "cytonet/kvconfig.hpp"

#include <fstream>
#include <sstream>

#include "cytonet/error.hpp"

namespace cytonet {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

KvConfig KvConfig::parse(const std::string& text) {
  KvConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                        line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    }
    if (cfg.values_.count(key)) {
      throw ConfigError("config key '" + key + "' appears more than once");
    }
    cfg.values_[key] = value;
  }
  return cfg;
}

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse(buf.str());
}

const std::string* KvConfig::lookup(const std::string& key) {
  auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  consumed_.insert(key);
  return &it->second;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) {
  const std::string* v = lookup(key);
  return v ? *v : fallback;
}

std::string KvConfig::require_string(const std::string& key) {
  const std::string* v = lookup(key);
  if (!v) throw ConfigError("missing required config key '" + key + "'");
  return *v;
}

int KvConfig::get_int(const std::string& key, int fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const int out = std::stoi(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + *v + "'");
  }
}

double KvConfig::get_double(const std::string& key, double fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const double out = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + *v + "'");
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  if (*v == "1" || *v == "true" || *v == "on") return true;
  if (*v == "0" || *v == "false" || *v == "off") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + *v + "'");
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const std::uint64_t out = std::stoull(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + *v + "'");
  }
}

std::vector<int> KvConfig::get_int_list(const std::string& key, std::vector<int> fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  std::vector<int> out;
  std::string cur;
  for (char c : *v + ",") {
    if (c == ',') {
      if (!cur.empty()) {
        try {
          out.push_back(std::stoi(cur));
        } catch (const std::exception&) {
          throw ConfigError("config key '" + key + "': expected integer list, got '" + *v + "'");
        }
        cur.clear();
      }
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

void KvConfig::finish() const {
  std::vector<std::string> unknown;
  for (const auto& [key, value] : values_) {
    if (!consumed_.count(key)) unknown.push_back(key);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config key(s):";
    for (const auto& k : unknown) msg += " '" + k + "'";
    throw ConfigError(msg);
  }
}

}  // namespace cytonet
