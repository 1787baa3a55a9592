#include "cytonet/model_config.hpp"

#include <map>

namespace cytonet {

namespace {

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stoi(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (num_classes < 2) throw ConfigError("model: class count must be >= 2");
  if (input_resolution < 1) throw ConfigError("model: input resolution must be >= 1");
  if (stem_channels < 1) throw ConfigError("model: stem channels must be >= 1");
  if (stem_kernel != 3 && stem_kernel != 7) throw ConfigError("model: stem kernel must be 3 or 7");
  if (stage_blocks.empty()) throw ConfigError("model: stage_blocks must not be empty");
  for (int b : stage_blocks) {
    if (b < 0) throw ConfigError("model: stage block counts must be >= 0");
  }

  // stem: conv stride 2 + 2x2 max pool stride 2
  int spatial = input_resolution / 2;
  if (spatial < 2) throw ConfigError("model: input resolution exhausted in the stem");
  spatial /= 2;

  if (family_is_dense(family)) {
    if (growth_rate < 1) throw ConfigError("model: growth rate must be >= 1");
    if (!(compression > 0.0 && compression <= 1.0)) {
      throw ConfigError("model: compression must be in (0,1]");
    }
    int channels = stem_channels;
    for (std::size_t s = 0; s < stage_blocks.size(); ++s) {
      channels += stage_blocks[s] * growth_rate;
      if (family == ModelFamily::rcan_densenet) {
        if (reduction_ratio >= channels) {
          throw ConfigError("model: reduction ratio " + std::to_string(reduction_ratio) +
                            " must be smaller than dense stage width " + std::to_string(channels));
        }
        if (reduction_ratio < 1 || channels % reduction_ratio != 0) {
          throw ConfigError("model: reduction ratio " + std::to_string(reduction_ratio) +
                            " does not divide dense stage width " + std::to_string(channels));
        }
      }
      if (s + 1 < stage_blocks.size()) {
        channels = std::max(1, static_cast<int>(compression * channels));
        if (spatial < 2) {
          throw ConfigError("model: input resolution exhausted before transition " +
                            std::to_string(s + 1));
        }
        spatial /= 2;
      }
    }
    if (spatial < 1) throw ConfigError("model: input resolution exhausted before the head");
  } else {
    if (stage_channels.size() != stage_blocks.size()) {
      throw ConfigError("model: stage_channels and stage_blocks lengths differ");
    }
    for (std::size_t s = 0; s < stage_blocks.size(); ++s) {
      if (stage_channels[s] < 4) throw ConfigError("model: stage channels must be >= 4");
      if (s > 0) {
        if (spatial < 2) {
          throw ConfigError("model: input resolution exhausted at stage " + std::to_string(s));
        }
        spatial /= 2;  // first block of later stages strides by 2
      }
      if (family == ModelFamily::ran_resnet) {
        const int need = 1 << attention_depth;
        if (spatial < need) {
          throw ConfigError("model: spatial extent " + std::to_string(spatial) +
                            " too small for attention depth " + std::to_string(attention_depth) +
                            " at stage " + std::to_string(s));
        }
      }
    }
    if (family == ModelFamily::ran_resnet) {
      if (attention_depth < 1) throw ConfigError("model: attention depth must be >= 1");
      if (attention_trunk_units < 1) throw ConfigError("model: trunk units must be >= 1");
    }
  }
}

ModelConfig parse_model_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::istringstream is(text);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model config: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto want = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(std::string("model config: missing key '") + key + "'");
    return it->second;
  };
  ModelConfig c;
  c.attention_depth = std::stoi(want("attention_depth"));
  c.attention_placement = want("attention_placement") == "per_block"
                              ? AttentionPlacement::per_block
                              : AttentionPlacement::per_stage;
  c.attention_trunk_units = std::stoi(want("attention_trunk_units"));
  c.compression = std::stod(want("compression"));
  c.dense_bottleneck = want("dense_bottleneck") == "1";
  c.family = parse_family(want("family"));
  c.growth_rate = std::stoi(want("growth_rate"));
  c.input_resolution = std::stoi(want("input_resolution"));
  c.num_classes = std::stoi(want("num_classes"));
  c.reduction_ratio = std::stoi(want("reduction_ratio"));
  c.seed = std::stoull(want("seed"));
  c.stage_blocks = parse_int_list(want("stage_blocks"));
  c.stage_channels = parse_int_list(want("stage_channels"));
  c.stem_channels = std::stoi(want("stem_channels"));
  c.stem_kernel = std::stoi(want("stem_kernel"));
  return c;
}

}  // namespace cytonet
