#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "cytonet/error.hpp"
#include "cytonet/rng.hpp"

namespace cytonet {

enum class ModelFamily { resnet, densenet, ran_resnet, rcan_densenet };
enum class AttentionPlacement { per_stage, per_block };

inline std::string family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::resnet: return "resnet";
    case ModelFamily::densenet: return "densenet";
    case ModelFamily::ran_resnet: return "ran_resnet";
    case ModelFamily::rcan_densenet: return "rcan_densenet";
  }
  throw ConfigError("unknown model family");
}

inline ModelFamily parse_family(const std::string& s) {
  if (s == "resnet") return ModelFamily::resnet;
  if (s == "densenet") return ModelFamily::densenet;
  if (s == "ran_resnet") return ModelFamily::ran_resnet;
  if (s == "rcan_densenet") return ModelFamily::rcan_densenet;
  throw ConfigError("unknown model family '" + s +
                    "' (expected resnet|densenet|ran_resnet|rcan_densenet)");
}

inline bool family_is_dense(ModelFamily f) {
  return f == ModelFamily::densenet || f == ModelFamily::rcan_densenet;
}
inline bool family_has_attention(ModelFamily f) {
  return f == ModelFamily::ran_resnet || f == ModelFamily::rcan_densenet;
}

/// Declarative architecture description. Every field participates in the
/// canonical text and therefore in the config hash used by checkpoints.
struct ModelConfig {
  ModelFamily family = ModelFamily::rcan_densenet;
  int input_resolution = 96;
  int num_classes = 5;
  std::uint64_t seed = 7;

  int stem_channels = 24;
  int stem_kernel = 3;                       // 3 for mini variants, 7 for full-scale
  std::vector<int> stage_blocks = {2, 2, 2};  // bottlenecks or dense layers per stage

  // resnet families
  std::vector<int> stage_channels = {16, 32, 64};

  // densenet families
  int growth_rate = 12;
  double compression = 0.5;
  bool dense_bottleneck = false;

  // attention
  AttentionPlacement attention_placement = AttentionPlacement::per_stage;
  int reduction_ratio = 4;
  int attention_depth = 2;
  int attention_trunk_units = 2;

  static ModelConfig mini(ModelFamily f) {
    ModelConfig c;
    c.family = f;
    if (family_is_dense(f)) {
      c.stem_channels = 24;
      c.growth_rate = 12;
      c.compression = 0.5;
      c.stage_blocks = {2, 2, 2};
      c.reduction_ratio = 4;
    } else {
      c.stem_channels = 16;
      c.stage_channels = {16, 32, 64};
      c.stage_blocks = {2, 2, 2};
      c.attention_depth = 2;
      c.attention_trunk_units = 2;
    }
    return c;
  }

  /// Full-depth configurations (50-layer residual / 121-layer dense scale).
  static ModelConfig full_scale(ModelFamily f) {
    ModelConfig c;
    c.family = f;
    c.stem_kernel = 7;
    c.stem_channels = 64;
    if (family_is_dense(f)) {
      c.stage_blocks = {6, 12, 24, 16};
      c.growth_rate = 32;
      c.compression = 0.5;
      c.dense_bottleneck = true;
      c.reduction_ratio = 16;
      c.input_resolution = 224;
    } else {
      c.stage_blocks = {3, 4, 6, 3};
      c.stage_channels = {256, 512, 1024, 2048};
      c.input_resolution = 224;
      c.attention_depth = 2;
    }
    return c;
  }

  /// Sorted key=value lines; the exact bytes hashed into checkpoints.
  std::string canonical_text() const {
    auto join = [](const std::vector<int>& v) {
      std::ostringstream os;
      for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
      return os.str();
    };
    std::ostringstream os;
    os << "attention_depth=" << attention_depth << "\n";
    os << "attention_placement="
       << (attention_placement == AttentionPlacement::per_stage ? "per_stage" : "per_block")
       << "\n";
    os << "attention_trunk_units=" << attention_trunk_units << "\n";
    os << "compression=" << compression << "\n";
    os << "dense_bottleneck=" << (dense_bottleneck ? 1 : 0) << "\n";
    os << "family=" << family_name(family) << "\n";
    os << "growth_rate=" << growth_rate << "\n";
    os << "input_resolution=" << input_resolution << "\n";
    os << "num_classes=" << num_classes << "\n";
    os << "reduction_ratio=" << reduction_ratio << "\n";
    os << "seed=" << seed << "\n";
    os << "stage_blocks=" << join(stage_blocks) << "\n";
    os << "stage_channels=" << join(stage_channels) << "\n";
    os << "stem_channels=" << stem_channels << "\n";
    os << "stem_kernel=" << stem_kernel << "\n";
    return os.str();
  }

  std::uint64_t hash() const { return fnv1a64(canonical_text()); }

  /// Walks the architecture arithmetic and throws ConfigError on any
  /// inconsistency (bad extents, attention sites not divisible by r, spatial
  /// extent exhausted before the head).
  void validate() const;
};

ModelConfig parse_model_config_text(const std::string& text);

}  // namespace cytonet
