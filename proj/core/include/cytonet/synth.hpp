#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cytonet/dataset.hpp"

namespace cytonet {

/// Blob ("cell") parameters for one synthetic class: a nucleus inside a
/// cytoplasm ellipse, drawn on a light background.
struct BlobClassSpec {
  std::string name;
  int count_min = 4;
  int count_max = 6;
  double radius_min = 6;
  double radius_max = 9;
  double eccentricity = 1.0;  // major/minor axis ratio
  double hue_min = 0.55;      // hue band in [0,1)
  double hue_max = 0.65;
  double noise_amp = 0.02;  // texture noise inside cells
};

struct SyntheticSpec {
  int image_size = 96;
  int per_class = 100;
  bool single_cell = false;  // one centered blob instead of a population
  std::uint64_t seed = 7;
  std::vector<BlobClassSpec> classes;

  /// Five visually distinct classes (counts, sizes, eccentricities and hues
  /// all differ) with disjoint-enough count ranges to keep the task linearly
  /// separable from pixel means plus a blob count.
  static SyntheticSpec default_five(int image_size = 96, int per_class = 100,
                                    std::uint64_t seed = 7);
};

/// Deterministic per (seed, class, index): the same spec always produces a
/// bit-identical dataset. Image values lie in [0,1].
Dataset synthesize_dataset(const SyntheticSpec& spec);

/// Renders one image; exposed for tests and the directory writer.
Tensor<float> synthesize_image(const SyntheticSpec& spec, int class_index, int image_index);

/// Writes the dataset as a directory-per-class PNG tree (the same layout the
/// loader reads) and echoes the spec into `spec_echo.txt`.
void write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

std::string format_synthetic_spec(const SyntheticSpec& spec);
SyntheticSpec parse_synthetic_spec(const std::string& text);

}  // namespace cytonet
