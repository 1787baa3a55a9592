#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cytonet/tensor.hpp"

namespace cytonet {

struct Sample {
  Tensor<float> image;  // (3,H,W) in [0,1] pre-normalization
  int label = 0;
  std::string id;  // stable source identifier, e.g. "class_dir/file.png"
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

/// Disjoint, exhaustive index lists over a dataset.
struct DatasetSplit {
  std::vector<int> train, validation, test;

  const std::vector<int>& part(const std::string& name) const;
  std::vector<std::vector<int>> per_class_counts(const Dataset& ds) const;
};

/// Loads a directory-per-class tree (PNG/BMP files), resizing every image to
/// resize_to x resize_to. Class index follows lexicographic directory order;
/// samples are ordered by path. With `lenient`, undecodable files are skipped
/// with a warning on stderr instead of aborting.
Dataset load_image_directory(const std::filesystem::path& root, int resize_to,
                             bool lenient = false);

/// Per class: shuffle by seed, allocate floor(n*f) per split, remainders to
/// train. Deterministic for a fixed seed.
DatasetSplit stratified_split(const Dataset& ds, std::array<double, 3> fractions,
                              std::uint64_t seed);

struct NormStats {
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> stdev{1, 1, 1};
  bool zero_std_fallback = false;  // some channel had zero spread on train
};

/// Computes per-channel mean/std on the train split only and applies them to
/// every sample in place. Zero-spread channels fall back to std 1.
NormStats normalize_in_place(Dataset& ds, const DatasetSplit& split);

void apply_normalization(Tensor<float>& image, const NormStats& stats);

/// Text manifest: one "sample_id<TAB>split" line per sample.
std::string format_split_manifest(const Dataset& ds, const DatasetSplit& split);

/// Gathers samples into a (B,3,H,W) batch plus labels.
Tensor<float> assemble_batch(const Dataset& ds, const std::vector<int>& indices,
                             std::size_t first, std::size_t count, std::vector<int>* labels);

}  // namespace cytonet
