#include "cytonet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <sstream>

#include "cytonet/error.hpp"
#include "cytonet/image.hpp"
#include "cytonet/rng.hpp"

namespace cytonet {

namespace fs = std::filesystem;

const std::vector<int>& DatasetSplit::part(const std::string& name) const {
  if (name == "train") return train;
  if (name == "validation") return validation;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + name + "' (valid: train, validation, test)");
}

std::vector<std::vector<int>> DatasetSplit::per_class_counts(const Dataset& ds) const {
  std::vector<std::vector<int>> counts(3, std::vector<int>(static_cast<std::size_t>(ds.num_classes()), 0));
  const std::vector<const std::vector<int>*> parts{&train, &validation, &test};
  for (std::size_t p = 0; p < 3; ++p) {
    for (int idx : *parts[p]) {
      counts[p][static_cast<std::size_t>(ds.samples[static_cast<std::size_t>(idx)].label)] += 1;
    }
  }
  return counts;
}

namespace {

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".bmp";
}

}  // namespace

Dataset load_image_directory(const fs::path& root, int resize_to, bool lenient) {
  if (!fs::exists(root) || !fs::is_directory(root)) {
    throw IoError("dataset root does not exist or is not a directory: " + root.string());
  }
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  if (class_dirs.empty()) {
    throw IoError("dataset root contains no class directories: " + root.string());
  }
  std::sort(class_dirs.begin(), class_dirs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

  Dataset ds;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    const fs::path& dir = class_dirs[label];
    ds.class_names.push_back(dir.filename().string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && has_image_extension(entry.path())) {
        files.push_back(entry.path());
      }
    }
    if (files.empty()) {
      throw IoError("class directory has no image files: " + dir.string());
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
    for (const auto& file : files) {
      ImageU8 img;
      try {
        img = decode_image(read_file_bytes(file), file.string());
      } catch (const IoError& e) {
        if (lenient) {
          std::cerr << "warning: skipping " << e.what() << "\n";
          continue;
        }
        throw;
      }
      Sample s;
      s.image = image_to_tensor(img);
      if (img.height != resize_to || img.width != resize_to) {
        s.image = resize_bilinear(s.image, resize_to, resize_to);
      }
      s.label = static_cast<int>(label);
      s.id = dir.filename().string() + "/" + file.filename().string();
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

DatasetSplit stratified_split(const Dataset& ds, std::array<double, 3> fractions,
                              std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1, got " + std::to_string(total));
  }
  for (double f : fractions) {
    if (f < 0) throw ConfigError("split fractions must be non-negative");
  }
  const int K = ds.num_classes();
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(K));
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const int label = ds.samples[i].label;
    if (label < 0 || label >= K) throw Error("sample label out of range");
    by_class[static_cast<std::size_t>(label)].push_back(static_cast<int>(i));
  }

  DatasetSplit split;
  for (int c = 0; c < K; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    const int n = static_cast<int>(members.size());
    if (n < 3) {
      throw ConfigError("class '" + ds.class_names[static_cast<std::size_t>(c)] + "' has only " +
                        std::to_string(n) + " samples; need at least 3 to split");
    }
    Rng rng(hash_combine(seed, static_cast<std::uint64_t>(c) + 1));
    rng.shuffle(members);
    const int n_train = static_cast<int>(std::floor(fractions[0] * n));
    const int n_val = static_cast<int>(std::floor(fractions[1] * n));
    const int n_test = static_cast<int>(std::floor(fractions[2] * n));
    const int remainder = n - n_train - n_val - n_test;  // goes to train
    int i = 0;
    for (; i < n_train + remainder; ++i) split.train.push_back(members[static_cast<std::size_t>(i)]);
    for (; i < n_train + remainder + n_val; ++i)
      split.validation.push_back(members[static_cast<std::size_t>(i)]);
    for (; i < n; ++i) split.test.push_back(members[static_cast<std::size_t>(i)]);
  }
  return split;
}

NormStats normalize_in_place(Dataset& ds, const DatasetSplit& split) {
  if (split.train.empty()) throw ConfigError("normalize: train split is empty");
  NormStats stats;
  std::array<double, 3> sum{0, 0, 0}, sq{0, 0, 0};
  std::size_t count = 0;
  for (int idx : split.train) {
    const auto& img = ds.samples[static_cast<std::size_t>(idx)].image;
    const int H = img.dim(1), W = img.dim(2);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < 3; ++c) {
      const float* p = img.data() + static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum[static_cast<std::size_t>(c)] += p[i];
        sq[static_cast<std::size_t>(c)] += static_cast<double>(p[i]) * p[i];
      }
    }
    count += static_cast<std::size_t>(H) * W;
  }
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[static_cast<std::size_t>(c)] / static_cast<double>(count);
    double var = sq[static_cast<std::size_t>(c)] / static_cast<double>(count) - mean * mean;
    if (var < 0) var = 0;
    double sd = std::sqrt(var);
    if (sd < 1e-8) {
      sd = 1.0;
      stats.zero_std_fallback = true;
      std::cerr << "warning: channel " << c << " has zero spread on train; using std 1\n";
    }
    stats.mean[static_cast<std::size_t>(c)] = mean;
    stats.stdev[static_cast<std::size_t>(c)] = sd;
  }
  for (auto& s : ds.samples) apply_normalization(s.image, stats);
  return stats;
}

void apply_normalization(Tensor<float>& image, const NormStats& stats) {
  const int H = image.dim(1), W = image.dim(2);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int c = 0; c < 3; ++c) {
    const float m = static_cast<float>(stats.mean[static_cast<std::size_t>(c)]);
    const float inv = static_cast<float>(1.0 / stats.stdev[static_cast<std::size_t>(c)]);
    float* p = image.data() + static_cast<std::size_t>(c) * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - m) * inv;
  }
}

std::string format_split_manifest(const Dataset& ds, const DatasetSplit& split) {
  std::vector<const char*> tag(ds.samples.size(), "");
  for (int i : split.train) tag[static_cast<std::size_t>(i)] = "train";
  for (int i : split.validation) tag[static_cast<std::size_t>(i)] = "validation";
  for (int i : split.test) tag[static_cast<std::size_t>(i)] = "test";
  std::ostringstream os;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    os << ds.samples[i].id << "\t" << tag[i] << "\n";
  }
  return os.str();
}

Tensor<float> assemble_batch(const Dataset& ds, const std::vector<int>& indices,
                             std::size_t first, std::size_t count, std::vector<int>* labels) {
  if (count == 0 || first + count > indices.size()) {
    throw Error("assemble_batch: bad range");
  }
  const auto& proto = ds.samples[static_cast<std::size_t>(indices[first])].image;
  const int H = proto.dim(1), W = proto.dim(2);
  Tensor<float> batch({static_cast<int>(count), 3, H, W});
  if (labels) labels->clear();
  const std::size_t per = static_cast<std::size_t>(3) * H * W;
  for (std::size_t b = 0; b < count; ++b) {
    const auto& s = ds.samples[static_cast<std::size_t>(indices[first + b])];
    if (s.image.dim(1) != H || s.image.dim(2) != W) {
      throw ShapeError("assemble_batch: inconsistent image extents in dataset");
    }
    std::copy_n(s.image.data(), per, batch.data() + b * per);
    if (labels) labels->push_back(s.label);
  }
  return batch;
}

}  // namespace cytonet
