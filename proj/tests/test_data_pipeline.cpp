#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "cytonet/dataset.hpp"
#include "cytonet/image.hpp"
#include "cytonet/synth.hpp"
#include "oracles.hpp"

using namespace cytonet;
namespace fs = std::filesystem;

namespace {

Dataset dummy_dataset(const std::vector<int>& class_sizes) {
  Dataset ds;
  for (std::size_t c = 0; c < class_sizes.size(); ++c) {
    ds.class_names.push_back("class" + std::to_string(c));
  }
  for (std::size_t c = 0; c < class_sizes.size(); ++c) {
    for (int i = 0; i < class_sizes[c]; ++i) {
      Sample s;
      s.image = Tensor<float>::full({3, 4, 4}, static_cast<float>(c) * 0.1f);
      s.label = static_cast<int>(c);
      s.id = ds.class_names[c] + "/" + std::to_string(i);
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cytonet_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("png and bmp codecs round-trip") {
  Rng rng(2);
  ImageU8 img;
  img.width = 13;
  img.height = 9;
  img.pixels.resize(13 * 9 * 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));

  SUBCASE("png") {
    const ImageU8 back = decode_png(encode_png(img));
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.pixels == img.pixels);
  }
  SUBCASE("bmp") {
    const ImageU8 back = decode_bmp(encode_bmp(img));
    CHECK(back.pixels == img.pixels);
  }
  SUBCASE("garbage is rejected with the source named") {
    std::vector<std::uint8_t> junk(64, 0x5a);
    CHECK_THROWS_WITH_AS(decode_image(junk, "bad_file.png"), doctest::Contains("bad_file.png"),
                         IoError);
  }
}

TEST_CASE("synthetic generation is deterministic") {
  SyntheticSpec spec = SyntheticSpec::default_five(48, 3, 21);
  const Dataset a = synthesize_dataset(spec);
  const Dataset b = synthesize_dataset(spec);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].image == b.samples[i].image);
    CHECK(a.samples[i].id == b.samples[i].id);
  }
}

TEST_CASE("synthetic spec text round-trips") {
  SyntheticSpec spec = SyntheticSpec::default_five(64, 5, 9);
  spec.single_cell = true;
  const SyntheticSpec back = parse_synthetic_spec(format_synthetic_spec(spec));
  CHECK(format_synthetic_spec(back) == format_synthetic_spec(spec));
}

TEST_CASE("identical parameter tuples across classes are rejected") {
  SyntheticSpec spec = SyntheticSpec::default_five(48, 2, 4);
  spec.classes[1] = spec.classes[0];
  spec.classes[1].name = "different_name_same_params";
  CHECK_THROWS_AS(synthesize_dataset(spec), ConfigError);
}

TEST_CASE("multi-cell images carry at least count_min dark components") {
  SyntheticSpec spec = SyntheticSpec::default_five(96, 6, 17);
  // the stated scenario: count range (4,9)
  spec.classes = {{"a_fourplus", 4, 9, 5.0, 8.0, 1.0, 0.6, 0.7, 0.02},
                  {"b_other", 2, 3, 9.0, 12.0, 1.3, 0.8, 0.9, 0.02}};
  const Dataset ds = synthesize_dataset(spec);
  for (const auto& s : ds.samples) {
    const int components = oracles::count_dark_components(s.image);
    if (s.label == 0) {
      CAPTURE(s.id);
      CHECK(components >= 4);
    }
  }
}

TEST_CASE("single-cell mode produces exactly one component") {
  SyntheticSpec spec = SyntheticSpec::default_five(96, 4, 19);
  spec.single_cell = true;
  const Dataset ds = synthesize_dataset(spec);
  for (const auto& s : ds.samples) {
    CAPTURE(s.id);
    CHECK(oracles::count_dark_components(s.image) == 1);
  }
}

TEST_CASE("stratified split follows the documented rounding") {
  SUBCASE("223 samples: 157 train / 44 validation / 22 test") {
    const Dataset ds = dummy_dataset({223, 10});
    const DatasetSplit split = stratified_split(ds, {0.7, 0.2, 0.1}, 5);
    const auto counts = split.per_class_counts(ds);
    CHECK(counts[0][0] == 157);
    CHECK(counts[1][0] == 44);
    CHECK(counts[2][0] == 22);
    // class of 10: exact fractions 7 / 2 / 1
    CHECK(counts[0][1] == 7);
    CHECK(counts[1][1] == 2);
    CHECK(counts[2][1] == 1);
  }
  SUBCASE("splits partition the dataset") {
    const Dataset ds = dummy_dataset({37, 19, 8});
    const DatasetSplit split = stratified_split(ds, {0.7, 0.2, 0.1}, 9);
    std::set<int> seen;
    for (const auto* part : {&split.train, &split.validation, &split.test}) {
      for (int i : *part) {
        CHECK(seen.insert(i).second);  // disjoint
      }
    }
    CHECK(seen.size() == ds.samples.size());  // exhaustive
  }
  SUBCASE("reproducible for a fixed seed, different across seeds") {
    const Dataset ds = dummy_dataset({30, 30});
    const DatasetSplit a = stratified_split(ds, {0.7, 0.2, 0.1}, 4);
    const DatasetSplit b = stratified_split(ds, {0.7, 0.2, 0.1}, 4);
    const DatasetSplit c = stratified_split(ds, {0.7, 0.2, 0.1}, 5);
    CHECK(a.train == b.train);
    CHECK(a.validation == b.validation);
    CHECK(a.test == b.test);
    CHECK(a.train != c.train);
  }
  SUBCASE("class too small") {
    const Dataset ds = dummy_dataset({5, 2});
    CHECK_THROWS_AS(stratified_split(ds, {0.7, 0.2, 0.1}, 1), ConfigError);
  }
  SUBCASE("fractions must sum to 1") {
    const Dataset ds = dummy_dataset({10, 10});
    CHECK_THROWS_AS(stratified_split(ds, {0.7, 0.2, 0.2}, 1), ConfigError);
  }
}

TEST_CASE("normalization uses train statistics only") {
  SyntheticSpec spec = SyntheticSpec::default_five(48, 8, 23);
  Dataset ds = synthesize_dataset(spec);
  const DatasetSplit split = stratified_split(ds, {0.7, 0.2, 0.1}, 23);

  // train-only statistics computed independently before normalization
  std::array<double, 3> mean{}, sq{};
  std::size_t count = 0;
  for (int idx : split.train) {
    const auto& img = ds.samples[static_cast<std::size_t>(idx)].image;
    const std::size_t plane = static_cast<std::size_t>(img.dim(1)) * img.dim(2);
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = img[static_cast<std::size_t>(c) * plane + i];
        mean[static_cast<std::size_t>(c)] += v;
        sq[static_cast<std::size_t>(c)] += v * v;
      }
    count += plane;
  }
  for (int c = 0; c < 3; ++c) {
    mean[static_cast<std::size_t>(c)] /= static_cast<double>(count);
    sq[static_cast<std::size_t>(c)] =
        std::sqrt(sq[static_cast<std::size_t>(c)] / static_cast<double>(count) -
                  mean[static_cast<std::size_t>(c)] * mean[static_cast<std::size_t>(c)]);
  }

  const NormStats stats = normalize_in_place(ds, split);
  for (int c = 0; c < 3; ++c) {
    CHECK(stats.mean[static_cast<std::size_t>(c)] ==
          doctest::Approx(mean[static_cast<std::size_t>(c)]).epsilon(1e-9));
    CHECK(stats.stdev[static_cast<std::size_t>(c)] ==
          doctest::Approx(sq[static_cast<std::size_t>(c)]).epsilon(1e-9));
  }

  // after normalization the train split is standardized
  std::array<double, 3> m2{}, s2{};
  for (int idx : split.train) {
    const auto& img = ds.samples[static_cast<std::size_t>(idx)].image;
    const std::size_t plane = static_cast<std::size_t>(img.dim(1)) * img.dim(2);
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = img[static_cast<std::size_t>(c) * plane + i];
        m2[static_cast<std::size_t>(c)] += v;
        s2[static_cast<std::size_t>(c)] += v * v;
      }
  }
  for (int c = 0; c < 3; ++c) {
    const double m = m2[static_cast<std::size_t>(c)] / static_cast<double>(count);
    const double sd = std::sqrt(s2[static_cast<std::size_t>(c)] / static_cast<double>(count) - m * m);
    CHECK(std::abs(m) < 1e-5);
    CHECK(sd == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("zero-spread channel falls back to std 1") {
  Dataset ds;
  ds.class_names = {"a", "b"};
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < 4; ++i) {
      Sample s;
      s.image = Tensor<float>::full({3, 4, 4}, 0.25f);  // every image identical
      s.label = c;
      s.id = ds.class_names[static_cast<std::size_t>(c)] + "/" + std::to_string(i);
      ds.samples.push_back(std::move(s));
    }
  }
  const DatasetSplit split = stratified_split(ds, {0.7, 0.2, 0.1}, 2);
  const NormStats stats = normalize_in_place(ds, split);
  CHECK(stats.zero_std_fallback);
  for (int c = 0; c < 3; ++c) {
    CHECK(stats.stdev[static_cast<std::size_t>(c)] == 1.0);
    CHECK(stats.mean[static_cast<std::size_t>(c)] == doctest::Approx(0.25).epsilon(1e-6));
  }
  // values become mean-centered
  CHECK(ds.samples[0].image[0] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("directory loading") {
  const fs::path root = fresh_dir("load");
  SyntheticSpec spec = SyntheticSpec::default_five(32, 4, 29);
  write_synthetic_dataset(spec, root);

  SUBCASE("loads every class with the synthesized counts, resized") {
    const Dataset ds = load_image_directory(root, 24);
    CHECK(ds.num_classes() == 5);
    CHECK(ds.samples.size() == 20);
    for (const auto& s : ds.samples) {
      CHECK(s.image.shape() == Shape{3, 24, 24});
      CHECK(s.image.all_finite());
    }
    // lexicographic class order
    CHECK(std::is_sorted(ds.class_names.begin(), ds.class_names.end()));
  }
  SUBCASE("re-running yields identical ordering") {
    const Dataset a = load_image_directory(root, 32);
    const Dataset b = load_image_directory(root, 32);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(a.samples[i].id == b.samples[i].id);
  }
  SUBCASE("empty root is a structured error") {
    const fs::path empty = fresh_dir("empty");
    CHECK_THROWS_AS(load_image_directory(empty, 32), IoError);
  }
  SUBCASE("undecodable file is reported with its path, skipped when lenient") {
    const fs::path broken = root / "c0_pair_giant" / "broken.png";
    {
      std::ofstream f(broken, std::ios::binary);
      f << "not a png";
    }
    CHECK_THROWS_WITH_AS(load_image_directory(root, 32), doctest::Contains("broken.png"), IoError);
    const Dataset ds = load_image_directory(root, 32, true);
    CHECK(ds.samples.size() == 20);  // skipped
    fs::remove(broken);
  }
}

TEST_CASE("synthetic classes are separable by pixel means plus blob count") {
  SyntheticSpec spec = SyntheticSpec::default_five(96, 20, 31);
  const Dataset ds = synthesize_dataset(spec);

  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  for (const auto& s : ds.samples) {
    const std::size_t plane = static_cast<std::size_t>(s.image.dim(1)) * s.image.dim(2);
    std::vector<double> f(4, 0.0);
    for (int c = 0; c < 3; ++c) {
      double acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += s.image[static_cast<std::size_t>(c) * plane + i];
      f[static_cast<std::size_t>(c)] = acc / static_cast<double>(plane);
    }
    f[3] = oracles::count_dark_components(s.image) / 10.0;
    features.push_back(std::move(f));
    labels.push_back(s.label);
  }
  oracles::LinearClassifier clf;
  clf.fit(features, labels, 5);
  int correct = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (clf.predict(features[i]) == labels[i]) ++correct;
  }
  const double accuracy = static_cast<double>(correct) / static_cast<double>(features.size());
  CHECK(accuracy >= 0.8);
}

TEST_CASE("split manifest lists every sample exactly once") {
  const Dataset ds = dummy_dataset({6, 5});
  const DatasetSplit split = stratified_split(ds, {0.7, 0.2, 0.1}, 3);
  const std::string manifest = format_split_manifest(ds, split);
  std::size_t lines = 0;
  for (char c : manifest) {
    if (c == '\n') ++lines;
  }
  CHECK(lines == ds.samples.size());
  CHECK(manifest.find("class0/0\t") != std::string::npos);
}
