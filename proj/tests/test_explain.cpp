#include <doctest.h>

#include "cytonet/explain.hpp"
#include "cytonet/render.hpp"
#include "cytonet/synth.hpp"
#include "cytonet/trainer.hpp"
#include "oracles.hpp"

using namespace cytonet;
using oracles::rand_tensor;

namespace {

template <typename T>
using V = typename Tape<T>::Var;

/// Logit function of a plain linear map: logits = x_flat * W^T (no bias).
template <typename T>
LogitFn<T> linear_logit_fn(const Tensor<T>& w) {
  return [w](Tape<T>& t, V<T> x) {
    auto flat = ops::flatten2(t, x);
    auto wv = t.leaf(w, false);
    return ops::dense(t, flat, wv, std::optional<V<T>>{});
  };
}

}  // namespace

TEST_CASE("integrated gradients: baseline equal to the input gives all zeros") {
  Rng rng(3);
  Tensor<float> w = rand_tensor<float>(rng, {2, 12});
  Tensor<float> x = rand_tensor<float>(rng, {3, 2, 2});
  const AttributionMap map = integrated_gradients(linear_logit_fn(w), x, x, 8, 1);
  for (std::size_t i = 0; i < map.attributions.size(); ++i) CHECK(map.attributions[i] == 0.0);
  CHECK(map.completeness_gap == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("integrated gradients: linear model equals w_i * x_i for any step count") {
  Rng rng(5);
  Tensor<float> w = rand_tensor<float>(rng, {3, 12});
  Tensor<float> x = rand_tensor<float>(rng, {3, 2, 2});
  Tensor<float> baseline({3, 2, 2});
  const int target = 2;

  Tensor<double> reference;
  for (int m : {1, 2, 3, 7, 16, 50}) {
    const AttributionMap map = integrated_gradients(linear_logit_fn(w), x, baseline, m, target);
    for (std::size_t i = 0; i < map.attributions.size(); ++i) {
      const double expected =
          static_cast<double>(w.at2(target, static_cast<int>(i))) * static_cast<double>(x[i]);
      CHECK(map.attributions[i] == doctest::Approx(expected).epsilon(1e-13));
    }
    if (m == 1) {
      reference = map.attributions;
    } else {
      for (std::size_t i = 0; i < reference.size(); ++i) {
        CHECK(map.attributions[i] == doctest::Approx(reference[i]).epsilon(1e-13));
      }
    }
    // quadrature is exact for a constant integrand
    CHECK(map.completeness_gap < 1e-5 * std::abs(map.output_at_input - map.output_at_baseline) + 1e-9);
  }
}

TEST_CASE("integrated gradients input validation") {
  Rng rng(7);
  Tensor<float> w = rand_tensor<float>(rng, {2, 4});
  Tensor<float> x = rand_tensor<float>(rng, {1, 2, 2});
  CHECK_THROWS_AS(integrated_gradients(linear_logit_fn(w), x, Tensor<float>({1, 2, 3}), 4, 0),
                  ShapeError);
  CHECK_THROWS_AS(integrated_gradients(linear_logit_fn(w), x, x, 0, 0), ConfigError);
  CHECK_THROWS_AS(integrated_gradients(linear_logit_fn(w), x, x, 4, 9), Error);
}

TEST_CASE("saliency") {
  Rng rng(9);
  SUBCASE("constant model gives zero saliency") {
    Tensor<float> w({2, 12});  // zero weights: logits are constant 0
    Tensor<float> x = rand_tensor<float>(rng, {3, 2, 2});
    const Tensor<double> g = saliency(linear_logit_fn(w), x, 0);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
  }
  SUBCASE("linear model: saliency equals the weight row for any input") {
    Tensor<float> w = rand_tensor<float>(rng, {2, 12});
    for (int trial = 0; trial < 3; ++trial) {
      Tensor<float> x = rand_tensor<float>(rng, {3, 2, 2});
      const Tensor<double> g = saliency(linear_logit_fn(w), x, 1);
      for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(g[i] == doctest::Approx(static_cast<double>(w.at2(1, static_cast<int>(i)))).epsilon(1e-12));
      }
    }
  }
  SUBCASE("saliency is the small-delta, one-step limit of integrated gradients") {
    // smooth model (sigmoid readout) so the gradient varies slowly
    Tensor<double> w = rand_tensor<double>(rng, {2, 8}, -0.7, 0.7);
    LogitFn<double> fn = [&w](Tape<double>& t, V<double> x) {
      auto flat = ops::flatten2(t, x);
      auto h = ops::sigmoid(t, ops::dense(t, flat, t.leaf(w, false), std::optional<V<double>>{}));
      auto w2 = t.leaf(Tensor<double>::from({2, 2}, {0.9, -0.3, 0.4, 1.1}), false);
      return ops::dense(t, h, w2, std::optional<V<double>>{});
    };
    Tensor<double> x = rand_tensor<double>(rng, {2, 2, 2});
    const Tensor<double> sal = saliency(fn, x, 0);
    const double delta = 1e-4;
    Tensor<double> baseline = x;
    for (std::size_t i = 0; i < baseline.size(); ++i) baseline[i] -= delta;
    const AttributionMap map = integrated_gradients(fn, x, baseline, 1, 0);
    for (std::size_t i = 0; i < sal.size(); ++i) {
      CHECK(map.attributions[i] / delta == doctest::Approx(sal[i]).epsilon(1e-3));
    }
  }
}

TEST_CASE("sensitivity: a pixel that changes the output receives attribution") {
  Rng rng(11);
  Tensor<float> w = rand_tensor<float>(rng, {2, 12}, 0.2, 1.0);  // strictly nonzero weights
  Tensor<float> x = rand_tensor<float>(rng, {3, 2, 2});
  Tensor<float> baseline = x;
  baseline[5] += 0.8f;  // differ in exactly one pixel
  const AttributionMap map = integrated_gradients(linear_logit_fn(w), x, baseline, 16, 0);
  CHECK(std::abs(map.output_at_input - map.output_at_baseline) > 1e-6);
  CHECK(map.attributions[5] != 0.0);
  for (std::size_t i = 0; i < map.attributions.size(); ++i) {
    if (i != 5) CHECK(map.attributions[i] == 0.0);
  }
}

TEST_CASE("implementation invariance: equivalent graphs yield equal attributions") {
  Rng rng(13);
  Tensor<float> w = rand_tensor<float>(rng, {2, 12});
  Tensor<float> half = w;
  for (std::size_t i = 0; i < half.size(); ++i) half[i] *= 0.5f;  // exact in binary

  LogitFn<float> split_fn = [half](Tape<float>& t, V<float> x) {
    auto flat = ops::flatten2(t, x);
    auto a = ops::dense(t, flat, t.leaf(half, false), std::optional<V<float>>{});
    auto b = ops::dense(t, flat, t.leaf(half, false), std::optional<V<float>>{});
    return ops::add(t, a, b);
  };
  Tensor<float> x = rand_tensor<float>(rng, {3, 2, 2});
  Tensor<float> baseline({3, 2, 2});
  const AttributionMap direct = integrated_gradients(linear_logit_fn(w), x, baseline, 32, 1);
  const AttributionMap split = integrated_gradients(split_fn, x, baseline, 32, 1);
  for (std::size_t i = 0; i < direct.attributions.size(); ++i) {
    CHECK(split.attributions[i] == doctest::Approx(direct.attributions[i]).epsilon(1e-6));
  }
}

TEST_CASE("completeness gap shrinks as steps double on a nonlinear model") {
  // small trained-ish model: random weights through relu nonlinearities
  Rng rng(17);
  Tensor<double> w1 = rand_tensor<double>(rng, {6, 12}, -0.8, 0.8);
  Tensor<double> w2 = rand_tensor<double>(rng, {3, 6}, -0.8, 0.8);
  LogitFn<double> fn = [&](Tape<double>& t, V<double> x) {
    auto flat = ops::flatten2(t, x);
    auto h = ops::relu(t, ops::dense(t, flat, t.leaf(w1, false), std::optional<V<double>>{}));
    return ops::dense(t, h, t.leaf(w2, false), std::optional<V<double>>{});
  };
  std::vector<double> medians;
  for (int m : {4, 16, 64}) {
    std::vector<double> gaps;
    Rng inner(19);
    for (int trial = 0; trial < 9; ++trial) {
      Tensor<double> x = rand_tensor<double>(inner, {3, 2, 2}, -1.0, 1.0);
      Tensor<double> baseline = rand_tensor<double>(inner, {3, 2, 2}, -0.2, 0.2);
      gaps.push_back(integrated_gradients(fn, x, baseline, m, 0).completeness_gap);
    }
    std::sort(gaps.begin(), gaps.end());
    medians.push_back(gaps[gaps.size() / 2]);
  }
  CHECK(medians[1] <= medians[0]);
  CHECK(medians[2] <= medians[1]);
}

TEST_CASE("attribution rendering") {
  Rng rng(23);
  ImageU8 img;
  img.width = 8;
  img.height = 8;
  img.pixels.resize(8 * 8 * 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));

  SUBCASE("zero attributions render the plain grayscale image") {
    bool all_zero = false;
    const ImageU8 out = render_attribution(img, Tensor<double>({3, 8, 8}), RenderMode::overlay,
                                           &all_zero);
    CHECK(all_zero);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const double gray = (0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
                             0.114 * img.at(y, x, 2)) / 255.0;
        const auto expected = static_cast<std::uint8_t>(std::lround(gray * 255.0));
        CHECK(out.at(y, x, 0) == expected);
        CHECK(out.at(y, x, 1) == expected);
        CHECK(out.at(y, x, 2) == expected);
      }
  }
  SUBCASE("single hot pixel saturates exactly one heatmap pixel") {
    Tensor<double> attr({3, 8, 8});
    attr[(1 * 8 + 3) * 8 + 5] = 2.5;  // channel 1, y=3, x=5
    const ImageU8 out = render_attribution(img, attr, RenderMode::raw);
    int saturated = 0, nonzero = 0;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        if (out.at(y, x, 1) == 255) ++saturated;
        if (out.at(y, x, 1) != 0) ++nonzero;
        CHECK(out.at(y, x, 0) == 0);
        CHECK(out.at(y, x, 2) == 0);
      }
    CHECK(saturated == 1);
    CHECK(nonzero == 1);
    CHECK(out.at(3, 5, 1) == 255);
  }
  SUBCASE("rendering is invariant to scaling the attribution map") {
    Tensor<double> attr({3, 8, 8});
    for (std::size_t i = 0; i < attr.size(); ++i)
      attr[i] = Rng(31 + i).uniform(-1.0, 1.0);
    Tensor<double> scaled = attr;
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= 10.0;
    const auto a = encode_png(render_attribution(img, attr, RenderMode::overlay));
    const auto b = encode_png(render_attribution(img, scaled, RenderMode::overlay));
    CHECK(a == b);
  }
}

TEST_CASE("completeness on a trained mini model") {
  // quick end-to-end: a few epochs on tiny synthetic data, then the gap at a
  // moderate step count stays within 2% of |F(x) - F(x')| per input median
  Dataset ds = synthesize_dataset(SyntheticSpec::default_five(32, 10, 43));
  const DatasetSplit split = stratified_split(ds, {0.7, 0.2, 0.1}, 43);
  normalize_in_place(ds, split);
  ModelConfig cfg = ModelConfig::mini(ModelFamily::densenet);
  cfg.input_resolution = 32;
  cfg.seed = 43;
  auto model = build_model<float>(cfg);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.seed = 43;
  train_model(*model, ds, split, tc);

  auto fn = model_logit_fn(*model, Mode::eval);
  std::vector<double> rel_gaps;
  for (int i = 0; i < 5; ++i) {
    const auto& sample = ds.samples[static_cast<std::size_t>(split.test[static_cast<std::size_t>(i)])];
    Tensor<float> baseline(sample.image.shape());
    const Tensor<float> probs = predict_probs(
        *model, Tensor<float>({1, 3, 32, 32}, sample.image.vec()));
    const int target = argmax_rows(probs)[0];
    const AttributionMap map = integrated_gradients(fn, sample.image, baseline, 96, target);
    const double denom = std::abs(map.output_at_input - map.output_at_baseline);
    if (denom > 1e-6) rel_gaps.push_back(map.completeness_gap / denom);
  }
  REQUIRE(!rel_gaps.empty());
  std::sort(rel_gaps.begin(), rel_gaps.end());
  CHECK(rel_gaps[rel_gaps.size() / 2] < 0.02);
}
