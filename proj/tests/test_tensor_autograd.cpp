#include <doctest.h>

#include "cytonet/gradcheck.hpp"
#include "cytonet/nn_ops.hpp"
#include "oracles.hpp"

using namespace cytonet;
using oracles::rand_tensor;

namespace {

template <typename T>
using V = typename Tape<T>::Var;

// A small 5-layer graph: conv -> relu -> dense -> sigmoid -> weighted sum.
template <typename T>
V<T> five_layer_graph(Tape<T>& t, V<T> x, const Tensor<T>& w_conv, const Tensor<T>& w_fc,
                      const Tensor<T>& probe) {
  auto wc = t.leaf(w_conv, false);
  auto h = ops::conv2d(t, x, wc, std::optional<V<T>>{}, 1, 1);
  h = ops::relu(t, h);
  h = ops::flatten2(t, h);
  auto wf = t.leaf(w_fc, false);
  h = ops::dense(t, h, wf, std::optional<V<T>>{});
  h = ops::sigmoid(t, h);
  auto p = t.leaf(probe, false);
  return ops::reduce_sum(t, ops::mul(t, h, p));
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor<float> t({2, 3});
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(Tensor<float>({0, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({2}, {1.0f}), ShapeError);
  CHECK(Tensor<float>::ones({4}).all_finite());
  Tensor<double> inf_t({1}, {std::numeric_limits<double>::infinity()});
  CHECK_FALSE(inf_t.all_finite());
}

TEST_CASE("non-finite op output aborts with the offending node") {
  Tape<float> t;
  auto x = t.leaf(Tensor<float>::full({2}, 3e38f));
  CHECK_THROWS_WITH_AS(ops::add(t, x, x), doctest::Contains("add"), NumericError);
}

TEST_CASE("forward: single relu") {
  Tape<float> t;
  auto x = t.leaf(Tensor<float>::from({3}, {-1.0f, 0.0f, 2.0f}));
  auto y = ops::relu(t, x);
  CHECK(t.value(y) == Tensor<float>::from({3}, {0.0f, 0.0f, 2.0f}));
}

TEST_CASE("forward: identity graph returns the input unchanged") {
  Tape<double> t;
  Tensor<double> x = Tensor<double>::from({2, 2}, {1.5, -2.0, 0.25, 9.0});
  auto v = t.leaf(x);
  CHECK(t.value(v) == x);
}

TEST_CASE("forward: 1x1 convolution with unit weight and zero bias is the identity") {
  Tape<float> t;
  Rng rng(3);
  Tensor<float> img = rand_tensor<float>(rng, {1, 1, 3, 3});
  auto x = t.leaf(img);
  auto w = t.leaf(Tensor<float>::ones({1, 1, 1, 1}), false);
  auto b = t.leaf(Tensor<float>::zeros({1}), false);
  auto y = ops::conv2d(t, x, w, std::optional<V<float>>(b), 1, 0);
  CHECK(t.value(y).vec() == img.vec());
}

TEST_CASE("backward: f(x) = x*x at x = 3 gives gradient 6") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>::scalar(3.0));
  auto y = ops::mul(t, x, x);
  t.backward(y);
  CHECK(t.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward: f(x) = sum(W x) gives column sums of W") {
  Tape<double> t;
  Tensor<double> w_val = Tensor<double>::from({2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto w = t.leaf(w_val, false);
  auto x = t.leaf(Tensor<double>::from({2, 1}, {5.0, 7.0}));
  auto y = ops::reduce_sum(t, ops::matmul(t, w, x));
  t.backward(y);
  const auto& g = t.grad(x);
  CHECK(g[0] == doctest::Approx(4.0));  // col 0: 1 + 3
  CHECK(g[1] == doctest::Approx(6.0));  // col 1: 2 + 4
}

TEST_CASE("backward errors") {
  SUBCASE("selector out of range") {
    Tape<float> t;
    auto x = t.leaf(Tensor<float>::ones({3}));
    auto y = ops::relu(t, x);
    CHECK_THROWS_AS(t.backward_select(y, 7), Error);
  }
  SUBCASE("backward on a non-recording tape") {
    Tape<float> t(false);
    auto x = t.leaf(Tensor<float>::ones({1}));
    CHECK_THROWS_AS(t.backward(x), Error);
  }
  SUBCASE("backward twice") {
    Tape<float> t;
    auto x = t.leaf(Tensor<float>::ones({1}));
    auto y = ops::relu(t, x);
    t.backward(y);
    CHECK_THROWS_AS(t.backward(y), Error);
  }
}

TEST_CASE("finite_difference_gradient oracle") {
  SUBCASE("sum of squares") {
    auto f = [](const Tensor<double>& x) {
      double s = 0;
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * x[i];
      return s;
    };
    const auto g = finite_difference_gradient<double>(f, Tensor<double>::from({2}, {1.0, 2.0}), 1e-4);
    CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-6));
  }
  SUBCASE("constant function gives zeros") {
    auto f = [](const Tensor<double>&) { return 42.0; };
    const auto g = finite_difference_gradient<double>(f, Tensor<double>::ones({5}), 1e-4);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
  }
  SUBCASE("softmax component 0 at logits [0,0]") {
    auto f = [](const Tensor<double>& x) {
      const double m = std::max(x[0], x[1]);
      const double e0 = std::exp(x[0] - m), e1 = std::exp(x[1] - m);
      return e0 / (e0 + e1);
    };
    const auto g = finite_difference_gradient<double>(f, Tensor<double>::zeros({2}), 1e-4);
    CHECK(g[0] == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(g[1] == doctest::Approx(-0.25).epsilon(1e-6));
  }
  SUBCASE("non-finite probe value is an error") {
    auto f = [](const Tensor<double>& x) { return std::log(x[0]); };
    CHECK_THROWS_AS(
        finite_difference_gradient<double>(f, Tensor<double>::zeros({1}), 1e-4), NumericError);
  }
  SUBCASE("non-positive step is an error") {
    auto f = [](const Tensor<double>&) { return 0.0; };
    CHECK_THROWS_AS(finite_difference_gradient<double>(f, Tensor<double>::ones({1}), 0.0),
                    NumericError);
  }
}

TEST_CASE("random 5-layer graph matches finite differences") {
  SUBCASE("64-bit, step 1e-3 * scale, tolerance 1e-5") {
    const auto summary = oracles::run_fd_instances(12, 0.5, [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor<double> w_conv = rand_tensor<double>(rng, {2, 2, 3, 3}, -0.6, 0.6);
      Tensor<double> w_fc = rand_tensor<double>(rng, {3, 2 * 4 * 4}, -0.6, 0.6);
      Tensor<double> probe = rand_tensor<double>(rng, {1, 3});
      Tensor<double> x0 = rand_tensor<double>(rng, {1, 2, 4, 4});
      double scale = 1.0;
      for (std::size_t i = 0; i < x0.size(); ++i)
        scale = std::max(scale, std::abs(static_cast<double>(x0[i])));
      return check_gradient<double>(
          [&](Tape<double>& t, V<double> v) { return five_layer_graph(t, v, w_conv, w_fc, probe); },
          x0, 1e-3 * scale);
    });
    CHECK(summary.accepted == 12);
    CHECK(summary.max_rel_err < 1e-5);
  }
  SUBCASE("32-bit, tolerance 1e-3") {
    const auto summary = oracles::run_fd_instances(12, 0.5, [](std::uint64_t seed) {
      Rng rng(hash_combine(99, seed));
      Tensor<float> w_conv = rand_tensor<float>(rng, {2, 2, 3, 3}, -0.6, 0.6);
      Tensor<float> w_fc = rand_tensor<float>(rng, {3, 2 * 4 * 4}, -0.6, 0.6);
      Tensor<float> probe = rand_tensor<float>(rng, {1, 3});
      Tensor<float> x0 = rand_tensor<float>(rng, {1, 2, 4, 4});
      double scale = 1.0;
      for (std::size_t i = 0; i < x0.size(); ++i)
        scale = std::max(scale, std::abs(static_cast<double>(x0[i])));
      return check_gradient<float>(
          [&](Tape<float>& t, V<float> v) { return five_layer_graph(t, v, w_conv, w_fc, probe); },
          x0, 1e-3 * scale);
    });
    CHECK(summary.accepted == 12);
    CHECK(summary.max_rel_err < 1e-3);
  }
}

TEST_CASE("gradient accumulation is linear") {
  Rng rng(17);
  const Tensor<double> x0 = rand_tensor<double>(rng, {6});
  const double a = 1.7, b = -0.4;

  auto grad_of = [&](auto&& builder) {
    Tape<double> t;
    auto x = t.leaf(x0);
    t.backward(builder(t, x));
    return t.grad(x);
  };
  auto f = [](Tape<double>& t, V<double> x) { return ops::reduce_sum(t, ops::relu(t, x)); };
  auto g = [](Tape<double>& t, V<double> x) { return ops::reduce_sum(t, ops::sigmoid(t, x)); };

  const Tensor<double> gf = grad_of(f);
  const Tensor<double> gg = grad_of(g);
  const Tensor<double> gc = grad_of([&](Tape<double>& t, V<double> x) {
    return ops::add(t, ops::scale(t, f(t, x), a), ops::scale(t, g(t, x), b));
  });
  for (std::size_t i = 0; i < gc.size(); ++i) {
    CHECK(gc[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward evaluation is deterministic across runs") {
  auto run = [] {
    Rng rng(5);
    Tensor<float> x0 = rand_tensor<float>(rng, {2, 3, 8, 8});
    Tensor<float> w = rand_tensor<float>(rng, {4, 3, 3, 3});
    Tape<float> t;
    auto x = t.leaf(x0, false);
    auto wv = t.leaf(w, false);
    auto y = ops::relu(t, ops::conv2d(t, x, wv, std::optional<V<float>>{}, 2, 1));
    return t.value(y);
  };
  const auto a = run();
  const auto b = run();
  CHECK(a == b);
}

TEST_CASE("parameter gradients have parameter shapes after backward") {
  Tape<double> t;
  Rng rng(8);
  Tensor<double> w_val = rand_tensor<double>(rng, {3, 2, 3, 3});
  Tensor<double> b_val = rand_tensor<double>(rng, {3});
  auto x = t.leaf(rand_tensor<double>(rng, {2, 2, 5, 5}), false);
  auto w = t.leaf(w_val, true);
  auto b = t.leaf(b_val, true);
  auto y = ops::reduce_sum(t, ops::conv2d(t, x, w, std::optional<V<double>>(b), 1, 1));
  t.backward(y);
  CHECK(t.grad(w).shape() == w_val.shape());
  CHECK(t.grad(b).shape() == b_val.shape());
}
