#include <doctest.h>

#include "cytonet/blocks.hpp"
#include "cytonet/gradcheck.hpp"
#include "oracles.hpp"

using namespace cytonet;
using oracles::rand_tensor;

namespace {

template <typename T>
using V = typename Tape<T>::Var;

// Randomizes every parameter of a block through its visitor.
template <typename Scalar, typename Block>
void randomize(Block& block, std::uint64_t seed, double lo = -0.5, double hi = 0.5) {
  ModelVisitor<Scalar> v;
  int slot = 0;
  v.param = [&](const std::string&, Param<Scalar>& p) {
    Rng rng(hash_combine(seed, static_cast<std::uint64_t>(++slot)));
    for (std::size_t i = 0; i < p.value.size(); ++i)
      p.value[i] = static_cast<Scalar>(rng.uniform(lo, hi));
  };
  v.buffer = [](const std::string&, Tensor<Scalar>&) {};
  v.counter = [](const std::string&, std::int64_t&) {};
  block.visit(v, "b");
}

}  // namespace

TEST_CASE("channel attention") {
  SUBCASE("config errors: r >= C and r not dividing C") {
    CHECK_THROWS_AS(ChannelAttention<float>(4, 4), ConfigError);
    CHECK_THROWS_AS(ChannelAttention<float>(6, 4), ConfigError);
  }
  SUBCASE("zero-initialized up-projection gives s = 0.5, output = 0.5 x") {
    ChannelAttention<float> ca(8, 4);
    randomize<float>(ca, 5);
    for (std::size_t i = 0; i < ca.up.weight.value.size(); ++i) ca.up.weight.value[i] = 0;
    for (std::size_t i = 0; i < ca.up.bias.value.size(); ++i) ca.up.bias.value[i] = 0;
    Rng rng(6);
    Tensor<float> x = rand_tensor<float>(rng, {2, 8, 3, 3});
    Tape<float> t;
    auto y = ca.forward(t, t.leaf(x, false));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(t.value(y)[i] == 0.5f * x[i]);
  }
  SUBCASE("an all-zero channel stays all-zero regardless of s") {
    ChannelAttention<float> ca(4, 2);
    randomize<float>(ca, 7);
    Rng rng(8);
    Tensor<float> x = rand_tensor<float>(rng, {1, 4, 4, 4});
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx) x.at4(0, 2, y, xx) = 0.0f;
    Tape<float> t;
    auto out = ca.forward(t, t.leaf(x, false));
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx) CHECK(t.value(out).at4(0, 2, y, xx) == 0.0f);
  }
  SUBCASE("matches a straight-line pool->affine->sigmoid oracle") {
    ChannelAttention<float> ca(6, 3);
    randomize<float>(ca, 9);
    Rng rng(10);
    Tensor<float> x = rand_tensor<float>(rng, {2, 6, 5, 5});
    Tape<float> t;
    auto out = ca.forward(t, t.leaf(x, false));

    // independent reimplementation
    for (int b = 0; b < 2; ++b) {
      std::vector<double> pooled(6, 0.0);
      for (int c = 0; c < 6; ++c) {
        double acc = 0;
        for (int yy = 0; yy < 5; ++yy)
          for (int xx = 0; xx < 5; ++xx) acc += x.at4(b, c, yy, xx);
        pooled[static_cast<std::size_t>(c)] = acc / 25.0;
      }
      std::vector<double> hidden(2, 0.0);
      for (int h = 0; h < 2; ++h) {
        double acc = ca.down.bias.value[static_cast<std::size_t>(h)];
        for (int c = 0; c < 6; ++c) acc += ca.down.weight.value.at2(h, c) * pooled[static_cast<std::size_t>(c)];
        hidden[static_cast<std::size_t>(h)] = acc > 0 ? acc : 0;
      }
      for (int c = 0; c < 6; ++c) {
        double acc = ca.up.bias.value[static_cast<std::size_t>(c)];
        for (int h = 0; h < 2; ++h) acc += ca.up.weight.value.at2(c, h) * hidden[static_cast<std::size_t>(h)];
        const double s = 1.0 / (1.0 + std::exp(-acc));
        CHECK(s > 0.0);
        CHECK(s < 1.0);
        for (int yy = 0; yy < 5; ++yy)
          for (int xx = 0; xx < 5; ++xx) {
            CHECK(t.value(out).at4(b, c, yy, xx) ==
                  doctest::Approx(s * x.at4(b, c, yy, xx)).epsilon(5e-5));
          }
      }
    }
  }
  SUBCASE("channel attention preserves the spatial argmax of each channel") {
    ChannelAttention<float> ca(4, 2);
    randomize<float>(ca, 11);
    Rng rng(12);
    Tensor<float> x = rand_tensor<float>(rng, {1, 4, 6, 6}, 0.1, 1.0);
    Tape<float> t;
    auto out = ca.forward(t, t.leaf(x, false));
    for (int c = 0; c < 4; ++c) {
      int bx = 0, by = 0, ox = 0, oy = 0;
      for (int yy = 0; yy < 6; ++yy)
        for (int xx = 0; xx < 6; ++xx) {
          if (x.at4(0, c, yy, xx) > x.at4(0, c, by, bx)) {
            by = yy;
            bx = xx;
          }
          if (t.value(out).at4(0, c, yy, xx) > t.value(out).at4(0, c, oy, ox)) {
            oy = yy;
            ox = xx;
          }
        }
      CHECK(by == oy);
      CHECK(bx == ox);
    }
  }
}

TEST_CASE("RCAB") {
  SUBCASE("zero-initialized residual convolutions make it the identity") {
    RCAB<float> rcab(4, 2);
    randomize<float>(rcab, 13);
    for (std::size_t i = 0; i < rcab.conv2.weight.value.size(); ++i) rcab.conv2.weight.value[i] = 0;
    for (std::size_t i = 0; i < rcab.conv2.bias->value.size(); ++i) rcab.conv2.bias->value[i] = 0;
    Rng rng(14);
    Tensor<float> x = rand_tensor<float>(rng, {2, 4, 5, 5});
    Tape<float> t;
    auto y = rcab.forward(t, t.leaf(x, false));
    CHECK(t.value(y) == x);
  }
  SUBCASE("doubling x doubles the pre-attention signal (linear configuration)") {
    RCAB<double> rcab(4, 2);
    randomize<double>(rcab, 15);
    rcab.identity_activation = true;
    for (std::size_t i = 0; i < rcab.conv1.bias->value.size(); ++i) rcab.conv1.bias->value[i] = 0;
    for (std::size_t i = 0; i < rcab.conv2.bias->value.size(); ++i) rcab.conv2.bias->value[i] = 0;
    Rng rng(16);
    Tensor<double> x = rand_tensor<double>(rng, {1, 4, 4, 4});
    Tensor<double> x2 = x;
    for (std::size_t i = 0; i < x2.size(); ++i) x2[i] *= 2.0;

    Tape<double> t1;
    V<double> pre1{};
    rcab.forward(t1, t1.leaf(x, false), &pre1);
    Tape<double> t2;
    V<double> pre2{};
    rcab.forward(t2, t2.leaf(x2, false), &pre2);
    for (std::size_t i = 0; i < t1.value(pre1).size(); ++i) {
      CHECK(t2.value(pre2)[i] == 2.0 * t1.value(pre1)[i]);
    }
  }
  SUBCASE("gradient check on a 2-channel 4x4 instance") {
    const auto summary = oracles::run_fd_instances(4, 0.5, [](std::uint64_t seed) {
      RCAB<double> rcab(2, 1);
      randomize<double>(rcab, hash_combine(seed, 77));
      Rng rng(seed);
      Tensor<double> probe = rand_tensor<double>(rng, {1, 2, 4, 4});
      return check_gradient<double>(
          [&](Tape<double>& t, V<double> x) {
            auto p = t.leaf(probe, false);
            return ops::reduce_sum(t, ops::mul(t, rcab.forward(t, x), p));
          },
          rand_tensor<double>(rng, {1, 2, 4, 4}), 1e-4);
    });
    CHECK(summary.accepted == 4);
    CHECK(summary.max_rel_err < 1e-5);
  }
}

TEST_CASE("residual group is a shape-preserving endomorphism") {
  ResidualGroup<float> group(6, 2, 3);
  randomize<float>(group, 18);
  Rng rng(19);
  Tensor<float> x = rand_tensor<float>(rng, {2, 6, 6, 6});
  Tape<float> t;
  auto y = group.forward(t, t.leaf(x, false));
  CHECK(t.value(y).shape() == x.shape());
}

TEST_CASE("attention module") {
  SUBCASE("mask forced to 0 gives exactly T(x); forced to 1 gives exactly 2 T(x)") {
    AttentionModule<float> mod(4, 2, 2);
    randomize<float>(mod, 20);
    Rng rng(21);
    Tensor<float> x = rand_tensor<float>(rng, {1, 4, 8, 8});

    mod.forced_mask = 0.0f;
    Tape<float> t0;
    auto y0 = mod.forward(t0, t0.leaf(x, false), Mode::train);

    mod.forced_mask = 1.0f;
    Tape<float> t1;
    auto y1 = mod.forward(t1, t1.leaf(x, false), Mode::train);

    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(t1.value(y1)[i] == 2.0f * t0.value(y0)[i]);
    }
  }
  SUBCASE("mask values lie in (0,1): output/T ratio stays within (1,2)") {
    AttentionModule<float> mod(3, 2, 1);
    randomize<float>(mod, 22);
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor<float> x = rand_tensor<float>(rng, {1, 3, 8, 8});
      mod.forced_mask = 0.0f;
      Tape<float> t0;
      auto trunk = t0.value(mod.forward(t0, t0.leaf(x, false), Mode::train));
      mod.forced_mask.reset();
      Tape<float> t1;
      auto full = t1.value(mod.forward(t1, t1.leaf(x, false), Mode::train));
      for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(std::abs(full[i]) <= 2.0f * std::abs(trunk[i]) + 1e-6f);
        if (std::abs(trunk[i]) > 1e-3f) {
          const double ratio = static_cast<double>(full[i]) / trunk[i];
          CHECK(ratio > 1.0);
          CHECK(ratio < 2.0);
        }
      }
    }
  }
  SUBCASE("spatial extent too small for the depth is an error") {
    AttentionModule<float> mod(2, 3, 1);
    randomize<float>(mod, 24);
    Tape<float> t;
    auto x = t.leaf(Tensor<float>::ones({1, 2, 4, 4}), false);
    CHECK_THROWS_AS(mod.forward(t, x, Mode::train), ShapeError);
  }
  SUBCASE("gradient check end to end") {
    const auto summary = oracles::run_fd_instances(3, 0.5, [](std::uint64_t seed) {
      AttentionModule<double> mod(2, 1, 1);
      randomize<double>(mod, hash_combine(seed, 31));
      // batch-norm layers must not mutate running stats between FD probes
      for (auto& u : mod.trunk) {
        u.bn1.track_stats = false;
        u.bn2.track_stats = false;
      }
      for (auto& u : mod.down_units) {
        u.bn1.track_stats = false;
        u.bn2.track_stats = false;
      }
      Rng rng(seed);
      Tensor<double> probe = rand_tensor<double>(rng, {1, 2, 4, 4});
      return check_gradient<double>(
          [&](Tape<double>& t, V<double> x) {
            auto p = t.leaf(probe, false);
            return ops::reduce_sum(t, ops::mul(t, mod.forward(t, x, Mode::train), p));
          },
          rand_tensor<double>(rng, {1, 2, 4, 4}), 1e-4);
    });
    CHECK(summary.accepted == 3);
    CHECK(summary.max_rel_err < 1e-5);
  }
}

TEST_CASE("dense block") {
  SUBCASE("zero layers: output is the input") {
    DenseBlock<float> block(5, 0, 4, false);
    Rng rng(26);
    Tensor<float> x = rand_tensor<float>(rng, {1, 5, 3, 3});
    Tape<float> t;
    auto y = block.forward(t, t.leaf(x, false), Mode::train);
    CHECK(t.value(y) == x);
  }
  SUBCASE("channel arithmetic: 8 input + 2 layers x growth 4 = 16") {
    DenseBlock<float> block(8, 2, 4, false);
    randomize<float>(block, 27);
    CHECK(block.out_channels() == 16);
    Rng rng(28);
    Tensor<float> x = rand_tensor<float>(rng, {2, 8, 4, 4});
    Tape<float> t;
    auto y = block.forward(t, t.leaf(x, false), Mode::train);
    CHECK(t.value(y).shape() == Shape{2, 16, 4, 4});
    CHECK(slice_channels(t.value(y), 0, 8) == x);
  }
  SUBCASE("bottleneck variant keeps the same output arithmetic") {
    DenseBlock<float> block(8, 3, 4, true);
    randomize<float>(block, 29);
    CHECK(block.out_channels() == 20);
  }
}

TEST_CASE("transition layer compresses channels and halves the spatial extent") {
  TransitionLayer<float> tr(10, 0.5);
  randomize<float>(tr, 30);
  CHECK(tr.out_channels == 5);
  Rng rng(31);
  Tensor<float> x = rand_tensor<float>(rng, {1, 10, 8, 8});
  Tape<float> t;
  auto y = tr.forward(t, t.leaf(x, false), Mode::train);
  CHECK(t.value(y).shape() == Shape{1, 5, 4, 4});
  CHECK_THROWS_AS(TransitionLayer<float>(10, 0.0), ConfigError);
}

TEST_CASE("residual bottleneck block") {
  SUBCASE("projection is present exactly when channels or stride change") {
    CHECK_FALSE(ResidualBottleneckBlock<float>(16, 16, 1).has_projection());
    CHECK(ResidualBottleneckBlock<float>(16, 32, 1).has_projection());
    CHECK(ResidualBottleneckBlock<float>(16, 16, 2).has_projection());
  }
  SUBCASE("output shape equals the shortcut shape") {
    ResidualBottleneckBlock<float> block(8, 16, 2);
    randomize<float>(block, 32);
    Rng rng(33);
    Tensor<float> x = rand_tensor<float>(rng, {2, 8, 8, 8});
    Tape<float> t;
    auto y = block.forward(t, t.leaf(x, false), Mode::train);
    CHECK(t.value(y).shape() == Shape{2, 16, 4, 4});
  }
  SUBCASE("gradient check") {
    const auto summary = oracles::run_fd_instances(3, 0.5, [](std::uint64_t seed) {
      ResidualBottleneckBlock<double> block(2, 4, 1);
      randomize<double>(block, hash_combine(seed, 41));
      block.bn1.track_stats = false;
      block.bn2.track_stats = false;
      block.bn3.track_stats = false;
      if (block.proj_bn) block.proj_bn->track_stats = false;
      Rng rng(seed);
      Tensor<double> probe = rand_tensor<double>(rng, {1, 4, 4, 4});
      return check_gradient<double>(
          [&](Tape<double>& t, V<double> x) {
            auto p = t.leaf(probe, false);
            return ops::reduce_sum(t, ops::mul(t, block.forward(t, x, Mode::train), p));
          },
          rand_tensor<double>(rng, {1, 2, 4, 4}), 1e-4);
    });
    CHECK(summary.accepted == 3);
    CHECK(summary.max_rel_err < 1e-5);
  }
}

TEST_CASE("dense block and pre-activation unit gradient checks") {
  SUBCASE("dense block") {
    const auto summary = oracles::run_fd_instances(3, 0.5, [](std::uint64_t seed) {
      DenseBlock<double> block(2, 2, 2, false);
      randomize<double>(block, hash_combine(seed, 51));
      for (auto& layer : block.layers) {
        layer.bn1.track_stats = false;
        layer.bn2.track_stats = false;
      }
      Rng rng(seed);
      Tensor<double> probe = rand_tensor<double>(rng, {1, 6, 4, 4});
      return check_gradient<double>(
          [&](Tape<double>& t, V<double> x) {
            auto p = t.leaf(probe, false);
            return ops::reduce_sum(t, ops::mul(t, block.forward(t, x, Mode::train), p));
          },
          rand_tensor<double>(rng, {1, 2, 4, 4}), 1e-4);
    });
    CHECK(summary.accepted == 3);
    CHECK(summary.max_rel_err < 1e-5);
  }
  SUBCASE("channel attention block") {
    const auto summary = oracles::run_fd_instances(4, 0.5, [](std::uint64_t seed) {
      ChannelAttention<double> ca(4, 2);
      randomize<double>(ca, hash_combine(seed, 61));
      Rng rng(seed);
      Tensor<double> probe = rand_tensor<double>(rng, {1, 4, 3, 3});
      return check_gradient<double>(
          [&](Tape<double>& t, V<double> x) {
            auto p = t.leaf(probe, false);
            return ops::reduce_sum(t, ops::mul(t, ca.forward(t, x), p));
          },
          rand_tensor<double>(rng, {1, 4, 3, 3}), 1e-4);
    });
    CHECK(summary.accepted == 4);
    CHECK(summary.max_rel_err < 1e-5);
  }
  SUBCASE("residual group") {
    const auto summary = oracles::run_fd_instances(3, 0.5, [](std::uint64_t seed) {
      ResidualGroup<double> group(2, 1, 1);
      randomize<double>(group, hash_combine(seed, 71));
      Rng rng(seed);
      Tensor<double> probe = rand_tensor<double>(rng, {1, 2, 4, 4});
      return check_gradient<double>(
          [&](Tape<double>& t, V<double> x) {
            auto p = t.leaf(probe, false);
            return ops::reduce_sum(t, ops::mul(t, group.forward(t, x), p));
          },
          rand_tensor<double>(rng, {1, 2, 4, 4}), 1e-4);
    });
    CHECK(summary.accepted == 3);
    CHECK(summary.max_rel_err < 1e-5);
  }
}
