#pragma once

#include <optional>
#include <vector>

#include "cytonet/layers.hpp"

namespace cytonet {

template <typename T>
using Var = typename Tape<T>::Var;

/// Pre-activation residual unit: x + conv(relu(bn(conv(relu(bn(x)))))).
template <typename T>
struct PreactResidualUnit {
  BatchNorm2d<T> bn1, bn2;
  Conv2d<T> conv1, conv2;

  PreactResidualUnit() = default;
  explicit PreactResidualUnit(int channels)
      : bn1(channels),
        bn2(channels),
        conv1(channels, channels, 3, 1, 1, false),
        conv2(channels, channels, 3, 1, 1, false) {}

  Var<T> forward(Tape<T>& t, Var<T> x, Mode mode) {
    auto h = conv1.forward(t, ops::relu(t, bn1.forward(t, x, mode)));
    h = conv2.forward(t, ops::relu(t, bn2.forward(t, h, mode)));
    return ops::add(t, x, h);
  }

  void visit(ModelVisitor<T>& v, const std::string& p) {
    bn1.visit(v, p + ".bn1");
    conv1.visit(v, p + ".conv1");
    bn2.visit(v, p + ".bn2");
    conv2.visit(v, p + ".conv2");
  }
};

/// 1x1 reduce -> 3x3 -> 1x1 expand with batch norm; projection shortcut is
/// present exactly when channels or stride change.
template <typename T>
struct ResidualBottleneckBlock {
  int in_channels = 0, out_channels = 0, stride = 1;
  Conv2d<T> conv1, conv2, conv3;
  BatchNorm2d<T> bn1, bn2, bn3;
  std::optional<Conv2d<T>> proj;
  std::optional<BatchNorm2d<T>> proj_bn;

  ResidualBottleneckBlock() = default;
  ResidualBottleneckBlock(int in, int out, int s)
      : in_channels(in), out_channels(out), stride(s) {
    const int width = std::max(1, out / 4);
    conv1 = Conv2d<T>(in, width, 1, 1, 0, false);
    bn1 = BatchNorm2d<T>(width);
    conv2 = Conv2d<T>(width, width, 3, s, 1, false);
    bn2 = BatchNorm2d<T>(width);
    conv3 = Conv2d<T>(width, out, 1, 1, 0, false);
    bn3 = BatchNorm2d<T>(out);
    if (in != out || s != 1) {
      proj.emplace(in, out, 1, s, 0, false);
      proj_bn.emplace(out);
    }
  }

  bool has_projection() const { return proj.has_value(); }

  Var<T> forward(Tape<T>& t, Var<T> x, Mode mode) {
    auto h = ops::relu(t, bn1.forward(t, conv1.forward(t, x), mode));
    h = ops::relu(t, bn2.forward(t, conv2.forward(t, h), mode));
    h = bn3.forward(t, conv3.forward(t, h), mode);
    Var<T> sc = x;
    if (proj) sc = proj_bn->forward(t, proj->forward(t, x), mode);
    return ops::relu(t, ops::add(t, h, sc));
  }

  void visit(ModelVisitor<T>& v, const std::string& p) {
    conv1.visit(v, p + ".conv1");
    bn1.visit(v, p + ".bn1");
    conv2.visit(v, p + ".conv2");
    bn2.visit(v, p + ".bn2");
    conv3.visit(v, p + ".conv3");
    bn3.visit(v, p + ".bn3");
    if (proj) {
      proj->visit(v, p + ".proj");
      proj_bn->visit(v, p + ".proj_bn");
    }
  }
};

/// One densely connected layer: bn-relu-conv3 mapping everything seen so far
/// to `growth` new channels. The bottleneck variant inserts bn-relu-conv1
/// with 4*growth intermediate channels first.
template <typename T>
struct DenseLayer {
  bool bottleneck = false;
  BatchNorm2d<T> bn1;
  Conv2d<T> conv1;  // bottleneck 1x1 (only when bottleneck)
  BatchNorm2d<T> bn2;
  Conv2d<T> conv2;  // 3x3 producing growth channels

  DenseLayer() = default;
  DenseLayer(int in, int growth, bool use_bottleneck) : bottleneck(use_bottleneck) {
    if (bottleneck) {
      bn1 = BatchNorm2d<T>(in);
      conv1 = Conv2d<T>(in, 4 * growth, 1, 1, 0, false);
      bn2 = BatchNorm2d<T>(4 * growth);
      conv2 = Conv2d<T>(4 * growth, growth, 3, 1, 1, false);
    } else {
      bn2 = BatchNorm2d<T>(in);
      conv2 = Conv2d<T>(in, growth, 3, 1, 1, false);
    }
  }

  Var<T> forward(Tape<T>& t, Var<T> x, Mode mode) {
    auto h = x;
    if (bottleneck) h = conv1.forward(t, ops::relu(t, bn1.forward(t, h, mode)));
    return conv2.forward(t, ops::relu(t, bn2.forward(t, h, mode)));
  }

  void visit(ModelVisitor<T>& v, const std::string& p) {
    if (bottleneck) {
      bn1.visit(v, p + ".bn1");
      conv1.visit(v, p + ".conv1");
    }
    bn2.visit(v, p + ".bn2");
    conv2.visit(v, p + ".conv2");
  }
};

/// Output channels = input channels + layers * growth.
template <typename T>
struct DenseBlock {
  int in_channels = 0, growth = 0;
  std::vector<DenseLayer<T>> layers;

  DenseBlock() = default;
  DenseBlock(int in, int num_layers, int g, bool bottleneck) : in_channels(in), growth(g) {
    layers.reserve(static_cast<std::size_t>(num_layers));
    for (int i = 0; i < num_layers; ++i) {
      layers.emplace_back(in + i * g, g, bottleneck);
    }
  }

  int out_channels() const { return in_channels + static_cast<int>(layers.size()) * growth; }

  Var<T> forward(Tape<T>& t, Var<T> x, Mode mode) {
    Var<T> features = x;
    for (auto& layer : layers) {
      auto fresh = layer.forward(t, features, mode);
      features = ops::concat_channels(t, std::vector<Var<T>>{features, fresh});
    }
    return features;
  }

  void visit(ModelVisitor<T>& v, const std::string& p) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].visit(v, p + ".layer" + std::to_string(i));
    }
  }
};

/// 1x1 compression to floor(theta * channels) followed by 2x2 average pool.
template <typename T>
struct TransitionLayer {
  int in_channels = 0, out_channels = 0;
  BatchNorm2d<T> bn;
  Conv2d<T> conv;

  TransitionLayer() = default;
  TransitionLayer(int in, double theta) : in_channels(in) {
    if (!(theta > 0.0 && theta <= 1.0)) {
      throw ConfigError("transition layer: compression must be in (0,1]");
    }
    out_channels = std::max(1, static_cast<int>(theta * in));
    bn = BatchNorm2d<T>(in);
    conv = Conv2d<T>(in, out_channels, 1, 1, 0, false);
  }

  Var<T> forward(Tape<T>& t, Var<T> x, Mode mode) {
    auto h = conv.forward(t, ops::relu(t, bn.forward(t, x, mode)));
    return ops::avgpool2d(t, h, 2, 2);
  }

  void visit(ModelVisitor<T>& v, const std::string& p) {
    bn.visit(v, p + ".bn");
    conv.visit(v, p + ".conv");
  }
};

/// Squeeze-excite style gate: s = sigmoid(W_up relu(W_down gap(x))), output is
/// x rescaled per channel by s. `forced_scale` bypasses the learned gate with
/// a constant (test hook; part of the block contract).
template <typename T>
struct ChannelAttention {
  int channels = 0, reduction = 1;
  Linear<T> down, up;
  std::optional<T> forced_scale;

  ChannelAttention() = default;
  ChannelAttention(int c, int r) : channels(c), reduction(r) {
    if (r >= c) {
      throw ConfigError("channel attention: reduction ratio " + std::to_string(r) +
                        " must be smaller than channel count " + std::to_string(c));
    }
    if (r < 1 || c % r != 0) {
      throw ConfigError("channel attention: channels " + std::to_string(c) +
                        " not divisible by reduction ratio " + std::to_string(r));
    }
    down = Linear<T>(c, c / r);
    up = Linear<T>(c / r, c);
  }

  Var<T> forward(Tape<T>& t, Var<T> x) {
    const auto& xv = t.value(x);
    const int B = xv.dim(0);
    if (forced_scale) {
      auto s = t.leaf(Tensor<T>::full({B, channels, 1, 1}, *forced_scale), false);
      return ops::channel_scale(t, x, s);
    }
    auto pooled = ops::flatten2(t, ops::global_avg_pool(t, x));  // (B,C)
    auto h = ops::relu(t, down.forward(t, pooled));
    auto s = ops::sigmoid(t, up.forward(t, h));
    auto s4 = ops::reshape(t, s, Shape{B, channels, 1, 1});
    return ops::channel_scale(t, x, s4);
  }

  void visit(ModelVisitor<T>& v, const std::string& p) {
    down.visit(v, p + ".down");
    up.visit(v, p + ".up");
  }
};

/// Residual channel attention block: x + CA(conv(relu(conv(x)))).
/// `identity_activation` replaces the inner ReLU with identity (test hook for
/// linearity probes); `pre_attention` optionally receives the residual branch
/// value before the gate.
template <typename T>
struct RCAB {
  int channels = 0;
  Conv2d<T> conv1, conv2;
  ChannelAttention<T> ca;
  bool identity_activation = false;

  RCAB() = default;
  RCAB(int c, int r)
      : channels(c), conv1(c, c, 3, 1, 1, true), conv2(c, c, 3, 1, 1, true), ca(c, r) {}

  Var<T> forward(Tape<T>& t, Var<T> x, Var<T>* pre_attention = nullptr) {
    auto h = conv1.forward(t, x);
    if (!identity_activation) h = ops::relu(t, h);
    h = conv2.forward(t, h);
    if (pre_attention) *pre_attention = h;
    return ops::add(t, x, ca.forward(t, h));
  }

  void visit(ModelVisitor<T>& v, const std::string& p) {
    conv1.visit(v, p + ".conv1");
    conv2.visit(v, p + ".conv2");
    ca.visit(v, p + ".ca");
  }
};

/// A stack of RCABs followed by one convolution, inside a group-level skip.
template <typename T>
struct ResidualGroup {
  int channels = 0;
  std::vector<RCAB<T>> blocks;
  Conv2d<T> conv;

  ResidualGroup() = default;
  ResidualGroup(int c, int num_blocks, int r) : channels(c), conv(c, c, 3, 1, 1, true) {
    blocks.reserve(static_cast<std::size_t>(num_blocks));
    for (int i = 0; i < num_blocks; ++i) blocks.emplace_back(c, r);
  }

  Var<T> forward(Tape<T>& t, Var<T> x) {
    auto h = x;
    for (auto& b : blocks) h = b.forward(t, h);
    h = conv.forward(t, h);
    return ops::add(t, x, h);
  }

  void visit(ModelVisitor<T>& v, const std::string& p) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].visit(v, p + ".rcab" + std::to_string(i));
    }
    conv.visit(v, p + ".conv");
  }
};

/// Trunk/mask residual attention: output = (1 + M(x)) * T(x). The trunk is a
/// stack of pre-activation residual units; the mask is a bottom-up (max-pool)
/// top-down (bilinear upsample) hourglass with one residual unit per level,
/// identity skip links and a 1x1 conv + sigmoid head. `forced_mask` clamps
/// M to a constant (test hook; part of the block contract).
template <typename T>
struct AttentionModule {
  int channels = 0, depth = 2;
  std::vector<PreactResidualUnit<T>> trunk;
  std::vector<PreactResidualUnit<T>> down_units;
  Conv2d<T> mask_head;
  std::optional<T> forced_mask;

  AttentionModule() = default;
  AttentionModule(int c, int d, int trunk_units) : channels(c), depth(d) {
    if (d < 1) throw ConfigError("attention module: depth must be >= 1");
    trunk.reserve(static_cast<std::size_t>(trunk_units));
    for (int i = 0; i < trunk_units; ++i) trunk.emplace_back(c);
    down_units.reserve(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) down_units.emplace_back(c);
    mask_head = Conv2d<T>(c, c, 1, 1, 0, true);
  }

  Var<T> forward(Tape<T>& t, Var<T> x, Mode mode) {
    const auto& xv = t.value(x);
    const int H = xv.dim(2), W = xv.dim(3);
    const int need = 1 << depth;
    if (H < need || W < need) {
      throw ShapeError("attention module: spatial extent " + std::to_string(H) + "x" +
                       std::to_string(W) + " too small for depth " + std::to_string(depth));
    }

    Var<T> trunk_out = x;
    for (auto& u : trunk) trunk_out = u.forward(t, trunk_out, mode);

    Var<T> mask;
    if (forced_mask) {
      mask = t.leaf(Tensor<T>::full(t.value(trunk_out).shape(), *forced_mask), false);
    } else {
      std::vector<Var<T>> skips;
      skips.push_back(x);
      Var<T> cur = x;
      for (int l = 0; l < depth; ++l) {
        cur = down_units[static_cast<std::size_t>(l)].forward(t, ops::maxpool2d(t, cur, 2, 2), mode);
        if (l + 1 < depth) skips.push_back(cur);
      }
      for (int l = depth - 1; l >= 0; --l) {
        const auto& target = t.value(skips[static_cast<std::size_t>(l)]);
        cur = ops::bilinear_upsample(t, cur, target.dim(2), target.dim(3));
        cur = ops::add(t, cur, skips[static_cast<std::size_t>(l)]);
      }
      mask = ops::sigmoid(t, mask_head.forward(t, cur));
    }
    return ops::mul(t, ops::add_scalar(t, mask, T(1)), trunk_out);
  }

  void visit(ModelVisitor<T>& v, const std::string& p) {
    for (std::size_t i = 0; i < trunk.size(); ++i) {
      trunk[i].visit(v, p + ".trunk" + std::to_string(i));
    }
    for (std::size_t i = 0; i < down_units.size(); ++i) {
      down_units[i].visit(v, p + ".down" + std::to_string(i));
    }
    mask_head.visit(v, p + ".mask_head");
  }
};

}  // namespace cytonet
