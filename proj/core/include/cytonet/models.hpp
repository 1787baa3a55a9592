#pragma once

#include <map>
#include <memory>
#include <string>

#include "cytonet/blocks.hpp"
#include "cytonet/model_config.hpp"

namespace cytonet {

/// A composed layer/block structure supporting forward evaluation and
/// reverse-mode gradient propagation through a Tape.
template <typename T>
class NetworkGraph {
 public:
  explicit NetworkGraph(ModelConfig config) : config_(std::move(config)) {}
  virtual ~NetworkGraph() = default;

  virtual Var<T> forward(Tape<T>& t, Var<T> input, Mode mode) = 0;
  virtual void visit(ModelVisitor<T>& v) = 0;

  virtual void for_each_channel_attention(const std::function<void(ChannelAttention<T>&)>&) {}
  virtual void for_each_attention_module(const std::function<void(AttentionModule<T>&)>&) {}

  const ModelConfig& config() const { return config_; }

 protected:
  void check_input(const Tensor<T>& x) const {
    if (x.ndim() != 4 || x.dim(1) != 3 || x.dim(2) != config_.input_resolution ||
        x.dim(3) != config_.input_resolution) {
      throw ShapeError("model input " + shape_str(x.shape()) + " does not match signature (B,3," +
                       std::to_string(config_.input_resolution) + "," +
                       std::to_string(config_.input_resolution) + ")");
    }
  }

  ModelConfig config_;
};

template <typename T>
class ResNetModel : public NetworkGraph<T> {
 public:
  explicit ResNetModel(const ModelConfig& cfg) : NetworkGraph<T>(cfg) {
    const bool attn = family_has_attention(cfg.family);
    stem_ = Conv2d<T>(3, cfg.stem_channels, cfg.stem_kernel, 2, cfg.stem_kernel / 2, false);
    stem_bn_ = BatchNorm2d<T>(cfg.stem_channels);
    int in_ch = cfg.stem_channels;
    for (std::size_t s = 0; s < cfg.stage_blocks.size(); ++s) {
      const int out_ch = cfg.stage_channels[s];
      std::vector<ResidualBottleneckBlock<T>> stage;
      std::vector<AttentionModule<T>> stage_attn;
      for (int b = 0; b < cfg.stage_blocks[s]; ++b) {
        const int stride = (b == 0 && s > 0) ? 2 : 1;
        stage.emplace_back(b == 0 ? in_ch : out_ch, out_ch, stride);
        if (attn && cfg.attention_placement == AttentionPlacement::per_block) {
          stage_attn.emplace_back(out_ch, cfg.attention_depth, cfg.attention_trunk_units);
        }
      }
      if (attn && cfg.attention_placement == AttentionPlacement::per_stage) {
        stage_attn.emplace_back(out_ch, cfg.attention_depth, cfg.attention_trunk_units);
      }
      stages_.push_back(std::move(stage));
      attention_.push_back(std::move(stage_attn));
      in_ch = out_ch;
    }
    head_ = Linear<T>(in_ch, cfg.num_classes);
  }

  Var<T> forward(Tape<T>& t, Var<T> input, Mode mode) override {
    this->check_input(t.value(input));
    const auto& cfg = this->config_;
    auto h = ops::relu(t, stem_bn_.forward(t, stem_.forward(t, input), mode));
    h = ops::maxpool2d(t, h, 2, 2);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      auto& stage_attn = attention_[s];
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        h = stages_[s][b].forward(t, h, mode);
        if (!stage_attn.empty() && cfg.attention_placement == AttentionPlacement::per_block) {
          h = stage_attn[b].forward(t, h, mode);
        }
      }
      if (!stage_attn.empty() && cfg.attention_placement == AttentionPlacement::per_stage) {
        h = stage_attn.back().forward(t, h, mode);
      }
    }
    h = ops::flatten2(t, ops::global_avg_pool(t, h));
    return head_.forward(t, h);
  }

  void visit(ModelVisitor<T>& v) override {
    stem_.visit(v, "stem.conv");
    stem_bn_.visit(v, "stem.bn");
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      const std::string sp = "stage" + std::to_string(s);
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        stages_[s][b].visit(v, sp + ".block" + std::to_string(b));
      }
      for (std::size_t a = 0; a < attention_[s].size(); ++a) {
        attention_[s][a].visit(v, sp + ".attention" + std::to_string(a));
      }
    }
    head_.visit(v, "head.fc");
  }

  void for_each_attention_module(const std::function<void(AttentionModule<T>&)>& fn) override {
    for (auto& stage : attention_)
      for (auto& a : stage) fn(a);
  }

  std::vector<std::vector<ResidualBottleneckBlock<T>>>& stages() { return stages_; }

 private:
  Conv2d<T> stem_;
  BatchNorm2d<T> stem_bn_;
  std::vector<std::vector<ResidualBottleneckBlock<T>>> stages_;
  std::vector<std::vector<AttentionModule<T>>> attention_;
  Linear<T> head_;
};

template <typename T>
class DenseNetModel : public NetworkGraph<T> {
 public:
  explicit DenseNetModel(const ModelConfig& cfg) : NetworkGraph<T>(cfg) {
    const bool attn = family_has_attention(cfg.family);
    stem_ = Conv2d<T>(3, cfg.stem_channels, cfg.stem_kernel, 2, cfg.stem_kernel / 2, false);
    stem_bn_ = BatchNorm2d<T>(cfg.stem_channels);
    int channels = cfg.stem_channels;
    for (std::size_t s = 0; s < cfg.stage_blocks.size(); ++s) {
      blocks_.emplace_back(channels, cfg.stage_blocks[s], cfg.growth_rate, cfg.dense_bottleneck);
      channels = blocks_.back().out_channels();
      if (attn) gates_.emplace_back(channels, cfg.reduction_ratio);
      if (s + 1 < cfg.stage_blocks.size()) {
        transitions_.emplace_back(channels, cfg.compression);
        channels = transitions_.back().out_channels;
      }
    }
    final_bn_ = BatchNorm2d<T>(channels);
    head_ = Linear<T>(channels, cfg.num_classes);
  }

  Var<T> forward(Tape<T>& t, Var<T> input, Mode mode) override {
    this->check_input(t.value(input));
    auto h = ops::relu(t, stem_bn_.forward(t, stem_.forward(t, input), mode));
    h = ops::maxpool2d(t, h, 2, 2);
    for (std::size_t s = 0; s < blocks_.size(); ++s) {
      h = blocks_[s].forward(t, h, mode);
      if (!gates_.empty()) h = gates_[s].forward(t, h);
      if (s < transitions_.size()) h = transitions_[s].forward(t, h, mode);
    }
    h = ops::relu(t, final_bn_.forward(t, h, mode));
    h = ops::flatten2(t, ops::global_avg_pool(t, h));
    return head_.forward(t, h);
  }

  void visit(ModelVisitor<T>& v) override {
    stem_.visit(v, "stem.conv");
    stem_bn_.visit(v, "stem.bn");
    for (std::size_t s = 0; s < blocks_.size(); ++s) {
      const std::string sp = "stage" + std::to_string(s);
      blocks_[s].visit(v, sp + ".dense");
      if (!gates_.empty()) gates_[s].visit(v, sp + ".ca");
      if (s < transitions_.size()) transitions_[s].visit(v, sp + ".transition");
    }
    final_bn_.visit(v, "head.bn");
    head_.visit(v, "head.fc");
  }

  void for_each_channel_attention(const std::function<void(ChannelAttention<T>&)>& fn) override {
    for (auto& g : gates_) fn(g);
  }

 private:
  Conv2d<T> stem_;
  BatchNorm2d<T> stem_bn_;
  std::vector<DenseBlock<T>> blocks_;
  std::vector<ChannelAttention<T>> gates_;
  std::vector<TransitionLayer<T>> transitions_;
  BatchNorm2d<T> final_bn_;
  Linear<T> head_;
};

/// He fan-in initialization for weights, zeros for biases, ones/zeros for
/// batch-norm scale/shift. Each parameter draws from its own stream keyed by
/// (seed, parameter path), so shared layers initialize identically across
/// families regardless of what else the model contains.
template <typename T>
void init_parameters(NetworkGraph<T>& model, std::uint64_t seed) {
  ModelVisitor<T> v;
  v.param = [seed](const std::string& name, Param<T>& p) {
    Rng rng(hash_combine(seed, fnv1a64(name)));
    auto& val = p.value;
    const bool is_weight = name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
    if (is_weight) {
      std::size_t fan_in = 1;
      for (int d = 1; d < val.ndim(); ++d) fan_in *= static_cast<std::size_t>(val.dim(d));
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < val.size(); ++i) val[i] = static_cast<T>(rng.normal() * stddev);
    } else if (name.size() >= 6 && name.compare(name.size() - 6, 6, ".gamma") == 0) {
      for (std::size_t i = 0; i < val.size(); ++i) val[i] = T(1);
    } else {  // .bias / .beta
      for (std::size_t i = 0; i < val.size(); ++i) val[i] = T(0);
    }
  };
  v.buffer = [](const std::string& name, Tensor<T>& buf) {
    const bool is_var = name.size() >= 12 && name.compare(name.size() - 12, 12, ".running_var") == 0;
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = is_var ? T(1) : T(0);
  };
  v.counter = [](const std::string&, std::int64_t& c) { c = 0; };
  model.visit(v);
}

/// Fully initialized network for the given config (He-style seeding included).
template <typename T>
std::unique_ptr<NetworkGraph<T>> build_model(const ModelConfig& cfg) {
  cfg.validate();
  std::unique_ptr<NetworkGraph<T>> model;
  if (family_is_dense(cfg.family)) {
    model = std::make_unique<DenseNetModel<T>>(cfg);
  } else {
    model = std::make_unique<ResNetModel<T>>(cfg);
  }
  init_parameters(*model, cfg.seed);
  return model;
}

template <typename T>
std::size_t count_parameters(NetworkGraph<T>& model) {
  std::size_t n = 0;
  ModelVisitor<T> v;
  v.param = [&n](const std::string&, Param<T>& p) { n += p.value.size(); };
  v.buffer = [](const std::string&, Tensor<T>&) {};
  v.counter = [](const std::string&, std::int64_t&) {};
  model.visit(v);
  return n;
}

template <typename T>
std::vector<std::string> parameter_names(NetworkGraph<T>& model) {
  std::vector<std::string> names;
  ModelVisitor<T> v;
  v.param = [&names](const std::string& n, Param<T>&) { names.push_back(n); };
  v.buffer = [](const std::string&, Tensor<T>&) {};
  v.counter = [](const std::string&, std::int64_t&) {};
  model.visit(v);
  return names;
}

/// Runs the graph on `input`; the tape records every primitive applied and
/// every intermediate is checked finite (the offending node is reported).
template <typename T>
Tensor<T> forward_eval(NetworkGraph<T>& model, const Tensor<T>& input, Mode mode = Mode::train) {
  Tape<T> tape(true);
  tape.set_params_require_grad(false);
  auto in = tape.leaf(input, false);
  auto out = model.forward(tape, in, mode);
  return tape.value(out);
}

/// Eval-mode class probabilities (softmax over the logits).
template <typename T>
Tensor<T> predict_probs(NetworkGraph<T>& model, const Tensor<T>& input) {
  Tape<T> tape(false);
  tape.set_params_require_grad(false);
  auto in = tape.leaf(input, false);
  auto out = model.forward(tape, in, Mode::eval);
  return softmax_rows(tape.value(out));
}

/// Reverse accumulation from one output scalar: gradients of the selected
/// class logit (batch element 0) with respect to every parameter and the
/// input. Parameters that do not reach the output get zero gradients.
template <typename T>
std::map<std::string, Tensor<T>> parameter_gradients(NetworkGraph<T>& model,
                                                     const Tensor<T>& input, int class_index,
                                                     Mode mode = Mode::train) {
  Tape<T> tape(true);
  tape.set_params_require_grad(true);
  auto in = tape.leaf(input, true);
  auto out = model.forward(tape, in, mode);
  const auto& logits = tape.value(out);
  if (class_index < 0 || class_index >= logits.dim(1)) {
    throw Error("output selector " + std::to_string(class_index) + " out of range [0," +
                std::to_string(logits.dim(1)) + ")");
  }
  tape.backward_select(out, static_cast<std::size_t>(class_index));

  std::map<std::string, Tensor<T>> grads;
  ModelVisitor<T> v;
  v.param = [&](const std::string& name, Param<T>& p) {
    grads[name] = tape.has_grad(p.bound) ? tape.grad(p.bound) : Tensor<T>(p.value.shape());
  };
  v.buffer = [](const std::string&, Tensor<T>&) {};
  v.counter = [](const std::string&, std::int64_t&) {};
  model.visit(v);
  grads["input"] = tape.has_grad(in) ? tape.grad(in) : Tensor<T>(input.shape());
  return grads;
}

}  // namespace cytonet
