#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "graspstn/ops.hpp"
#include "graspstn/rng.hpp"
#include "graspstn/tensor.hpp"

// Layer structs owning Parameters. A layer registers its tensors into the
// model's ParameterSet under a path prefix so checkpoints and the optimizer
// see one flat, uniquely named list.

namespace graspstn {
namespace nn {

template <typename T>
Tensor<T> he_uniform(Shape shape, Index fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<T> t = Tensor<T>::zeros(shape);
  auto& v = t.mutable_array();
  for (Index i = 0; i < v.size(); ++i) {
    v[i] = static_cast<T>(rng.uniform(-limit, limit));
  }
  return t;
}

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [F,C,kH,kW]
  Tensor<T> bias;    // [F]
  Index stride = 1;
  Index pad = 0;

  static Conv2d make(Index in_ch, Index out_ch, Index kernel, Index stride,
                     Index pad, Rng& rng) {
    Conv2d c;
    c.weight = he_uniform<T>(Shape{out_ch, in_ch, kernel, kernel},
                             in_ch * kernel * kernel, rng);
    c.bias = Tensor<T>::zeros(Shape{out_ch});
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, weight, bias, stride, pad);
  }

  void register_params(ParameterSet<T>& set, const std::string& prefix) {
    weight = set.add(prefix + ".weight", weight);
    bias = set.add(prefix + ".bias", bias);
  }
};

template <typename T>
struct Dense {
  Tensor<T> weight;  // [Out,In]
  Tensor<T> bias;    // [Out]

  static Dense make(Index in_f, Index out_f, Rng& rng) {
    Dense d;
    d.weight = he_uniform<T>(Shape{out_f, in_f}, in_f, rng);
    d.bias = Tensor<T>::zeros(Shape{out_f});
    return d;
  }

  /// Zero weights plus a fixed bias vector: the init used by localization
  /// heads so an untrained model is the identity transform.
  static Dense zeros_with_bias(Index in_f, std::vector<T> bias_values) {
    Dense d;
    d.weight = Tensor<T>::zeros(
        Shape{static_cast<Index>(bias_values.size()), in_f});
    d.bias = Tensor<T>::from_vector(
        Shape{static_cast<Index>(bias_values.size())}, bias_values);
    return d;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return dense(x, weight, bias); }

  void register_params(ParameterSet<T>& set, const std::string& prefix) {
    weight = set.add(prefix + ".weight", weight);
    bias = set.add(prefix + ".bias", bias);
  }
};

/// Two 3x3 conv+ReLU with an identity (or, when shape changes, 1x1
/// projection) shortcut: out = relu(conv2(relu(conv1(x))) + shortcut(x)).
template <typename T>
struct ResidualBlock {
  Conv2d<T> conv1;
  Conv2d<T> conv2;
  std::optional<Conv2d<T>> projection;

  static ResidualBlock make(Index in_ch, Index out_ch, Index stride, Rng& rng) {
    ResidualBlock b;
    b.conv1 = Conv2d<T>::make(in_ch, out_ch, 3, stride, 1, rng);
    b.conv2 = Conv2d<T>::make(out_ch, out_ch, 3, 1, 1, rng);
    if (stride != 1 || in_ch != out_ch) {
      b.projection = Conv2d<T>::make(in_ch, out_ch, 1, stride, 0, rng);
    }
    return b;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> branch = relu(conv1.forward(x));
    branch = conv2.forward(branch);
    Tensor<T> shortcut = projection ? projection->forward(x) : x;
    if (branch.shape() != shortcut.shape()) {
      throw ShapeError("residual_block: branch " + shape_str(branch.shape()) +
                       " vs shortcut " + shape_str(shortcut.shape()));
    }
    return relu(add(branch, shortcut));
  }

  void register_params(ParameterSet<T>& set, const std::string& prefix) {
    conv1.register_params(set, prefix + ".conv1");
    conv2.register_params(set, prefix + ".conv2");
    if (projection) projection->register_params(set, prefix + ".proj");
  }
};

struct BackboneConfig {
  Index stem_channels = 16;
  Index stem_kernel = 3;
  Index stem_stride = 2;
  bool stem_pool = true;  // 2x2 max pool after the stem
  std::vector<Index> block_channels = {16, 32, 64};
  std::vector<Index> block_strides = {1, 2, 2};
  std::vector<Index> blocks_per_stage = {};  // empty: one block per entry
  Index hidden = 64;                         // dense hidden width, 0 = none
};

/// Stem conv -> residual stages -> global average pool -> optional hidden
/// dense. Produces a flat feature vector per sample.
template <typename T>
struct Backbone {
  BackboneConfig cfg;
  Conv2d<T> stem;
  std::vector<ResidualBlock<T>> blocks;
  std::optional<Dense<T>> hidden;

  static Backbone make(Index in_ch, const BackboneConfig& cfg, Rng& rng) {
    Backbone b;
    b.cfg = cfg;
    b.stem = Conv2d<T>::make(in_ch, cfg.stem_channels, cfg.stem_kernel,
                             cfg.stem_stride, cfg.stem_kernel / 2, rng);
    Index ch = cfg.stem_channels;
    for (std::size_t s = 0; s < cfg.block_channels.size(); ++s) {
      const Index repeats =
          s < cfg.blocks_per_stage.size() ? cfg.blocks_per_stage[s] : 1;
      for (Index r = 0; r < repeats; ++r) {
        const Index stride = (r == 0) ? cfg.block_strides[s] : 1;
        b.blocks.push_back(
            ResidualBlock<T>::make(ch, cfg.block_channels[s], stride, rng));
        ch = cfg.block_channels[s];
      }
    }
    if (cfg.hidden > 0) b.hidden = Dense<T>::make(ch, cfg.hidden, rng);
    return b;
  }

  Index out_features() const {
    Index ch = cfg.block_channels.empty() ? cfg.stem_channels
                                          : cfg.block_channels.back();
    return cfg.hidden > 0 ? cfg.hidden : ch;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = relu(stem.forward(x));
    if (cfg.stem_pool) y = max_pool2d(y, 2);
    for (const auto& b : blocks) y = b.forward(y);
    y = global_avg_pool(y);
    if (hidden) y = relu(hidden->forward(y));
    return y;
  }

  void register_params(ParameterSet<T>& set, const std::string& prefix) {
    stem.register_params(set, prefix + ".stem");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].register_params(set, prefix + ".block" + std::to_string(i + 1));
    }
    if (hidden) hidden->register_params(set, prefix + ".hidden");
  }
};

}  // namespace nn
}  // namespace graspstn
