#pragma once

// Small typed layers shared by the model stems. The explicit layer list
// is also what the relevance propagation in explain.hpp walks.

#include <variant>
#include <vector>

#include "capsprobe/rng.hpp"
#include "capsprobe/tensor.hpp"

namespace capsprobe {

struct ConvSpec {
  std::size_t filters = 8;
  std::size_t kernel = 5;
  std::size_t stride = 1;
};

struct Conv2dLayer {
  Tensor weight;  // F x C x P x Q
  Tensor bias;    // F, undefined when bias-free
  std::size_t stride = 1;

  Tensor forward(const Tensor& x) const {
    Tensor y = conv2d(x, weight, stride);
    return bias.defined() ? add_channel_bias(y, bias) : y;
  }
};

struct LinearLayer {
  Tensor weight;  // K x M, applied to row vectors {1,K}
  Tensor bias;    // M, undefined when bias-free

  Tensor forward(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add_rowwise(y, bias) : y;
  }
};

struct ReluLayer {
  Tensor forward(const Tensor& x) const { return relu(x); }
};

struct MaxPoolLayer {
  std::size_t size = 2;
  Tensor forward(const Tensor& x) const { return max_pool(x, size); }
};

struct FlattenLayer {
  Tensor forward(const Tensor& x) const { return reshape(x, {1, x.numel()}); }
};

using Layer =
    std::variant<Conv2dLayer, LinearLayer, ReluLayer, MaxPoolLayer, FlattenLayer>;

Tensor apply_layer(const Layer& layer, const Tensor& x);

// He-style fan-in scaled Gaussian init.
Conv2dLayer make_conv(std::size_t out_ch, std::size_t in_ch, std::size_t k,
                      std::size_t stride, Rng& rng, bool with_bias = true);
LinearLayer make_linear(std::size_t in, std::size_t out, Rng& rng,
                        bool with_bias = true);

}  // namespace capsprobe
