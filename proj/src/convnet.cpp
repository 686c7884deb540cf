#include "capsprobe/convnet.hpp"

#include <stdexcept>

namespace capsprobe {

std::size_t argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  if (logits.rank() != 2 || logits.shape()[0] != 1) {
    throw std::invalid_argument("cross_entropy: expected {1,M} logits, got " +
                                shape_str(logits.shape()));
  }
  if (label >= logits.shape()[1]) {
    throw std::invalid_argument("cross_entropy: label " +
                                std::to_string(label) + " out of range for " +
                                std::to_string(logits.shape()[1]) + " classes");
  }
  return neg(pick(log_softmax(logits, 1), label));
}

std::size_t param_count(const Model& model) {
  std::size_t n = 0;
  for (const auto& p : model.parameters()) n += p.numel();
  return n;
}

namespace {

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride) {
  if (k > in) {
    throw std::invalid_argument("convnet config: kernel larger than input");
  }
  return (in - k) / stride + 1;
}

}  // namespace

std::size_t ConvNetConfig::flatten_size() const {
  if (classes < 2) throw std::invalid_argument("convnet config: need >= 2 classes");
  std::size_t h = conv_out(in_h, conv1.kernel, conv1.stride);
  std::size_t w = conv_out(in_w, conv1.kernel, conv1.stride);
  if (h % pool != 0 || w % pool != 0) {
    throw std::invalid_argument("convnet config: pool does not divide stage-1 maps");
  }
  h /= pool;
  w /= pool;
  h = conv_out(h, conv2.kernel, conv2.stride);
  w = conv_out(w, conv2.kernel, conv2.stride);
  if (h % pool != 0 || w % pool != 0) {
    throw std::invalid_argument("convnet config: pool does not divide stage-2 maps");
  }
  return conv2.filters * (h / pool) * (w / pool);
}

ConvNet::ConvNet(const ConvNetConfig& config, Rng rng) : config_(config) {
  std::size_t flat = config.flatten_size();
  layers_.push_back(make_conv(config.conv1.filters, config.in_channels,
                              config.conv1.kernel, config.conv1.stride, rng,
                              config.with_bias));
  layers_.push_back(ReluLayer{});
  layers_.push_back(MaxPoolLayer{config.pool});
  layers_.push_back(make_conv(config.conv2.filters, config.conv1.filters,
                              config.conv2.kernel, config.conv2.stride, rng,
                              config.with_bias));
  layers_.push_back(ReluLayer{});
  layers_.push_back(MaxPoolLayer{config.pool});
  layers_.push_back(FlattenLayer{});
  layers_.push_back(make_linear(flat, config.hidden, rng, config.with_bias));
  layers_.push_back(ReluLayer{});
  layers_.push_back(make_linear(config.hidden, config.classes, rng,
                                config.with_bias));
}

std::vector<NamedTensor> ConvNet::named_parameters() const {
  std::vector<NamedTensor> out;
  std::size_t conv_i = 0, fc_i = 0;
  for (const auto& layer : layers_) {
    if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
      std::string base = "conv" + std::to_string(++conv_i);
      out.push_back({base + ".w", c->weight});
      if (c->bias.defined()) out.push_back({base + ".b", c->bias});
    } else if (const auto* l = std::get_if<LinearLayer>(&layer)) {
      std::string base = "fc" + std::to_string(++fc_i);
      out.push_back({base + ".w", l->weight});
      if (l->bias.defined()) out.push_back({base + ".b", l->bias});
    }
  }
  return out;
}

Tensor ConvNet::forward_logits(const Tensor& x) const {
  if (x.shape() != Shape{config_.in_channels, config_.in_h, config_.in_w}) {
    throw std::invalid_argument("convnet: input shape " + shape_str(x.shape()) +
                                " does not match config " +
                                shape_str({config_.in_channels, config_.in_h,
                                           config_.in_w}));
  }
  Tensor h = x;
  for (const auto& layer : layers_) h = apply_layer(layer, h);
  return h;
}

Tensor ConvNet::loss(const Tensor& x, std::size_t label) const {
  return cross_entropy(forward_logits(x), label);
}

std::size_t ConvNet::predict(const Tensor& x) const {
  return argmax_lowest(forward_logits(x).data());
}

}  // namespace capsprobe
