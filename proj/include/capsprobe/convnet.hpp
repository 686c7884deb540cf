#pragma once

#include <vector>

#include "capsprobe/model.hpp"
#include "capsprobe/nn.hpp"

namespace capsprobe {

// Lowest index wins on ties.
std::size_t argmax_lowest(const std::vector<double>& v);

// -log softmax(logits)[label]; logits are a {1,M} row.
Tensor cross_entropy(const Tensor& logits, std::size_t label);

/// LeNet-style plain CNN: two conv+pool stages and a small MLP head.
struct ConvNetConfig {
  std::size_t in_channels = 1;
  std::size_t in_h = 28;
  std::size_t in_w = 28;
  ConvSpec conv1{8, 5, 1};
  ConvSpec conv2{16, 5, 1};
  std::size_t pool = 2;
  std::size_t hidden = 64;
  std::size_t classes = 3;
  bool with_bias = true;

  // conv/pool arithmetic; throws if any stage does not fit
  std::size_t flatten_size() const;
};

class ConvNet : public Model {
 public:
  ConvNet(const ConvNetConfig& config, Rng rng);

  std::string kind() const override { return "convnet"; }
  std::vector<NamedTensor> named_parameters() const override;
  Tensor loss(const Tensor& x, std::size_t label) const override;
  std::size_t predict(const Tensor& x) const override;
  std::size_t num_classes() const override { return config_.classes; }

  Tensor forward_logits(const Tensor& x) const;
  const std::vector<Layer>& layers() const { return layers_; }
  const ConvNetConfig& config() const { return config_; }

 private:
  ConvNetConfig config_;
  std::vector<Layer> layers_;
};

}  // namespace capsprobe
