#pragma once

#include "capsprobe/capsnet.hpp"
#include "capsprobe/model.hpp"
#include "capsprobe/nn.hpp"

namespace capsprobe {

// 4-neighborhood grid graph with self-loops under a symmetric
// normalization that keeps unit row sums: off-diagonal a_ij/c and
// diagonal 1 - deg(i)/c with c = max degree + 1. Shape {K*K, K*K}.
Tensor build_adjacency(std::size_t k);

// Att = softmax over nodes of (A X W); columns sum to 1.
Tensor head_attention(const Tensor& adjacency, const Tensor& node_features,
                      const Tensor& weight);

// S = Att^T X, one convex combination of node features per class.
Tensor graph_pool(const Tensor& node_features, const Tensor& attention);

struct GraCapsForward {
  Tensor output;                   // M x D_out capsules
  std::vector<Tensor> attentions;  // per-head {K^2, M}
};

struct GraCapsConfig {
  std::size_t in_channels = 1;
  std::size_t in_h = 28;
  std::size_t in_w = 28;
  ConvSpec conv1{16, 5, 2};
  ConvSpec conv2{32, 5, 2};
  std::size_t d_in = 8;   // node input features; heads = stem channels / d_in
  std::size_t d_out = 16;
  std::size_t classes = 3;
  bool reconstruction = true;
  std::size_t recon_hidden = 512;
  double recon_weight = 0.0005;

  std::size_t heads() const { return conv2.filters / d_in; }
  std::size_t grid() const;  // K
};

/// Capsule classifier whose routing is replaced by multi-head
/// attention-based graph pooling; the per-head attention doubles as the
/// built-in explanation.
class GraCapsNet : public Model {
 public:
  GraCapsNet(const GraCapsConfig& config, Rng rng);

  std::string kind() const override { return "gracapsnet"; }
  std::vector<NamedTensor> named_parameters() const override;
  Tensor loss(const Tensor& x, std::size_t label) const override;
  Tensor attack_loss(const Tensor& x, std::size_t label) const override;
  std::size_t predict(const Tensor& x) const override;
  std::size_t num_classes() const override { return config_.classes; }

  GraCapsForward forward(const Tensor& x) const;

  // Mean attention column of the predicted class, reshaped to K x K.
  // Uses the attentions already produced by forward(); no extra passes.
  static std::vector<double> builtin_explanation(
      const std::vector<Tensor>& attentions, std::size_t predicted);

  const GraCapsConfig& config() const { return config_; }

 private:
  GraCapsConfig config_;
  Conv2dLayer conv1_, conv2_;
  Tensor adjacency_;                 // constant
  std::vector<Tensor> transform_;    // per head {D_in, D_out}
  std::vector<Tensor> att_weight_;   // per head {D_out, M}
  LinearLayer dec1_, dec2_;
};

}  // namespace capsprobe
