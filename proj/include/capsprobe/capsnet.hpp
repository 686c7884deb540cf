#pragma once

#include "capsprobe/model.hpp"
#include "capsprobe/nn.hpp"

namespace capsprobe {

/// Margin loss on output-capsule lengths, m+ = 0.9, m- = 0.1, lambda = 0.5.
Tensor margin_loss(const Tensor& v, std::size_t target, double m_plus = 0.9,
                   double m_minus = 0.1, double lambda = 0.5);

struct RoutingResult {
  Tensor output;        // M x D_out capsules
  Tensor coupling;      // N x M, rows sum to 1
  // coupling matrix at each iteration, for invariant checks
  std::vector<std::vector<double>> coupling_per_iter;
};

// Iterative agreement routing over a vote tensor {N,M,D}. When
// backprop_through_routing is false (the default) the coefficients are
// constants w.r.t. the tape and gradient flows only through the final
// weighted combination.
RoutingResult dynamic_routing(const Tensor& votes, std::size_t iterations,
                              bool backprop_through_routing = false);

struct CapsNetConfig {
  std::size_t in_channels = 1;
  std::size_t in_h = 28;
  std::size_t in_w = 28;
  ConvSpec conv1{16, 5, 2};
  ConvSpec conv2{32, 5, 2};
  std::size_t d_in = 8;
  std::size_t d_out = 16;
  std::size_t classes = 3;
  std::size_t routing_iters = 3;
  bool routing_backprop = false;
  // shared transform + averaging instead of routing
  bool shared_transform = false;
  bool reconstruction = true;
  std::size_t recon_hidden = 512;
  double recon_weight = 0.0005;  // per summed squared pixel error

  std::size_t primary_count() const;  // N
  std::size_t grid_h() const;
  std::size_t grid_w() const;
};

/// Dynamic-routing capsule classifier; with shared_transform set it is
/// the shared-transform averaging variant instead.
class CapsuleNetwork : public Model {
 public:
  CapsuleNetwork(const CapsNetConfig& config, Rng rng);

  std::string kind() const override {
    return config_.shared_transform ? "affcapsnet" : "capsnet";
  }
  std::vector<NamedTensor> named_parameters() const override;
  Tensor loss(const Tensor& x, std::size_t label) const override;
  Tensor attack_loss(const Tensor& x, std::size_t label) const override;
  std::size_t predict(const Tensor& x) const override;
  std::size_t num_classes() const override { return config_.classes; }

  // squashed primary capsules {N, D_in}
  Tensor primary_capsules(const Tensor& x) const;
  Tensor votes(const Tensor& u) const;  // {N, M, D_out}
  Tensor output_capsules(const Tensor& x) const;
  RoutingResult forward_routing(const Tensor& x) const;

  // margin loss on the routing-free vote aggregate squash(mean_i u_hat);
  // the objective of the vote attack
  Tensor vote_loss(const Tensor& x, std::size_t label) const;

  // class-conditional reconstruction of x's decoded image {1, H*W}
  Tensor reconstruct(const Tensor& v, std::size_t target) const;

  const CapsNetConfig& config() const { return config_; }
  std::size_t transformation_param_count() const {
    return transform_.numel();
  }

 private:
  Tensor stem(const Tensor& x) const;

  CapsNetConfig config_;
  Conv2dLayer conv1_, conv2_;
  Tensor transform_;  // {N,M,Din,Dout} or {M,Din,Dout} when shared
  LinearLayer dec1_, dec2_;
};

// Lightweight view helpers used by the attack module.
Tensor extract_primary(const Tensor& features, std::size_t d_in);

}  // namespace capsprobe
