#pragma once

#include "capsprobe/model.hpp"
#include "capsprobe/nn.hpp"

namespace capsprobe {

struct ViTConfig {
  std::size_t in_channels = 1;
  std::size_t in_h = 28;
  std::size_t in_w = 28;
  std::size_t patch = 7;
  std::size_t dim = 64;
  std::size_t blocks = 2;
  std::size_t mlp_hidden = 128;
  std::size_t classes = 3;

  std::size_t patch_count() const { return (in_h / patch) * (in_w / patch); }
};

// Row-stochastic per-layer attention matrices of one forward pass.
using AttentionRecord = std::vector<Tensor>;  // each {n+1, n+1}

struct ViTForward {
  Tensor logits;  // {1, M}
  AttentionRecord attention;
};

// Class-token attribution over patches: per layer A' = rownorm(A + I),
// rollout = A'^L ... A'^1, then the class-token row restricted to patch
// positions and renormalized. All-zero patch mass falls back to uniform.
std::vector<double> attention_rollout(const AttentionRecord& record);

/// Single-head pre-norm encoder on a patch sequence with a class token.
/// Attention logits are divided by temperature * sqrt(dim); temperature 1
/// is the plain model and larger values smooth the attention.
class VisionTransformer : public Model {
 public:
  VisionTransformer(const ViTConfig& config, Rng rng);

  std::string kind() const override { return "vit"; }
  std::vector<NamedTensor> named_parameters() const override;
  Tensor loss(const Tensor& x, std::size_t label) const override;
  std::size_t predict(const Tensor& x) const override;
  std::size_t num_classes() const override { return config_.classes; }

  ViTForward forward(const Tensor& x) const;
  Tensor forward_logits(const Tensor& x) const { return forward(x).logits; }

  // Patch sequence before the encoder: class token at row 0, position
  // embeddings added exactly once.
  Tensor patchify(const Tensor& x) const;

  // View of the same parameters running at attention temperature tau >= 1.
  VisionTransformer with_temperature(double tau) const;
  double temperature() const { return temperature_; }

  const ViTConfig& config() const { return config_; }

 private:
  struct Block {
    Tensor ln1_g, ln1_b;
    Tensor wq, wk, wv;
    Tensor ln2_g, ln2_b;
    LinearLayer mlp1, mlp2;
  };

  ViTConfig config_;
  double temperature_ = 1.0;
  Tensor proj_w_;      // {P*P*C, D}
  Tensor proj_b_;      // {D}
  Tensor class_token_; // {1, D}
  Tensor pos_embed_;   // {n+1, D}
  std::vector<Block> blocks_;
  Tensor lnf_g_, lnf_b_;
  LinearLayer head_;
};

}  // namespace capsprobe
