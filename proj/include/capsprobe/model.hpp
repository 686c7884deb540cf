#pragma once

#include <string>
#include <vector>

#include "capsprobe/checkpoint.hpp"
#include "capsprobe/tensor.hpp"

namespace capsprobe {

/// Shared surface of the five classifier kinds. Training mutates
/// parameters single-writer; a frozen model (requires_grad stripped)
/// supports concurrent read-only inference and input-gradient attacks.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string kind() const = 0;
  virtual std::vector<NamedTensor> named_parameters() const = 0;

  // Full training objective (classification loss plus any regularizers).
  virtual Tensor loss(const Tensor& x, std::size_t label) const = 0;
  // Objective attacked by gradient-based adversaries; classification
  // term only.
  virtual Tensor attack_loss(const Tensor& x, std::size_t label) const {
    return loss(x, label);
  }
  virtual std::size_t predict(const Tensor& x) const = 0;
  virtual std::size_t num_classes() const = 0;

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& nt : named_parameters()) out.push_back(nt.tensor);
    return out;
  }

  void set_trainable(bool trainable) const {
    for (auto& p : parameters()) {
      p.set_requires_grad(trainable);
      p.zero_grad();
    }
  }
};

std::size_t param_count(const Model& model);

}  // namespace capsprobe
