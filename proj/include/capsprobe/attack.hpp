#pragma once

#include <cstdint>

#include "capsprobe/capsnet.hpp"
#include "capsprobe/model.hpp"
#include "capsprobe/rng.hpp"

namespace capsprobe {

/// l-inf budget in pixel units of [0,1]-scaled images.
struct AttackBudget {
  double eps = 0.1;
  double alpha = 0.02;
  std::size_t steps = 10;
  bool random_start = false;
};

struct PatchSpec {
  std::size_t row = 0, col = 0;
  std::size_t height = 0, width = 0;
  bool aligned = false;  // coincides with a ViT patch boundary

  void validate(const Shape& image) const;
};

// Every adversarial output is checked in-line against its constraint set
// ([0,1] range plus the l-inf ball or the patch mask); these counters
// surface how many checks ran and passed.
struct ConstraintStats {
  std::uint64_t performed = 0;
  std::uint64_t passed = 0;
};
ConstraintStats attack_constraint_stats();
void reset_attack_constraint_stats();

// x + eps * sign(grad_x loss), clipped to [0,1].
Tensor fgsm(const Model& model, const Tensor& x, std::size_t label, double eps);

// Iterated signed-gradient ascent with projection onto the eps-ball and
// [0,1] after every step.
Tensor pgd(const Model& model, const Tensor& x, std::size_t label,
           const AttackBudget& budget, Rng rng);

// PGD against the margin loss on the routed output capsules.
Tensor caps_attack(const CapsuleNetwork& model, const Tensor& x,
                   std::size_t label, const AttackBudget& budget, Rng rng);

// PGD against the margin loss on the routing-free vote aggregate
// squash(mean_i u_hat[j|i]); gradients bypass the routing entirely.
Tensor vote_attack(const CapsuleNetwork& model, const Tensor& x,
                   std::size_t label, const AttackBudget& budget, Rng rng);

// Unbounded-within-patch signed ascent; pixels outside the patch stay
// bit-identical to x.
Tensor patch_attack(const Model& model, const Tensor& x, std::size_t label,
                    const PatchSpec& patch, std::size_t steps, double lr);

enum class CorruptKind { kGaussianNoise, kMeanShift, kBlackout };
CorruptKind corrupt_kind_from_name(const std::string& name);

// Natural corruption confined to the patch; severity 1..5 scales the
// distortion (blackout is defined at severity 5 only). Deterministic in
// the seed.
Tensor patch_corrupt(const Tensor& x, const PatchSpec& patch, CorruptKind kind,
                     int severity, std::uint64_t seed);

}  // namespace capsprobe
