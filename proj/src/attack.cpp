#include "capsprobe/attack.hpp"

#include <atomic>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace capsprobe {

namespace {

std::atomic<std::uint64_t> g_checks_performed{0};
std::atomic<std::uint64_t> g_checks_passed{0};

using LossFn = std::function<Tensor(const Tensor&)>;

std::vector<double> input_gradient(const LossFn& loss_fn, const Tensor& x) {
  Tensor xi = x.detach();
  xi.set_requires_grad(true);
  Tape tape;
  Tensor loss = loss_fn(xi);
  tape.backward(loss);
  const auto& g = xi.grad();
  for (double v : g) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("attack: non-finite input gradient");
    }
  }
  return g;
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_linf_constraint(const Tensor& x, const Tensor& adv, double eps) {
  ++g_checks_performed;
  constexpr double slack = 1e-12;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double d = std::fabs(adv.data()[i] - x.data()[i]);
    double v = adv.data()[i];
    if (d > eps + slack || v < -slack || v > 1.0 + slack) {
      throw std::logic_error("attack: l-inf/range constraint violated");
    }
  }
  ++g_checks_passed;
}

void check_patch_constraint(const Tensor& x, const Tensor& adv,
                            const PatchSpec& patch) {
  ++g_checks_performed;
  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  constexpr double slack = 1e-12;
  for (std::size_t cc = 0; cc < c; ++cc)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col) {
        std::size_t i = (cc * h + r) * w + col;
        bool inside = r >= patch.row && r < patch.row + patch.height &&
                      col >= patch.col && col < patch.col + patch.width;
        double v = adv.data()[i];
        if (!inside && v != x.data()[i]) {
          throw std::logic_error("attack: pixel outside patch modified");
        }
        if (v < -slack || v > 1.0 + slack) {
          throw std::logic_error("attack: patch pixel outside [0,1]");
        }
      }
  ++g_checks_passed;
}

Tensor pgd_with_loss(const LossFn& loss_fn, const Tensor& x,
                     const AttackBudget& budget, Rng rng) {
  if (budget.eps < 0.0 || budget.alpha <= 0.0 || budget.steps < 1) {
    throw std::invalid_argument("attack: invalid budget");
  }
  std::vector<double> adv = x.data();
  if (budget.random_start && budget.eps > 0.0) {
    for (std::size_t i = 0; i < adv.size(); ++i) {
      adv[i] += rng.uniform(-budget.eps, budget.eps);
      adv[i] = std::min(1.0, std::max(0.0, adv[i]));
    }
  }
  for (std::size_t t = 0; t < budget.steps; ++t) {
    Tensor cur = Tensor::from_data(x.shape(), adv);
    auto g = input_gradient(loss_fn, cur);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      adv[i] += budget.alpha * sign(g[i]);
      // project onto the eps-ball around x, then onto [0,1]
      adv[i] = std::min(x.data()[i] + budget.eps,
                        std::max(x.data()[i] - budget.eps, adv[i]));
      adv[i] = std::min(1.0, std::max(0.0, adv[i]));
    }
  }
  Tensor out = Tensor::from_data(x.shape(), std::move(adv));
  check_linf_constraint(x, out, budget.eps);
  return out;
}

}  // namespace

ConstraintStats attack_constraint_stats() {
  return {g_checks_performed.load(), g_checks_passed.load()};
}

void reset_attack_constraint_stats() {
  g_checks_performed = 0;
  g_checks_passed = 0;
}

void PatchSpec::validate(const Shape& image) const {
  if (image.size() != 3) {
    throw std::invalid_argument("patch: expected CxHxW image");
  }
  if (height == 0 || width == 0 || row + height > image[1] ||
      col + width > image[2]) {
    throw std::invalid_argument("patch: region outside image bounds");
  }
}

Tensor fgsm(const Model& model, const Tensor& x, std::size_t label,
            double eps) {
  if (eps < 0.0) throw std::invalid_argument("fgsm: eps must be >= 0");
  auto g = input_gradient(
      [&](const Tensor& xi) { return model.attack_loss(xi, label); }, x);
  std::vector<double> adv(x.numel());
  for (std::size_t i = 0; i < adv.size(); ++i) {
    adv[i] = x.data()[i] + eps * sign(g[i]);
    adv[i] = std::min(1.0, std::max(0.0, adv[i]));
  }
  Tensor out = Tensor::from_data(x.shape(), std::move(adv));
  check_linf_constraint(x, out, eps);
  return out;
}

Tensor pgd(const Model& model, const Tensor& x, std::size_t label,
           const AttackBudget& budget, Rng rng) {
  return pgd_with_loss(
      [&](const Tensor& xi) { return model.attack_loss(xi, label); }, x,
      budget, rng);
}

Tensor caps_attack(const CapsuleNetwork& model, const Tensor& x,
                   std::size_t label, const AttackBudget& budget, Rng rng) {
  return pgd_with_loss(
      [&](const Tensor& xi) { return model.attack_loss(xi, label); }, x,
      budget, rng);
}

Tensor vote_attack(const CapsuleNetwork& model, const Tensor& x,
                   std::size_t label, const AttackBudget& budget, Rng rng) {
  return pgd_with_loss(
      [&](const Tensor& xi) { return model.vote_loss(xi, label); }, x, budget,
      rng);
}

Tensor patch_attack(const Model& model, const Tensor& x, std::size_t label,
                    const PatchSpec& patch, std::size_t steps, double lr) {
  patch.validate(x.shape());
  if (!(lr > 0.0)) throw std::invalid_argument("patch_attack: lr must be > 0");
  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::vector<double> adv = x.data();
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor cur = Tensor::from_data(x.shape(), adv);
    auto g = input_gradient(
        [&](const Tensor& xi) { return model.attack_loss(xi, label); }, cur);
    for (std::size_t cc = 0; cc < c; ++cc)
      for (std::size_t r = patch.row; r < patch.row + patch.height; ++r)
        for (std::size_t col = patch.col; col < patch.col + patch.width;
             ++col) {
          std::size_t i = (cc * h + r) * w + col;
          adv[i] += lr * sign(g[i]);
          adv[i] = std::min(1.0, std::max(0.0, adv[i]));
        }
  }
  Tensor out = Tensor::from_data(x.shape(), std::move(adv));
  check_patch_constraint(x, out, patch);
  return out;
}

CorruptKind corrupt_kind_from_name(const std::string& name) {
  if (name == "gaussian-noise") return CorruptKind::kGaussianNoise;
  if (name == "mean-shift") return CorruptKind::kMeanShift;
  if (name == "blackout") return CorruptKind::kBlackout;
  throw std::invalid_argument("patch_corrupt: unknown kind '" + name + "'");
}

Tensor patch_corrupt(const Tensor& x, const PatchSpec& patch, CorruptKind kind,
                     int severity, std::uint64_t seed) {
  patch.validate(x.shape());
  if (severity < 1 || severity > 5) {
    throw std::invalid_argument("patch_corrupt: severity must be in 1..5");
  }
  if (kind == CorruptKind::kBlackout && severity != 5) {
    throw std::invalid_argument("patch_corrupt: blackout is severity 5 only");
  }
  Rng rng = Rng(seed).split("patch-corrupt");
  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::vector<double> out = x.data();
  double sigma = 0.04 * severity;
  double shift = 0.1 * severity * (rng.uniform01() < 0.5 ? -1.0 : 1.0);
  for (std::size_t cc = 0; cc < c; ++cc)
    for (std::size_t r = patch.row; r < patch.row + patch.height; ++r)
      for (std::size_t col = patch.col; col < patch.col + patch.width; ++col) {
        std::size_t i = (cc * h + r) * w + col;
        switch (kind) {
          case CorruptKind::kGaussianNoise:
            out[i] += rng.normal(0.0, sigma);
            break;
          case CorruptKind::kMeanShift:
            out[i] += shift;
            break;
          case CorruptKind::kBlackout:
            out[i] = 0.0;
            break;
        }
        out[i] = std::min(1.0, std::max(0.0, out[i]));
      }
  return Tensor::from_data(x.shape(), std::move(out));
}

}  // namespace capsprobe
