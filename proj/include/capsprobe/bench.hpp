#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "capsprobe/attack.hpp"
#include "capsprobe/data.hpp"
#include "capsprobe/model.hpp"

namespace capsprobe {

// One line of a machine-parsable report:
//   metric=<name> model=<id> split=<id> value=<f64> denom=<u64>
struct MetricRecord {
  std::string metric;
  std::string model;
  std::string split;
  double value = 0.0;
  std::uint64_t denom = 0;
};

struct Report {
  std::vector<std::string> notes;  // emitted as leading '# ' lines
  std::vector<MetricRecord> records;

  void write(std::ostream& os) const;
  std::string to_string() const;
  const MetricRecord& find(const std::string& metric, const std::string& model,
                           const std::string& split) const;
};

struct BenchModel {
  std::string id;
  const Model* model = nullptr;
};

std::vector<std::pair<std::string, AffineParams>> default_affine_grid();

// Accuracy of each frozen model on the untransformed split and on each
// affine-transformed split, plus parameter counts. Models must be frozen
// (trained); a still-trainable model is rejected.
Report affine_benchmark(const std::vector<BenchModel>& models,
                        const Dataset& dataset,
                        const std::vector<std::pair<std::string, AffineParams>>&
                            param_grid,
                        std::uint64_t seed);

struct PatchBenchOptions {
  std::size_t patch_size = 7;
  std::vector<int> severities = {1, 3, 5};
  CorruptKind corrupt_kind = CorruptKind::kGaussianNoise;
  std::size_t attack_steps = 100;
  double attack_lr = 8.0 / 255.0;
  // per-position sensitivity grid; fewer steps keep the slide affordable
  bool position_grid = true;
  std::size_t grid_attack_steps = 30;
};

// Clean accuracy, accuracy under per-severity patch corruption, adversarial
// patch attack success rate, and the per-position success grid over all
// aligned patch slots. Success rates are measured over the inputs the
// clean model classifies correctly, and that denominator is printed with
// every rate.
Report patch_benchmark(const std::vector<BenchModel>& models,
                       const Dataset& dataset, const PatchBenchOptions& opt,
                       std::uint64_t seed);

}  // namespace capsprobe
