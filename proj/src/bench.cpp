#include "capsprobe/bench.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "capsprobe/parallel.hpp"

namespace capsprobe {

namespace {

std::string fmt_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_frozen(const std::vector<BenchModel>& models) {
  if (models.empty()) throw std::invalid_argument("benchmark: no models given");
  for (const auto& bm : models) {
    for (const auto& p : bm.model->parameters()) {
      if (p.requires_grad()) {
        throw std::invalid_argument("benchmark: model '" + bm.id +
                                    "' is not frozen (untrained?)");
      }
    }
  }
}

// indices the model classifies correctly on the clean split
std::vector<std::size_t> correct_indices(const Model& model,
                                         const Dataset& data) {
  std::vector<unsigned char> ok(data.size(), 0);
  parallel_for(data.size(), [&](std::size_t i) {
    ok[i] = model.predict(data[i].pixels) == data[i].label ? 1 : 0;
  });
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (ok[i]) idx.push_back(i);
  return idx;
}

}  // namespace

void Report::write(std::ostream& os) const {
  for (const auto& n : notes) os << "# " << n << "\n";
  for (const auto& r : records) {
    os << "metric=" << r.metric << " model=" << r.model << " split=" << r.split
       << " value=" << fmt_value(r.value) << " denom=" << r.denom << "\n";
  }
}

std::string Report::to_string() const {
  std::ostringstream os;
  write(os);
  return os.str();
}

const MetricRecord& Report::find(const std::string& metric,
                                 const std::string& model,
                                 const std::string& split) const {
  for (const auto& r : records) {
    if (r.metric == metric && r.model == model && r.split == split) return r;
  }
  throw std::out_of_range("report: no record " + metric + "/" + model + "/" +
                          split);
}

std::vector<std::pair<std::string, AffineParams>> default_affine_grid() {
  std::vector<std::pair<std::string, AffineParams>> grid;
  for (double deg : {15.0, -15.0, 30.0, -30.0, 45.0, -45.0}) {
    AffineParams p;
    p.rotate_deg = deg;
    char name[32];
    std::snprintf(name, sizeof name, "rot%+g", deg);
    grid.emplace_back(name, p);
  }
  for (double px : {2.0, -2.0, 4.0, -4.0}) {
    AffineParams pr;
    pr.shift_rows = px;
    char name[32];
    std::snprintf(name, sizeof name, "shiftr%+g", px);
    grid.emplace_back(name, pr);
    AffineParams pc;
    pc.shift_cols = px;
    std::snprintf(name, sizeof name, "shiftc%+g", px);
    grid.emplace_back(name, pc);
  }
  for (double s : {0.8, 1.2}) {
    AffineParams p;
    p.scale = s;
    char name[32];
    std::snprintf(name, sizeof name, "scale%g", s);
    grid.emplace_back(name, p);
  }
  return grid;
}

Report affine_benchmark(
    const std::vector<BenchModel>& models, const Dataset& dataset,
    const std::vector<std::pair<std::string, AffineParams>>& param_grid,
    std::uint64_t seed) {
  require_frozen(models);
  if (dataset.empty()) throw std::invalid_argument("affine_benchmark: empty dataset");

  Report report;
  report.notes.push_back("affine robustness benchmark");
  report.notes.push_back("grid is a desk-scale stand-in; splits are named per transform");
  report.notes.push_back("seed=" + std::to_string(seed));

  // transformed splits are shared across models
  std::vector<std::pair<std::string, Dataset>> splits;
  splits.emplace_back("clean", dataset);
  for (const auto& [name, params] : param_grid) {
    Dataset transformed;
    transformed.reserve(dataset.size());
    for (const auto& item : dataset) {
      LabeledImage t = item;
      t.pixels = apply_affine(item.pixels, params);
      transformed.push_back(std::move(t));
    }
    splits.emplace_back(name, std::move(transformed));
  }

  for (const auto& bm : models) {
    for (const auto& [name, split] : splits) {
      std::vector<unsigned char> ok(split.size(), 0);
      parallel_for(split.size(), [&](std::size_t i) {
        ok[i] = bm.model->predict(split[i].pixels) == split[i].label ? 1 : 0;
      });
      std::size_t hits = std::accumulate(ok.begin(), ok.end(), std::size_t{0});
      report.records.push_back(
          {"accuracy", bm.id, name,
           static_cast<double>(hits) / static_cast<double>(split.size()),
           split.size()});
    }
    report.records.push_back({"param_count", bm.id, "total",
                              static_cast<double>(param_count(*bm.model)), 1});
  }
  return report;
}

Report patch_benchmark(const std::vector<BenchModel>& models,
                       const Dataset& dataset, const PatchBenchOptions& opt,
                       std::uint64_t seed) {
  require_frozen(models);
  if (dataset.empty()) throw std::invalid_argument("patch_benchmark: empty dataset");
  std::size_t h = dataset[0].pixels.shape()[1];
  std::size_t w = dataset[0].pixels.shape()[2];
  std::size_t p = opt.patch_size;
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw std::invalid_argument("patch_benchmark: patch size must divide image");
  }
  std::size_t slots_h = h / p, slots_w = w / p, slots = slots_h * slots_w;

  Report report;
  report.notes.push_back("patch robustness benchmark");
  report.notes.push_back(
      "the plain convnet stands in for the paper-scale ResNet comparator");
  report.notes.push_back("seed=" + std::to_string(seed));
  report.notes.push_back("patch=" + std::to_string(p) + "x" + std::to_string(p) +
                         " aligned slots=" + std::to_string(slots));

  Rng base(seed);
  for (const auto& bm : models) {
    const Model& model = *bm.model;
    auto correct = correct_indices(model, dataset);
    report.records.push_back(
        {"accuracy", bm.id, "clean",
         static_cast<double>(correct.size()) / static_cast<double>(dataset.size()),
         dataset.size()});

    // natural corruption at a random aligned slot per image
    for (int severity : opt.severities) {
      std::vector<unsigned char> ok(dataset.size(), 0);
      parallel_for(dataset.size(), [&](std::size_t i) {
        Rng r = base.split("corrupt-pos").split(i).split(severity);
        std::size_t slot = r.uniform_int(slots);
        PatchSpec patch{(slot / slots_w) * p, (slot % slots_w) * p, p, p, true};
        Tensor xc = patch_corrupt(dataset[i].pixels, patch, opt.corrupt_kind,
                                  severity, base.split("corrupt-noise")
                                                .split(i)
                                                .split(severity)
                                                .next());
        ok[i] = model.predict(xc) == dataset[i].label ? 1 : 0;
      });
      std::size_t hits = std::accumulate(ok.begin(), ok.end(), std::size_t{0});
      report.records.push_back(
          {"corrupt_accuracy", bm.id, "severity" + std::to_string(severity),
           static_cast<double>(hits) / static_cast<double>(dataset.size()),
           dataset.size()});
    }

    // adversarial patch success at a random aligned slot per image,
    // measured over the correctly classified inputs
    {
      std::vector<unsigned char> flipped(correct.size(), 0);
      parallel_for(correct.size(), [&](std::size_t ci) {
        std::size_t i = correct[ci];
        Rng r = base.split("attack-pos").split(i);
        std::size_t slot = r.uniform_int(slots);
        PatchSpec patch{(slot / slots_w) * p, (slot % slots_w) * p, p, p, true};
        Tensor adv = patch_attack(model, dataset[i].pixels, dataset[i].label,
                                  patch, opt.attack_steps, opt.attack_lr);
        flipped[ci] = model.predict(adv) != dataset[i].label ? 1 : 0;
      });
      std::size_t wins =
          std::accumulate(flipped.begin(), flipped.end(), std::size_t{0});
      report.records.push_back(
          {"patch_attack_success", bm.id, "random-slot",
           correct.empty()
               ? 0.0
               : static_cast<double>(wins) / static_cast<double>(correct.size()),
           correct.size()});
    }

    if (opt.position_grid) {
      std::vector<double> per_slot(slots, 0.0);
      for (std::size_t slot = 0; slot < slots; ++slot) {
        PatchSpec patch{(slot / slots_w) * p, (slot % slots_w) * p, p, p, true};
        std::vector<unsigned char> flipped(correct.size(), 0);
        parallel_for(correct.size(), [&](std::size_t ci) {
          std::size_t i = correct[ci];
          Tensor adv = patch_attack(model, dataset[i].pixels, dataset[i].label,
                                    patch, opt.grid_attack_steps, opt.attack_lr);
          flipped[ci] = model.predict(adv) != dataset[i].label ? 1 : 0;
        });
        std::size_t wins =
            std::accumulate(flipped.begin(), flipped.end(), std::size_t{0});
        per_slot[slot] =
            correct.empty()
                ? 0.0
                : static_cast<double>(wins) / static_cast<double>(correct.size());
        report.records.push_back({"position_attack_success", bm.id,
                                  "slot" + std::to_string(slot), per_slot[slot],
                                  correct.size()});
      }
      double mean = std::accumulate(per_slot.begin(), per_slot.end(), 0.0) /
                    static_cast<double>(slots);
      double var = 0.0;
      for (double v : per_slot) var += (v - mean) * (v - mean);
      var /= static_cast<double>(slots);
      report.records.push_back(
          {"position_success_variance", bm.id, "grid", var, slots});
    }
  }
  return report;
}

}  // namespace capsprobe
