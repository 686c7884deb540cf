#pragma once

#include <string>
#include <utility>
#include <vector>

#include "capsprobe/convnet.hpp"
#include "capsprobe/data.hpp"

namespace capsprobe {

/// Per-pixel relevance with the propagation metadata that produced it.
struct RelevanceMap {
  std::vector<double> values;  // H*W, row-major
  std::size_t h = 0, w = 0;
  std::size_t target = 0;
  std::string rule = "epsilon";
  double epsilon = 0.0;
  double explained_score = 0.0;  // the logit the propagation started from

  double sum() const;
  // row-major index of the maximum, lowest index on ties
  std::size_t argmax_index() const;
};

// Epsilon-rule relevance propagation from the target logit back to the
// pixels. Conservation (sum of relevance equals the explained score)
// holds exactly on bias-free nets at epsilon = 0.
RelevanceMap lrp(const ConvNet& net, const Tensor& x, std::size_t target,
                 double epsilon = 1e-6);

// Contrastive LRP: the dual concept places score/(M-1) on every
// non-target logit; the map is max(0, R - R_dual).
RelevanceMap clrp(const ConvNet& net, const Tensor& x, std::size_t target,
                  double epsilon = 1e-6);

// Fraction of maps whose argmax pixel falls inside the paired box.
double pointing_game(const std::vector<RelevanceMap>& maps,
                     const std::vector<Box>& boxes);

// Target score after zeroing the top-k relevant pixels, for k on a
// uniform fraction grid of k_steps+1 points from 0 to 1.
std::vector<std::pair<double, double>> ablation_curve(const ConvNet& net,
                                                      const Tensor& x,
                                                      const RelevanceMap& map,
                                                      std::size_t k_steps);

// Binary P5 graymap, min-max normalized to 0..255.
void write_pgm(const std::string& path, const std::vector<double>& values,
               std::size_t h, std::size_t w);
// Raw values as comma-separated text, 9 significant digits, one image
// row per line.
void write_csv(const std::string& path, const std::vector<double>& values,
               std::size_t h, std::size_t w);

}  // namespace capsprobe
