#include "capsprobe/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace capsprobe {

double RelevanceMap::sum() const {
  return std::accumulate(values.begin(), values.end(), 0.0);
}

std::size_t RelevanceMap::argmax_index() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

namespace {

struct Activation {
  Shape shape;
  std::vector<double> data;
};

// plain forward keeping each layer's input
std::vector<Activation> record_activations(const ConvNet& net, const Tensor& x) {
  std::vector<Activation> acts;
  Tensor h = x;
  for (const auto& layer : net.layers()) {
    acts.push_back({h.shape(), h.data()});
    h = apply_layer(layer, h);
  }
  acts.push_back({h.shape(), h.data()});  // logits
  return acts;
}

double stabilized(double z, double eps) {
  return z + (z >= 0.0 ? eps : -eps);
}

std::vector<double> propagate_linear(const LinearLayer& l,
                                     const Activation& in,
                                     const Activation& out,
                                     const std::vector<double>& rel,
                                     double eps) {
  std::size_t k = l.weight.shape()[0], m = l.weight.shape()[1];
  std::vector<double> r_in(k, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    if (rel[j] == 0.0) continue;
    double denom = stabilized(out.data[j], eps);
    if (denom == 0.0) continue;
    double f = rel[j] / denom;
    for (std::size_t i = 0; i < k; ++i)
      r_in[i] += in.data[i] * l.weight.data()[i * m + j] * f;
  }
  return r_in;
}

std::vector<double> propagate_conv(const Conv2dLayer& l, const Activation& in,
                                   const Activation& out,
                                   const std::vector<double>& rel,
                                   double eps) {
  std::size_t c = in.shape[0], h = in.shape[1], w = in.shape[2];
  std::size_t f = l.weight.shape()[0], p = l.weight.shape()[2],
              q = l.weight.shape()[3];
  std::size_t ho = out.shape[1], wo = out.shape[2], stride = l.stride;
  std::vector<double> r_in(in.data.size(), 0.0);
  for (std::size_t fo = 0; fo < f; ++fo)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double r = rel[(fo * ho + i) * wo + j];
        if (r == 0.0) continue;
        double denom = stabilized(out.data[(fo * ho + i) * wo + j], eps);
        if (denom == 0.0) continue;
        double fct = r / denom;
        for (std::size_t cc = 0; cc < c; ++cc)
          for (std::size_t pp = 0; pp < p; ++pp)
            for (std::size_t qq = 0; qq < q; ++qq) {
              std::size_t xi = (cc * h + i * stride + pp) * w + j * stride + qq;
              r_in[xi] += in.data[xi] *
                          l.weight.data()[((fo * c + cc) * p + pp) * q + qq] *
                          fct;
            }
      }
  return r_in;
}

std::vector<double> propagate_pool(const MaxPoolLayer& l, const Activation& in,
                                   const std::vector<double>& rel) {
  std::size_t c = in.shape[0], h = in.shape[1], w = in.shape[2], s = l.size;
  std::size_t ho = h / s, wo = w / s;
  std::vector<double> r_in(in.data.size(), 0.0);
  for (std::size_t cc = 0; cc < c; ++cc)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t pp = 0; pp < s; ++pp)
          for (std::size_t qq = 0; qq < s; ++qq) {
            std::size_t xi = (cc * h + i * s + pp) * w + j * s + qq;
            if (in.data[xi] > best) {
              best = in.data[xi];
              best_idx = xi;
            }
          }
        r_in[best_idx] += rel[(cc * ho + i) * wo + j];
      }
  return r_in;
}

RelevanceMap propagate(const ConvNet& net, const Tensor& x,
                       std::vector<double> seed, std::size_t target,
                       double eps) {
  auto acts = record_activations(net, x);
  const auto& layers = net.layers();
  std::vector<double> rel = std::move(seed);
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Activation& in = acts[li];
    const Activation& out = acts[li + 1];
    if (const auto* lin = std::get_if<LinearLayer>(&layers[li])) {
      rel = propagate_linear(*lin, in, out, rel, eps);
    } else if (const auto* conv = std::get_if<Conv2dLayer>(&layers[li])) {
      rel = propagate_conv(*conv, in, out, rel, eps);
    } else if (const auto* pool = std::get_if<MaxPoolLayer>(&layers[li])) {
      rel = propagate_pool(*pool, in, rel);
    } else if (std::holds_alternative<ReluLayer>(layers[li]) ||
               std::holds_alternative<FlattenLayer>(layers[li])) {
      // relevance passes through unchanged
    } else {
      throw std::invalid_argument("lrp: unsupported layer type");
    }
  }
  // channel sum gives the per-pixel map
  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  RelevanceMap map;
  map.h = h;
  map.w = w;
  map.target = target;
  map.epsilon = eps;
  map.values.assign(h * w, 0.0);
  for (std::size_t cc = 0; cc < c; ++cc)
    for (std::size_t i = 0; i < h * w; ++i)
      map.values[i] += rel[cc * h * w + i];
  return map;
}

}  // namespace

RelevanceMap lrp(const ConvNet& net, const Tensor& x, std::size_t target,
                 double epsilon) {
  std::size_t m = net.num_classes();
  if (target >= m) {
    throw std::invalid_argument("lrp: target " + std::to_string(target) +
                                " out of range");
  }
  Tensor logits = net.forward_logits(x);
  std::vector<double> seed(m, 0.0);
  seed[target] = logits.data()[target];
  RelevanceMap map = propagate(net, x, std::move(seed), target, epsilon);
  map.explained_score = logits.data()[target];
  return map;
}

RelevanceMap clrp(const ConvNet& net, const Tensor& x, std::size_t target,
                  double epsilon) {
  std::size_t m = net.num_classes();
  if (m < 2) {
    throw std::invalid_argument("clrp: needs at least two classes");
  }
  if (target >= m) {
    throw std::invalid_argument("clrp: target out of range");
  }
  Tensor logits = net.forward_logits(x);
  double score = logits.data()[target];

  std::vector<double> seed(m, 0.0);
  seed[target] = score;
  RelevanceMap r = propagate(net, x, std::move(seed), target, epsilon);

  // dual concept: the target's score spread uniformly over the others
  std::vector<double> dual_seed(m, score / static_cast<double>(m - 1));
  dual_seed[target] = 0.0;
  RelevanceMap r_dual = propagate(net, x, std::move(dual_seed), target, epsilon);

  RelevanceMap out = r;
  out.rule = "clrp-epsilon";
  out.explained_score = score;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = std::max(0.0, r.values[i] - r_dual.values[i]);
  return out;
}

double pointing_game(const std::vector<RelevanceMap>& maps,
                     const std::vector<Box>& boxes) {
  if (maps.empty() || maps.size() != boxes.size()) {
    throw std::invalid_argument("pointing_game: need one box per map");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    std::size_t idx = maps[i].argmax_index();
    std::size_t r = idx / maps[i].w, c = idx % maps[i].w;
    if (boxes[i].row1 >= maps[i].h || boxes[i].col1 >= maps[i].w) {
      throw std::invalid_argument("pointing_game: box outside image bounds");
    }
    if (boxes[i].contains(r, c)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(maps.size());
}

std::vector<std::pair<double, double>> ablation_curve(const ConvNet& net,
                                                      const Tensor& x,
                                                      const RelevanceMap& map,
                                                      std::size_t k_steps) {
  if (k_steps < 1) throw std::invalid_argument("ablation_curve: k_steps >= 1");
  std::size_t pixels = map.values.size();
  std::vector<std::size_t> order(pixels);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return map.values[a] > map.values[b];
  });

  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::vector<std::pair<double, double>> curve;
  for (std::size_t step = 0; step <= k_steps; ++step) {
    double fraction = static_cast<double>(step) / static_cast<double>(k_steps);
    std::size_t kill = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(pixels) + 1e-9));
    std::vector<double> pix = x.data();
    for (std::size_t i = 0; i < kill; ++i) {
      std::size_t p = order[i];
      for (std::size_t cc = 0; cc < c; ++cc) pix[cc * h * w + p] = 0.0;
    }
    Tensor ablated = Tensor::from_data(x.shape(), std::move(pix));
    double score = net.forward_logits(ablated).data()[map.target];
    curve.emplace_back(fraction, score);
  }
  return curve;
}

void write_pgm(const std::string& path, const std::vector<double>& values,
               std::size_t h, std::size_t w) {
  if (values.size() != h * w) {
    throw std::invalid_argument("write_pgm: size mismatch");
  }
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double span = hi - lo;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  for (double v : values) {
    unsigned char byte =
        span <= 0.0 ? 0
                    : static_cast<unsigned char>(
                          std::lround((v - lo) / span * 255.0));
    os.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

void write_csv(const std::string& path, const std::vector<double>& values,
               std::size_t h, std::size_t w) {
  if (values.size() != h * w) {
    throw std::invalid_argument("write_csv: size mismatch");
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_csv: cannot open " + path);
  char buf[64];
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", values[r * w + c]);
      os << buf << (c + 1 == w ? "" : ",");
    }
    os << "\n";
  }
}

}  // namespace capsprobe
