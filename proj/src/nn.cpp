#include "capsprobe/nn.hpp"

#include <cmath>

namespace capsprobe {

Tensor apply_layer(const Layer& layer, const Tensor& x) {
  return std::visit([&](const auto& l) { return l.forward(x); }, layer);
}

Conv2dLayer make_conv(std::size_t out_ch, std::size_t in_ch, std::size_t k,
                      std::size_t stride, Rng& rng, bool with_bias) {
  std::size_t fan_in = in_ch * k * k;
  double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> w(out_ch * in_ch * k * k);
  for (auto& v : w) v = rng.normal(0.0, std);
  Conv2dLayer layer;
  layer.weight = Tensor::from_data({out_ch, in_ch, k, k}, std::move(w), true);
  if (with_bias) layer.bias = Tensor::zeros({out_ch}, true);
  layer.stride = stride;
  return layer;
}

LinearLayer make_linear(std::size_t in, std::size_t out, Rng& rng,
                        bool with_bias) {
  double std = std::sqrt(2.0 / static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& v : w) v = rng.normal(0.0, std);
  LinearLayer layer;
  layer.weight = Tensor::from_data({in, out}, std::move(w), true);
  if (with_bias) layer.bias = Tensor::zeros({out}, true);
  return layer;
}

}  // namespace capsprobe
