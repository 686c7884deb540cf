#include "capsprobe/capsnet.hpp"

#include <cmath>
#include <stdexcept>

#include "capsprobe/convnet.hpp"

namespace capsprobe {

Tensor margin_loss(const Tensor& v, std::size_t target, double m_plus,
                   double m_minus, double lambda) {
  if (v.rank() != 2) {
    throw std::invalid_argument("margin_loss: expected {M,D} capsules");
  }
  std::size_t m = v.shape()[0];
  if (target >= m) {
    throw std::invalid_argument("margin_loss: target " +
                                std::to_string(target) + " out of range for " +
                                std::to_string(m) + " classes");
  }
  std::vector<double> t(m, 0.0), anti(m, 1.0);
  t[target] = 1.0;
  anti[target] = 0.0;
  Tensor t_hot = Tensor::from_data({m}, std::move(t));
  Tensor t_anti = Tensor::from_data({m}, std::move(anti));

  Tensor lens = row_norms(v);
  Tensor pos = relu(add_scalar(neg(lens), m_plus));   // max(0, m+ - |v|)
  Tensor negv = relu(add_scalar(lens, -m_minus));     // max(0, |v| - m-)
  Tensor present = sum(mul(mul(pos, pos), t_hot));
  Tensor absent = scale(sum(mul(mul(negv, negv), t_anti)), lambda);
  return add(present, absent);
}

namespace {

// One softmax + combine + squash + agreement pass on raw buffers; used by
// the detached-coefficient routing path.
void routing_data_iterations(const std::vector<double>& u_hat, std::size_t n,
                             std::size_t m, std::size_t d, std::size_t iters,
                             std::vector<double>& c_out,
                             std::vector<std::vector<double>>* trace) {
  std::vector<double> b(n * m, 0.0), v(m * d, 0.0);
  std::vector<double>& c = c_out;
  c.assign(n * m, 0.0);
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double mx = b[i * m];
      for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, b[i * m + j]);
      double z = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        c[i * m + j] = std::exp(b[i * m + j] - mx);
        z += c[i * m + j];
      }
      for (std::size_t j = 0; j < m; ++j) c[i * m + j] /= z;
    }
    if (trace) trace->push_back(c);
    if (it + 1 == iters) break;
    for (std::size_t j = 0; j < m; ++j) {
      double t = 0.0;
      double* vj = v.data() + j * d;
      for (std::size_t e = 0; e < d; ++e) vj[e] = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double cij = c[i * m + j];
        const double* uij = u_hat.data() + (i * m + j) * d;
        for (std::size_t e = 0; e < d; ++e) vj[e] += cij * uij[e];
      }
      for (std::size_t e = 0; e < d; ++e) t += vj[e] * vj[e];
      double norm = std::sqrt(t);
      double q = norm < 1e-12 ? 0.0 : norm / (1.0 + t);
      for (std::size_t e = 0; e < d; ++e) vj[e] *= q;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double a = 0.0;
        for (std::size_t e = 0; e < d; ++e)
          a += v[j * d + e] * u_hat[(i * m + j) * d + e];
        b[i * m + j] += a;
      }
  }
}

}  // namespace

RoutingResult dynamic_routing(const Tensor& votes, std::size_t iterations,
                              bool backprop_through_routing) {
  if (votes.rank() != 3) {
    throw std::invalid_argument("dynamic_routing: expected {N,M,D} votes");
  }
  if (iterations < 1) {
    throw std::invalid_argument("dynamic_routing: need at least one iteration");
  }
  std::size_t n = votes.shape()[0], m = votes.shape()[1], d = votes.shape()[2];
  RoutingResult result;

  if (!backprop_through_routing) {
    std::vector<double> c;
    routing_data_iterations(votes.data(), n, m, d, iterations, c,
                            &result.coupling_per_iter);
    result.coupling = Tensor::from_data({n, m}, std::move(c));
    result.output = squash_rows(route_combine(votes, result.coupling));
    return result;
  }

  Tensor b = Tensor::zeros({n, m});
  Tensor c, v;
  for (std::size_t it = 0; it < iterations; ++it) {
    c = softmax(b, 1);
    result.coupling_per_iter.push_back(c.data());
    v = squash_rows(route_combine(votes, c));
    if (it + 1 == iterations) break;
    b = add(b, vote_agreement(votes, v));
  }
  result.coupling = c;
  result.output = v;
  return result;
}

std::size_t CapsNetConfig::grid_h() const {
  std::size_t h = (in_h - conv1.kernel) / conv1.stride + 1;
  return (h - conv2.kernel) / conv2.stride + 1;
}

std::size_t CapsNetConfig::grid_w() const {
  std::size_t w = (in_w - conv1.kernel) / conv1.stride + 1;
  return (w - conv2.kernel) / conv2.stride + 1;
}

std::size_t CapsNetConfig::primary_count() const {
  if (d_in == 0 || conv2.filters % d_in != 0) {
    throw std::invalid_argument(
        "capsnet config: d_in must divide stem output channels");
  }
  return (conv2.filters / d_in) * grid_h() * grid_w();
}

CapsuleNetwork::CapsuleNetwork(const CapsNetConfig& config, Rng rng)
    : config_(config) {
  std::size_t n = config.primary_count();
  conv1_ = make_conv(config.conv1.filters, config.in_channels,
                     config.conv1.kernel, config.conv1.stride, rng);
  conv2_ = make_conv(config.conv2.filters, config.conv1.filters,
                     config.conv2.kernel, config.conv2.stride, rng);
  double std = std::sqrt(2.0 / static_cast<double>(config.d_in));
  if (config.shared_transform) {
    std::vector<double> w(config.classes * config.d_in * config.d_out);
    for (auto& v : w) v = rng.normal(0.0, std);
    transform_ = Tensor::from_data({config.classes, config.d_in, config.d_out},
                                   std::move(w), true);
  } else {
    std::vector<double> w(n * config.classes * config.d_in * config.d_out);
    for (auto& v : w) v = rng.normal(0.0, std);
    transform_ = Tensor::from_data(
        {n, config.classes, config.d_in, config.d_out}, std::move(w), true);
  }
  if (config.reconstruction) {
    std::size_t pixels = config.in_channels * config.in_h * config.in_w;
    dec1_ = make_linear(config.classes * config.d_out, config.recon_hidden, rng);
    dec2_ = make_linear(config.recon_hidden, pixels, rng);
  }
}

std::vector<NamedTensor> CapsuleNetwork::named_parameters() const {
  std::vector<NamedTensor> out = {
      {"stem.conv1.w", conv1_.weight}, {"stem.conv1.b", conv1_.bias},
      {"stem.conv2.w", conv2_.weight}, {"stem.conv2.b", conv2_.bias},
      {"transform.w", transform_},
  };
  if (config_.reconstruction) {
    out.push_back({"decoder.fc1.w", dec1_.weight});
    out.push_back({"decoder.fc1.b", dec1_.bias});
    out.push_back({"decoder.fc2.w", dec2_.weight});
    out.push_back({"decoder.fc2.b", dec2_.bias});
  }
  return out;
}

Tensor CapsuleNetwork::stem(const Tensor& x) const {
  Tensor h = relu(conv1_.forward(x));
  return conv2_.forward(h);
}

Tensor extract_primary(const Tensor& features, std::size_t d_in) {
  return to_primary_capsules(features, d_in);
}

Tensor CapsuleNetwork::primary_capsules(const Tensor& x) const {
  return extract_primary(stem(x), config_.d_in);
}

Tensor CapsuleNetwork::votes(const Tensor& u) const {
  return config_.shared_transform ? vote_shared(u, transform_)
                                  : vote_full(u, transform_);
}

RoutingResult CapsuleNetwork::forward_routing(const Tensor& x) const {
  Tensor u_hat = votes(primary_capsules(x));
  if (config_.shared_transform) {
    // averaging instead of routing
    std::size_t n = u_hat.shape()[0];
    RoutingResult result;
    result.coupling = Tensor::full({n, config_.classes},
                                   1.0 / static_cast<double>(n));
    Tensor s = scale(route_combine(u_hat, Tensor::full({n, config_.classes}, 1.0)),
                     1.0 / static_cast<double>(n));
    result.output = squash_rows(s);
    return result;
  }
  return dynamic_routing(u_hat, config_.routing_iters,
                         config_.routing_backprop);
}

Tensor CapsuleNetwork::output_capsules(const Tensor& x) const {
  return forward_routing(x).output;
}

Tensor CapsuleNetwork::reconstruct(const Tensor& v, std::size_t target) const {
  if (!config_.reconstruction) {
    throw std::logic_error("capsnet: model built without a decoder");
  }
  Tensor masked = mask_rows_except(v, target);
  Tensor flat = reshape(masked, {1, v.numel()});
  Tensor h = relu(dec1_.forward(flat));
  return sigmoid(dec2_.forward(h));
}

Tensor CapsuleNetwork::loss(const Tensor& x, std::size_t label) const {
  Tensor v = output_capsules(x);
  Tensor total = margin_loss(v, label);
  if (config_.reconstruction) {
    Tensor recon = reconstruct(v, label);
    Tensor diff = sub(recon, reshape(x, {1, x.numel()}));
    total = add(total, scale(sum(mul(diff, diff)), config_.recon_weight));
  }
  return total;
}

Tensor CapsuleNetwork::attack_loss(const Tensor& x, std::size_t label) const {
  return margin_loss(output_capsules(x), label);
}

Tensor CapsuleNetwork::vote_loss(const Tensor& x, std::size_t label) const {
  Tensor u_hat = votes(primary_capsules(x));
  std::size_t n = u_hat.shape()[0];
  Tensor ones = Tensor::full({n, config_.classes}, 1.0);
  Tensor mean = scale(route_combine(u_hat, ones), 1.0 / static_cast<double>(n));
  return margin_loss(squash_rows(mean), label);
}

std::size_t CapsuleNetwork::predict(const Tensor& x) const {
  Tensor v = output_capsules(x);
  return argmax_lowest(row_norms(v).data());
}

}  // namespace capsprobe
