#include "capsprobe/gracapsnet.hpp"

#include <cmath>
#include <stdexcept>

#include "capsprobe/convnet.hpp"

namespace capsprobe {

Tensor build_adjacency(std::size_t k) {
  if (k < 1) throw std::invalid_argument("build_adjacency: need K >= 1");
  std::size_t n = k * k;
  std::vector<double> adj(n * n, 0.0);
  std::vector<std::size_t> deg(n, 0);
  auto idx = [k](std::size_t r, std::size_t c) { return r * k + c; };
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t i = idx(r, c);
      if (r > 0) adj[i * n + idx(r - 1, c)] = 1.0;
      if (r + 1 < k) adj[i * n + idx(r + 1, c)] = 1.0;
      if (c > 0) adj[i * n + idx(r, c - 1)] = 1.0;
      if (c + 1 < k) adj[i * n + idx(r, c + 1)] = 1.0;
    }
  std::size_t max_deg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      if (adj[i * n + j] > 0.0) ++deg[i];
    max_deg = std::max(max_deg, deg[i]);
  }
  double c = static_cast<double>(max_deg + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) adj[i * n + j] /= c;
    adj[i * n + i] = 1.0 - static_cast<double>(deg[i]) / c;
  }
  return Tensor::from_data({n, n}, std::move(adj));
}

Tensor head_attention(const Tensor& adjacency, const Tensor& node_features,
                      const Tensor& weight) {
  // softmax over the node axis so pooling stays a convex combination
  return softmax(matmul(matmul(adjacency, node_features), weight), 0);
}

Tensor graph_pool(const Tensor& node_features, const Tensor& attention) {
  return matmul(transpose(attention), node_features);
}

std::size_t GraCapsConfig::grid() const {
  std::size_t h = (in_h - conv1.kernel) / conv1.stride + 1;
  h = (h - conv2.kernel) / conv2.stride + 1;
  std::size_t w = (in_w - conv1.kernel) / conv1.stride + 1;
  w = (w - conv2.kernel) / conv2.stride + 1;
  if (h != w) throw std::invalid_argument("gracapsnet: stem grid must be square");
  return h;
}

GraCapsNet::GraCapsNet(const GraCapsConfig& config, Rng rng)
    : config_(config) {
  if (config.d_in == 0 || config.conv2.filters % config.d_in != 0) {
    throw std::invalid_argument(
        "gracapsnet: d_in must divide stem output channels");
  }
  conv1_ = make_conv(config.conv1.filters, config.in_channels,
                     config.conv1.kernel, config.conv1.stride, rng);
  conv2_ = make_conv(config.conv2.filters, config.conv1.filters,
                     config.conv2.kernel, config.conv2.stride, rng);
  adjacency_ = build_adjacency(config.grid());
  double std_t = std::sqrt(2.0 / static_cast<double>(config.d_in));
  double std_a = std::sqrt(2.0 / static_cast<double>(config.d_out));
  for (std::size_t l = 0; l < config.heads(); ++l) {
    std::vector<double> wt(config.d_in * config.d_out);
    for (auto& v : wt) v = rng.normal(0.0, std_t);
    transform_.push_back(
        Tensor::from_data({config.d_in, config.d_out}, std::move(wt), true));
    std::vector<double> wa(config.d_out * config.classes);
    for (auto& v : wa) v = rng.normal(0.0, std_a);
    att_weight_.push_back(
        Tensor::from_data({config.d_out, config.classes}, std::move(wa), true));
  }
  if (config.reconstruction) {
    std::size_t pixels = config.in_channels * config.in_h * config.in_w;
    dec1_ = make_linear(config.classes * config.d_out, config.recon_hidden, rng);
    dec2_ = make_linear(config.recon_hidden, pixels, rng);
  }
}

std::vector<NamedTensor> GraCapsNet::named_parameters() const {
  std::vector<NamedTensor> out = {
      {"stem.conv1.w", conv1_.weight}, {"stem.conv1.b", conv1_.bias},
      {"stem.conv2.w", conv2_.weight}, {"stem.conv2.b", conv2_.bias},
  };
  for (std::size_t l = 0; l < transform_.size(); ++l) {
    out.push_back({"head" + std::to_string(l) + ".transform", transform_[l]});
    out.push_back({"head" + std::to_string(l) + ".attention", att_weight_[l]});
  }
  if (config_.reconstruction) {
    out.push_back({"decoder.fc1.w", dec1_.weight});
    out.push_back({"decoder.fc1.b", dec1_.bias});
    out.push_back({"decoder.fc2.w", dec2_.weight});
    out.push_back({"decoder.fc2.b", dec2_.bias});
  }
  return out;
}

GraCapsForward GraCapsNet::forward(const Tensor& x) const {
  Tensor h = relu(conv1_.forward(x));
  Tensor features = conv2_.forward(h);
  Tensor u = to_primary_capsules(features, config_.d_in);

  std::size_t k2 = config_.grid() * config_.grid();
  std::size_t heads = config_.heads();
  GraCapsForward out;
  Tensor pooled_sum;
  for (std::size_t l = 0; l < heads; ++l) {
    // capsules are laid out group-major, so head l owns rows [l*K^2,(l+1)*K^2)
    Tensor nodes = take_rows(u, l * k2, (l + 1) * k2);
    Tensor transformed = matmul(nodes, transform_[l]);
    Tensor att = head_attention(adjacency_, transformed, att_weight_[l]);
    out.attentions.push_back(att);
    Tensor pooled = graph_pool(transformed, att);
    pooled_sum = l == 0 ? pooled : add(pooled_sum, pooled);
  }
  Tensor mean = scale(pooled_sum, 1.0 / static_cast<double>(heads));
  out.output = squash_rows(mean);
  return out;
}

std::vector<double> GraCapsNet::builtin_explanation(
    const std::vector<Tensor>& attentions, std::size_t predicted) {
  if (attentions.empty()) {
    throw std::invalid_argument("builtin_explanation: no attention heads");
  }
  std::size_t nodes = attentions[0].shape()[0];
  std::size_t classes = attentions[0].shape()[1];
  if (predicted >= classes) {
    throw std::invalid_argument("builtin_explanation: class out of range");
  }
  std::vector<double> heat(nodes, 0.0);
  for (const Tensor& att : attentions)
    for (std::size_t i = 0; i < nodes; ++i)
      heat[i] += att.data()[i * classes + predicted];
  for (double& v : heat) v /= static_cast<double>(attentions.size());
  return heat;
}

Tensor GraCapsNet::loss(const Tensor& x, std::size_t label) const {
  GraCapsForward f = forward(x);
  Tensor total = margin_loss(f.output, label);
  if (config_.reconstruction) {
    Tensor masked = mask_rows_except(f.output, label);
    Tensor flat = reshape(masked, {1, f.output.numel()});
    Tensor recon = sigmoid(dec2_.forward(relu(dec1_.forward(flat))));
    Tensor diff = sub(recon, reshape(x, {1, x.numel()}));
    total = add(total, scale(sum(mul(diff, diff)), config_.recon_weight));
  }
  return total;
}

Tensor GraCapsNet::attack_loss(const Tensor& x, std::size_t label) const {
  return margin_loss(forward(x).output, label);
}

std::size_t GraCapsNet::predict(const Tensor& x) const {
  return argmax_lowest(row_norms(forward(x).output).data());
}

}  // namespace capsprobe
