#include "capsprobe/vit.hpp"

#include <cmath>
#include <stdexcept>

#include "capsprobe/convnet.hpp"

namespace capsprobe {

std::vector<double> attention_rollout(const AttentionRecord& record) {
  if (record.empty()) {
    throw std::invalid_argument("attention_rollout: empty record");
  }
  std::size_t n1 = record[0].shape()[0];
  // rollout accumulator starts as identity
  std::vector<double> roll(n1 * n1, 0.0);
  for (std::size_t i = 0; i < n1; ++i) roll[i * n1 + i] = 1.0;

  for (const Tensor& a : record) {
    if (a.shape() != Shape{n1, n1}) {
      throw std::invalid_argument("attention_rollout: inconsistent layer shape");
    }
    std::vector<double> hat(a.data());
    for (std::size_t i = 0; i < n1; ++i) {
      hat[i * n1 + i] += 1.0;
      double s = 0.0;
      for (std::size_t j = 0; j < n1; ++j) s += hat[i * n1 + j];
      for (std::size_t j = 0; j < n1; ++j) hat[i * n1 + j] /= s;
    }
    // later layers multiply from the left
    std::vector<double> next(n1 * n1, 0.0);
    for (std::size_t i = 0; i < n1; ++i)
      for (std::size_t k = 0; k < n1; ++k) {
        double h = hat[i * n1 + k];
        if (h == 0.0) continue;
        for (std::size_t j = 0; j < n1; ++j)
          next[i * n1 + j] += h * roll[k * n1 + j];
      }
    roll = std::move(next);
  }

  std::vector<double> heat(n1 - 1);
  double mass = 0.0;
  for (std::size_t j = 1; j < n1; ++j) {
    heat[j - 1] = roll[j];  // class-token row
    mass += heat[j - 1];
  }
  if (mass <= 0.0) {
    // class token kept all mass on itself; report no preference
    for (double& v : heat) v = 1.0 / static_cast<double>(n1 - 1);
  } else {
    for (double& v : heat) v /= mass;
  }
  return heat;
}

VisionTransformer::VisionTransformer(const ViTConfig& config, Rng rng)
    : config_(config) {
  if (config.patch == 0 || config.in_h % config.patch != 0 ||
      config.in_w % config.patch != 0) {
    throw std::invalid_argument("vit: patch size must divide image extents");
  }
  std::size_t pdim = config.in_channels * config.patch * config.patch;
  std::size_t n1 = config.patch_count() + 1;
  double std_p = std::sqrt(2.0 / static_cast<double>(pdim));
  std::vector<double> w(pdim * config.dim);
  for (auto& v : w) v = rng.normal(0.0, std_p);
  proj_w_ = Tensor::from_data({pdim, config.dim}, std::move(w), true);
  proj_b_ = Tensor::zeros({config.dim}, true);

  std::vector<double> tok(config.dim);
  for (auto& v : tok) v = rng.normal(0.0, 0.02);
  class_token_ = Tensor::from_data({1, config.dim}, std::move(tok), true);
  std::vector<double> pos(n1 * config.dim);
  for (auto& v : pos) v = rng.normal(0.0, 0.02);
  pos_embed_ = Tensor::from_data({n1, config.dim}, std::move(pos), true);

  double std_d = std::sqrt(1.0 / static_cast<double>(config.dim));
  for (std::size_t b = 0; b < config.blocks; ++b) {
    Block blk;
    blk.ln1_g = Tensor::full({config.dim}, 1.0, true);
    blk.ln1_b = Tensor::zeros({config.dim}, true);
    auto qkv = [&]() {
      std::vector<double> m(config.dim * config.dim);
      for (auto& v : m) v = rng.normal(0.0, std_d);
      return Tensor::from_data({config.dim, config.dim}, std::move(m), true);
    };
    blk.wq = qkv();
    blk.wk = qkv();
    blk.wv = qkv();
    blk.ln2_g = Tensor::full({config.dim}, 1.0, true);
    blk.ln2_b = Tensor::zeros({config.dim}, true);
    blk.mlp1 = make_linear(config.dim, config.mlp_hidden, rng);
    blk.mlp2 = make_linear(config.mlp_hidden, config.dim, rng);
    blocks_.push_back(std::move(blk));
  }
  lnf_g_ = Tensor::full({config.dim}, 1.0, true);
  lnf_b_ = Tensor::zeros({config.dim}, true);
  head_ = make_linear(config.dim, config.classes, rng);
}

std::vector<NamedTensor> VisionTransformer::named_parameters() const {
  std::vector<NamedTensor> out = {
      {"patch.proj.w", proj_w_},   {"patch.proj.b", proj_b_},
      {"class_token", class_token_}, {"pos_embed", pos_embed_},
  };
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    std::string p = "block" + std::to_string(i) + ".";
    out.push_back({p + "ln1.g", b.ln1_g});
    out.push_back({p + "ln1.b", b.ln1_b});
    out.push_back({p + "wq", b.wq});
    out.push_back({p + "wk", b.wk});
    out.push_back({p + "wv", b.wv});
    out.push_back({p + "ln2.g", b.ln2_g});
    out.push_back({p + "ln2.b", b.ln2_b});
    out.push_back({p + "mlp1.w", b.mlp1.weight});
    out.push_back({p + "mlp1.b", b.mlp1.bias});
    out.push_back({p + "mlp2.w", b.mlp2.weight});
    out.push_back({p + "mlp2.b", b.mlp2.bias});
  }
  out.push_back({"ln_f.g", lnf_g_});
  out.push_back({"ln_f.b", lnf_b_});
  out.push_back({"head.w", head_.weight});
  out.push_back({"head.b", head_.bias});
  return out;
}

Tensor VisionTransformer::patchify(const Tensor& x) const {
  if (x.shape() != Shape{config_.in_channels, config_.in_h, config_.in_w}) {
    throw std::invalid_argument("vit: input shape " + shape_str(x.shape()) +
                                " does not match config");
  }
  Tensor patches = extract_patches(x, config_.patch);
  Tensor embedded = add_rowwise(matmul(patches, proj_w_), proj_b_);
  Tensor seq = concat_rows(class_token_, embedded);
  return add(seq, pos_embed_);
}

ViTForward VisionTransformer::forward(const Tensor& x) const {
  Tensor seq = patchify(x);
  double inv = 1.0 / (temperature_ * std::sqrt(static_cast<double>(config_.dim)));
  ViTForward out;
  for (const Block& b : blocks_) {
    Tensor norm1 = layer_norm_rows(seq, b.ln1_g, b.ln1_b);
    Tensor q = matmul(norm1, b.wq);
    Tensor k = matmul(norm1, b.wk);
    Tensor v = matmul(norm1, b.wv);
    Tensor logits = scale(matmul(q, transpose(k)), inv);
    Tensor att = softmax(logits, 1);
    out.attention.push_back(att.detach());
    seq = add(seq, matmul(att, v));
    Tensor norm2 = layer_norm_rows(seq, b.ln2_g, b.ln2_b);
    Tensor h = relu(b.mlp1.forward(norm2));
    seq = add(seq, b.mlp2.forward(h));
  }
  Tensor final_norm = layer_norm_rows(seq, lnf_g_, lnf_b_);
  Tensor cls = take_rows(final_norm, 0, 1);
  out.logits = head_.forward(cls);
  return out;
}

Tensor VisionTransformer::loss(const Tensor& x, std::size_t label) const {
  return cross_entropy(forward(x).logits, label);
}

std::size_t VisionTransformer::predict(const Tensor& x) const {
  return argmax_lowest(forward(x).logits.data());
}

VisionTransformer VisionTransformer::with_temperature(double tau) const {
  if (!(tau >= 1.0)) {
    throw std::invalid_argument("smooth_attention: temperature must be >= 1");
  }
  VisionTransformer view = *this;  // shares parameter nodes
  view.temperature_ = tau;
  return view;
}

}  // namespace capsprobe
