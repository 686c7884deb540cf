#include <cmath>

#include "capsprobe/convnet.hpp"
#include "capsprobe/gracapsnet.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace capsprobe;

namespace {

GraCapsConfig tiny_gra_config() {
  GraCapsConfig cfg;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.conv1 = {4, 3, 2};  // 8 -> 3
  cfg.conv2 = {8, 2, 1};  // 3 -> 2, so K = 2
  cfg.d_in = 4;           // 2 heads
  cfg.d_out = 4;
  cfg.classes = 2;
  cfg.recon_hidden = 16;
  return cfg;
}

}  // namespace

TEST_CASE("adjacency: K=1 single self-loop") {
  Tensor a = build_adjacency(1);
  CHECK(a.shape() == Shape{1, 1});
  CHECK(a.item() == 1.0);
  CHECK_THROWS_AS(build_adjacency(0), std::invalid_argument);
}

TEST_CASE("adjacency: K=2 nodes carry two neighbors plus a self-loop") {
  Tensor a = build_adjacency(2);
  CHECK(a.shape() == Shape{4, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    std::size_t nonzero = 0;
    for (std::size_t j = 0; j < 4; ++j)
      if (a.data()[i * 4 + j] != 0.0) ++nonzero;
    CHECK(nonzero == 3);
    CHECK(a.data()[i * 4 + i] > 0.0);
  }
}

TEST_CASE("adjacency: symmetric with unit row sums at K=5") {
  Tensor a = build_adjacency(5);
  std::size_t n = 25;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row += a.data()[i * n + j];
      CHECK(a.data()[i * n + j] == a.data()[j * n + i]);
      CHECK(a.data()[i * n + j] >= 0.0);
    }
    CHECK(std::fabs(row - 1.0) <= 1e-12);
  }
}

TEST_CASE("head attention is uniform for constant node features") {
  std::size_t k2 = 4, d = 3, m = 2;
  Tensor adj = build_adjacency(2);
  std::vector<double> xv;
  for (std::size_t i = 0; i < k2; ++i)
    for (std::size_t j = 0; j < d; ++j) xv.push_back(0.3 * (j + 1));
  Rng rng(1);
  Tensor w = Tensor::from_data({d, m}, oracles::random_vec(rng, d * m));
  Tensor att = head_attention(adj, Tensor::from_data({k2, d}, xv), w);
  for (double v : att.data())
    CHECK(v == doctest::Approx(1.0 / static_cast<double>(k2)).epsilon(1e-12));
}

TEST_CASE("head attention columns sum to one") {
  std::size_t k2 = 9, d = 4, m = 3;
  Rng rng(2);
  Tensor att = head_attention(
      build_adjacency(3),
      Tensor::from_data({k2, d}, oracles::random_vec(rng, k2 * d)),
      Tensor::from_data({d, m}, oracles::random_vec(rng, d * m)));
  for (std::size_t j = 0; j < m; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < k2; ++i) col += att.data()[i * m + j];
    CHECK(std::fabs(col - 1.0) <= 1e-9);
  }
}

TEST_CASE("head attention matches a scripted softmax(A X W)") {
  std::size_t k = 2, k2 = 4, d = 3, m = 2;
  Rng rng(3);
  auto xv = oracles::random_vec(rng, k2 * d);
  auto wv = oracles::random_vec(rng, d * m);
  Tensor adj = build_adjacency(k);
  Tensor att = head_attention(adj, Tensor::from_data({k2, d}, xv),
                              Tensor::from_data({d, m}, wv));
  // independent recomputation with plain loops
  std::vector<double> ax(k2 * d, 0.0);
  for (std::size_t i = 0; i < k2; ++i)
    for (std::size_t l = 0; l < k2; ++l)
      for (std::size_t j = 0; j < d; ++j)
        ax[i * d + j] += adj.data()[i * k2 + l] * xv[l * d + j];
  std::vector<double> logits(k2 * m, 0.0);
  for (std::size_t i = 0; i < k2; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t l = 0; l < d; ++l)
        logits[i * m + j] += ax[i * d + l] * wv[l * m + j];
  for (std::size_t j = 0; j < m; ++j) {
    double mx = -1e300, z = 0.0;
    for (std::size_t i = 0; i < k2; ++i) mx = std::max(mx, logits[i * m + j]);
    for (std::size_t i = 0; i < k2; ++i) z += std::exp(logits[i * m + j] - mx);
    for (std::size_t i = 0; i < k2; ++i) {
      double expect = std::exp(logits[i * m + j] - mx) / z;
      CHECK(att.data()[i * m + j] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("graph pooling: uniform, selector and convex-hull cases") {
  std::size_t k2 = 4, d = 2, m = 2;
  Rng rng(4);
  auto xv = oracles::random_vec(rng, k2 * d);
  Tensor x = Tensor::from_data({k2, d}, xv);

  Tensor uniform = Tensor::full({k2, m}, 1.0 / static_cast<double>(k2));
  Tensor s = graph_pool(x, uniform);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t e = 0; e < d; ++e) {
      double mean = 0.0;
      for (std::size_t i = 0; i < k2; ++i) mean += xv[i * d + e];
      mean /= static_cast<double>(k2);
      CHECK(s.data()[j * d + e] == doctest::Approx(mean).epsilon(1e-12));
    }

  // one-hot column selects that node's feature
  std::vector<double> onehot(k2 * m, 0.0);
  onehot[2 * m + 0] = 1.0;  // class 0 <- node 2
  onehot[1 * m + 1] = 1.0;  // class 1 <- node 1
  Tensor sel = graph_pool(x, Tensor::from_data({k2, m}, onehot));
  for (std::size_t e = 0; e < d; ++e) {
    CHECK(sel.data()[0 * d + e] == xv[2 * d + e]);
    CHECK(sel.data()[1 * d + e] == xv[1 * d + e]);
  }

  // any attention distribution pools inside the per-coordinate hull
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> att(k2 * m);
    for (std::size_t j = 0; j < m; ++j) {
      double z = 0.0;
      for (std::size_t i = 0; i < k2; ++i) {
        att[i * m + j] = rng.uniform(0.01, 1.0);
        z += att[i * m + j];
      }
      for (std::size_t i = 0; i < k2; ++i) att[i * m + j] /= z;
    }
    Tensor pooled = graph_pool(x, Tensor::from_data({k2, m}, att));
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t e = 0; e < d; ++e) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t i = 0; i < k2; ++i) {
          lo = std::min(lo, xv[i * d + e]);
          hi = std::max(hi, xv[i * d + e]);
        }
        CHECK(pooled.data()[j * d + e] >= lo - 1e-12);
        CHECK(pooled.data()[j * d + e] <= hi + 1e-12);
      }
  }
}

TEST_CASE("forward output lengths stay in [0,1)") {
  GraCapsNet net(tiny_gra_config(), Rng(5));
  Rng rng(6);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor x = Tensor::from_data({1, 8, 8}, oracles::random_vec(rng, 64, 0, 1));
    GraCapsForward f = net.forward(x);
    auto lens = row_norms(f.output).data();
    for (double len : lens) {
      CHECK(len >= 0.0);
      CHECK(len < 1.0);
    }
    CHECK(f.attentions.size() == net.config().heads());
  }
}

TEST_CASE("duplicated identical heads reduce to the single-head result") {
  GraCapsConfig cfg = tiny_gra_config();
  GraCapsNet net(cfg, Rng(7));
  auto params = net.named_parameters();
  // copy head0 weights into head1 and make both stem groups identical
  auto find = [&](const std::string& name) -> Tensor {
    for (auto& [n, t] : params)
      if (n == name) return t;
    FAIL("missing param");
    return {};
  };
  find("head1.transform").node()->value = find("head0.transform").data();
  find("head1.attention").node()->value = find("head0.attention").data();
  Tensor conv2w = find("stem.conv2.w");  // {8, 4, 2, 2}
  std::size_t half = conv2w.numel() / 2;
  for (std::size_t i = 0; i < half; ++i)
    conv2w.node()->value[half + i] = conv2w.data()[i];
  Tensor conv2b = find("stem.conv2.b");
  conv2b.node()->value[4] = conv2b.data()[0];
  conv2b.node()->value[5] = conv2b.data()[1];
  conv2b.node()->value[6] = conv2b.data()[2];
  conv2b.node()->value[7] = conv2b.data()[3];

  Rng rng(8);
  Tensor x = Tensor::from_data({1, 8, 8}, oracles::random_vec(rng, 64, 0, 1));
  GraCapsForward f = net.forward(x);
  // both heads now see the same nodes through the same weights, so the
  // head average equals the single-head pooling result
  CHECK(f.attentions[0].data() == f.attentions[1].data());
  Tensor single = graph_pool(
      matmul(take_rows(to_primary_capsules(
                 add_channel_bias(
                     conv2d(relu(add_channel_bias(
                                conv2d(x, find("stem.conv1.w"), 2),
                                find("stem.conv1.b"))),
                            conv2w, 1),
                     conv2b),
                 4), 0, 4),
             find("head0.transform")),
      f.attentions[0]);
  Tensor expect = squash_rows(single);
  for (std::size_t i = 0; i < expect.numel(); ++i)
    CHECK(f.output.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
}

TEST_CASE("builtin explanation: uniform heads give a uniform unit-mass map") {
  std::size_t k2 = 4, m = 3;
  Tensor uniform = Tensor::full({k2, m}, 1.0 / static_cast<double>(k2));
  auto heat = GraCapsNet::builtin_explanation({uniform, uniform}, 1);
  double total = 0.0;
  for (double v : heat) {
    CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    total += v;
  }
  CHECK(std::fabs(total - 1.0) <= 1e-12);
  CHECK_THROWS_AS(GraCapsNet::builtin_explanation({uniform}, 3),
                  std::invalid_argument);
}

TEST_CASE("explanation sums to one on a live model") {
  GraCapsNet net(tiny_gra_config(), Rng(9));
  Rng rng(10);
  Tensor x = Tensor::from_data({1, 8, 8}, oracles::random_vec(rng, 64, 0, 1));
  GraCapsForward f = net.forward(x);
  std::size_t pred = argmax_lowest(row_norms(f.output).data());
  auto heat = GraCapsNet::builtin_explanation(f.attentions, pred);
  double total = 0.0;
  for (double v : heat) {
    CHECK(v >= 0.0);
    total += v;
  }
  CHECK(std::fabs(total - 1.0) <= 1e-9);
}

TEST_CASE("explanation creation adds zero tensor ops beyond the forward pass") {
  GraCapsNet net(tiny_gra_config(), Rng(11));
  Rng rng(12);
  Tensor x = Tensor::from_data({1, 8, 8}, oracles::random_vec(rng, 64, 0, 1));
  GraCapsForward f = net.forward(x);
  std::size_t pred = argmax_lowest(row_norms(f.output).data());
  std::uint64_t before = op_count();
  auto heat = GraCapsNet::builtin_explanation(f.attentions, pred);
  CHECK(op_count() == before);
  CHECK(heat.size() == 4);
}

TEST_CASE("model gradient agrees with finite differences") {
  GraCapsConfig cfg = tiny_gra_config();
  cfg.reconstruction = false;
  GraCapsNet net(cfg, Rng(13));
  Rng rng(14);
  Tensor x = Tensor::from_data({1, 8, 8}, oracles::random_vec(rng, 64, 0, 1));
  auto params = net.named_parameters();
  Rng pick(15);
  for (int probe = 0; probe < 6; ++probe) {
    auto& param = params[pick.uniform_int(params.size())].tensor;
    std::size_t idx = pick.uniform_int(param.numel());
    double analytic;
    {
      net.set_trainable(true);
      Tape tape;
      tape.backward(net.loss(x, 1));
      analytic = param.grad()[idx];
      net.set_trainable(false);
    }
    double h = 1e-5;
    double keep = param.node()->value[idx];
    param.node()->value[idx] = keep + h;
    double fp = net.loss(x, 1).item();
    param.node()->value[idx] = keep - h;
    double fm = net.loss(x, 1).item();
    param.node()->value[idx] = keep;
    double fd = (fp - fm) / (2 * h);
    double scale = std::max({1.0, std::fabs(fd), std::fabs(analytic)});
    CHECK(std::fabs(fd - analytic) / scale < 1e-4);
  }
}
