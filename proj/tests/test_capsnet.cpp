#include <cmath>

#include "capsprobe/capsnet.hpp"
#include "capsprobe/convnet.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace capsprobe;

namespace {

CapsNetConfig tiny_caps_config(bool shared = false) {
  CapsNetConfig cfg;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.conv1 = {4, 3, 2};  // 8 -> 3
  cfg.conv2 = {8, 3, 1};  // 3 -> 1
  cfg.d_in = 4;           // 2 groups -> n = 2
  cfg.d_out = 4;
  cfg.classes = 2;
  cfg.routing_iters = 2;
  cfg.shared_transform = shared;
  cfg.recon_hidden = 16;
  return cfg;
}

double vec_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("primary capsule arithmetic: C'=8, D_in=4, 2x2 grid gives 8 capsules") {
  Tensor maps = Tensor::zeros({8, 2, 2});
  Tensor u = extract_primary(maps, 4);
  CHECK(u.shape() == Shape{8, 4});

  // constant feature maps -> all capsules identical
  Tensor constant = Tensor::full({8, 2, 2}, 0.3);
  Tensor uc = extract_primary(constant, 4);
  for (std::size_t i = 1; i < 8; ++i)
    for (std::size_t d = 0; d < 4; ++d)
      CHECK(uc.data()[i * 4 + d] == uc.data()[d]);

  CHECK_THROWS_AS(extract_primary(maps, 3), std::invalid_argument);
}

TEST_CASE("votes with identity blocks reproduce the capsules") {
  std::size_t n = 3, m = 2, d = 4;
  Rng rng(1);
  auto uv = oracles::random_vec(rng, n * d);
  std::vector<double> w(n * m * d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t e = 0; e < d; ++e)
        w[((i * m + j) * d + e) * d + e] = 1.0;
  Tensor votes = vote_full(Tensor::from_data({n, d}, uv),
                           Tensor::from_data({n, m, d, d}, w));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t e = 0; e < d; ++e)
        CHECK(votes.data()[(i * m + j) * d + e] == uv[i * d + e]);

  // zero capsules -> zero votes
  Tensor zero_votes = vote_full(Tensor::zeros({n, d}),
                                Tensor::from_data({n, m, d, d}, w));
  for (double v : zero_votes.data()) CHECK(v == 0.0);
}

TEST_CASE("votes match hand matrix products on a 2x2x2 case") {
  // u_0=(1,2), u_1=(-1,0.5); W_ij chosen by hand
  Tensor u = Tensor::from_data({2, 2}, {1, 2, -1, 0.5});
  std::vector<double> w = {
      1, 0, 0, 1,      // W_00 = I
      2, 0, 0, 2,      // W_01 = 2I
      0, 1, 1, 0,      // W_10 = swap
      1, 1, 0, 1,      // W_11 upper triangular
  };
  Tensor votes = vote_full(u, Tensor::from_data({2, 2, 2, 2}, w));
  // u_hat[0|0] = u_0, u_hat[1|0] = 2 u_0
  CHECK(votes.data()[0] == 1.0);
  CHECK(votes.data()[1] == 2.0);
  CHECK(votes.data()[2] == 2.0);
  CHECK(votes.data()[3] == 4.0);
  // u_hat[0|1] = (0.5, -1) (swap), u_hat[1|1] = u_1 W_11 = (-1, -0.5)
  CHECK(votes.data()[4] == 0.5);
  CHECK(votes.data()[5] == -1.0);
  CHECK(votes.data()[6] == -1.0);
  CHECK(votes.data()[7] == -0.5);
}

TEST_CASE("squash: zero, unit norm, monotone and bounded") {
  Tensor zero = squash_rows(Tensor::zeros({1, 3}));
  for (double v : zero.data()) CHECK(v == 0.0);

  Tensor unit = squash_rows(Tensor::from_data({1, 2}, {1.0, 0.0}));
  CHECK(vec_norm(unit.data()) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(unit.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(unit.data()[1] == 0.0);

  double prev = 0.0;
  for (double norm : {0.1, 1.0, 10.0, 1000.0}) {
    Tensor v = squash_rows(Tensor::from_data({1, 2}, {norm, 0.0}));
    double len = vec_norm(v.data());
    CHECK(len > prev);
    CHECK(len < 1.0);
    // direction preserved
    CHECK(v.data()[0] > 0.0);
    CHECK(v.data()[1] == 0.0);
    prev = len;
  }
}

TEST_CASE("routing: K=1 closed form with uniform coupling") {
  Rng rng(2);
  std::size_t n = 3, m = 2, d = 2;
  auto uv = oracles::random_vec(rng, n * m * d);
  Tensor votes = Tensor::from_data({n, m, d}, uv);
  RoutingResult r = dynamic_routing(votes, 1);
  for (double c : r.coupling.data())
    CHECK(c == doctest::Approx(0.5).epsilon(1e-15));
  // v_j = squash(sum_i u_hat / m)
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> s(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t e = 0; e < d; ++e)
        s[e] += uv[(i * m + j) * d + e] / static_cast<double>(m);
    double t = s[0] * s[0] + s[1] * s[1];
    double norm = std::sqrt(t);
    for (std::size_t e = 0; e < d; ++e) {
      double expect = s[e] * (norm / (1.0 + t));
      CHECK(r.output.data()[j * d + e] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("routing rows stay normalized for K in {1,3,5}") {
  Rng rng(3);
  std::size_t n = 4, m = 3, d = 2;
  Tensor votes =
      Tensor::from_data({n, m, d}, oracles::random_vec(rng, n * m * d, -2, 2));
  for (std::size_t k : {1u, 3u, 5u}) {
    RoutingResult r = dynamic_routing(votes, k);
    CHECK(r.coupling_per_iter.size() == k);
    for (const auto& c : r.coupling_per_iter) {
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < m; ++j) row += c[i * m + j];
        CHECK(std::fabs(row - 1.0) <= 1e-9);
      }
    }
    // output capsule lengths in [0,1)
    for (std::size_t j = 0; j < m; ++j) {
      double t = 0.0;
      for (std::size_t e = 0; e < d; ++e) {
        double v = r.output.data()[j * d + e];
        t += v * v;
      }
      CHECK(std::sqrt(t) < 1.0);
    }
  }
  CHECK_THROWS_AS(dynamic_routing(votes, 0), std::invalid_argument);
}

TEST_CASE("routing matches the scripted oracle to 1e-12") {
  Rng rng(4);
  std::size_t n = 2, m = 2, d = 2;
  auto uv = oracles::random_vec(rng, n * m * d, -1.5, 1.5);
  Tensor votes = Tensor::from_data({n, m, d}, uv);
  for (int iters : {1, 3, 5}) {
    RoutingResult got = dynamic_routing(votes, iters);
    auto expect = oracles::routing_script(uv, n, m, d, iters);
    for (std::size_t i = 0; i < m * d; ++i)
      CHECK(std::fabs(got.output.data()[i] - expect.v[i]) < 1e-12);
    for (std::size_t i = 0; i < n * m; ++i)
      CHECK(std::fabs(got.coupling.data()[i] - expect.c[i]) < 1e-12);
    // same result in backprop mode
    RoutingResult bp = dynamic_routing(votes, iters, true);
    for (std::size_t i = 0; i < m * d; ++i)
      CHECK(std::fabs(bp.output.data()[i] - expect.v[i]) < 1e-12);
  }
}

TEST_CASE("routing is deterministic given votes") {
  Rng rng(5);
  Tensor votes = Tensor::from_data({3, 2, 4}, oracles::random_vec(rng, 24));
  RoutingResult a = dynamic_routing(votes, 3);
  RoutingResult b = dynamic_routing(votes, 3);
  CHECK(a.output.data() == b.output.data());
  CHECK(a.coupling.data() == b.coupling.data());
}

TEST_CASE("margin loss reproduces the analytic closed forms") {
  // |v| = [0.9, 0.1], target 0 -> 0
  Tensor v1 = Tensor::from_data({2, 2}, {0.9, 0, 0.1, 0});
  CHECK(margin_loss(v1, 0).item() == 0.0);

  // |v| = [0, 0], target 0 -> 0.9^2 = 0.81
  Tensor v2 = Tensor::zeros({2, 2});
  CHECK(margin_loss(v2, 0).item() == 0.81);

  // |v| = [0.5, 0.5], target 0 -> 0.4^2 + 0.5 * 0.4^2
  Tensor v3 = Tensor::from_data({2, 2}, {0.5, 0, 0.5, 0});
  double sq = (0.9 - 0.5) * (0.9 - 0.5);
  CHECK(margin_loss(v3, 0).item() == sq + 0.5 * sq);

  CHECK_THROWS_AS(margin_loss(v1, 2), std::invalid_argument);
}

TEST_CASE("margin loss is nonnegative and zero exactly on the margins") {
  Rng rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> data = oracles::random_vec(rng, 6, -0.7, 0.7);
    Tensor v = Tensor::from_data({3, 2}, data);
    double loss = margin_loss(v, rep % 3).item();
    CHECK(loss >= 0.0);
    // zero iff target length >= 0.9 and others <= 0.1
    std::vector<double> lens(3);
    for (std::size_t j = 0; j < 3; ++j)
      lens[j] = std::hypot(data[j * 2], data[j * 2 + 1]);
    bool should_be_zero = lens[rep % 3] >= 0.9;
    for (std::size_t j = 0; j < 3; ++j)
      if (j != static_cast<std::size_t>(rep % 3) && lens[j] > 0.1)
        should_be_zero = false;
    CHECK((loss == 0.0) == should_be_zero);
  }
}

TEST_CASE("reconstruction masks every capsule but the target") {
  CapsuleNetwork net(tiny_caps_config(), Rng(7));
  Rng rng(8);
  // zero target capsule decodes to the pure bias image
  Tensor v_zero = Tensor::zeros({2, 4});
  std::vector<double> other = oracles::random_vec(rng, 8);
  other[0] = other[1] = other[2] = other[3] = 0.0;  // row 0 zero
  Tensor v_masked = Tensor::from_data({2, 4}, other);
  CHECK(net.reconstruct(v_zero, 0).data() == net.reconstruct(v_masked, 0).data());
  // and the non-target rows do not influence the output at all
  std::vector<double> mixed = oracles::random_vec(rng, 8);
  std::vector<double> target_only(8, 0.0);
  for (std::size_t d = 0; d < 4; ++d) target_only[d] = mixed[d];
  CHECK(net.reconstruct(Tensor::from_data({2, 4}, mixed), 0).data() ==
        net.reconstruct(Tensor::from_data({2, 4}, target_only), 0).data());
}

TEST_CASE("shared transform with identical capsules averages to W_j u") {
  std::size_t n = 4, m = 2, din = 3, dout = 2;
  Rng rng(9);
  auto base = oracles::random_vec(rng, din);
  std::vector<double> uv;
  for (std::size_t i = 0; i < n; ++i)
    uv.insert(uv.end(), base.begin(), base.end());
  auto wv = oracles::random_vec(rng, m * din * dout);
  Tensor u_hat = vote_shared(Tensor::from_data({n, din}, uv),
                             Tensor::from_data({m, din, dout}, wv));
  Tensor mean = scale(route_combine(u_hat, Tensor::full({n, m}, 1.0)),
                      1.0 / static_cast<double>(n));
  Tensor v = squash_rows(mean);
  // against squash(W_j u) computed directly
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> s(dout, 0.0);
    for (std::size_t d = 0; d < din; ++d)
      for (std::size_t e = 0; e < dout; ++e)
        s[e] += base[d] * wv[(j * din + d) * dout + e];
    double t = 0.0;
    for (double x : s) t += x * x;
    double norm = std::sqrt(t);
    for (std::size_t e = 0; e < dout; ++e)
      CHECK(v.data()[j * dout + e] ==
            doctest::Approx(s[e] * norm / (1.0 + t)).epsilon(1e-12));
  }
}

TEST_CASE("averaging equals K=1 routing up to the 1/M vs 1/N constant") {
  std::size_t n = 3, m = 2, din = 2, dout = 2;
  Rng rng(10);
  auto uv = oracles::random_vec(rng, n * din);
  auto wv = oracles::random_vec(rng, m * din * dout);
  Tensor u_hat = vote_shared(Tensor::from_data({n, din}, uv),
                             Tensor::from_data({m, din, dout}, wv));
  // pre-squash combines differ exactly by the factor N/M
  Tensor s_routing = route_combine(
      u_hat, Tensor::full({n, m}, 1.0 / static_cast<double>(m)));
  Tensor s_avg = scale(route_combine(u_hat, Tensor::full({n, m}, 1.0)),
                       1.0 / static_cast<double>(n));
  double factor = static_cast<double>(n) / static_cast<double>(m);
  for (std::size_t i = 0; i < s_avg.numel(); ++i)
    CHECK(s_routing.data()[i] ==
          doctest::Approx(factor * s_avg.data()[i]).epsilon(1e-12));
}

TEST_CASE("shared mode has exactly 1/N of the transformation parameters") {
  CapsuleNetwork dr(tiny_caps_config(false), Rng(11));
  CapsuleNetwork aff(tiny_caps_config(true), Rng(11));
  std::size_t n = tiny_caps_config().primary_count();
  CHECK(dr.transformation_param_count() ==
        n * aff.transformation_param_count());
}

TEST_CASE("capsule prediction takes the longest output vector") {
  Tensor v = Tensor::from_data({2, 2}, {0.2, 0, 0.8, 0});
  CHECK(argmax_lowest(row_norms(v).data()) == 1);
  Tensor tie = Tensor::from_data({3, 2}, {0.4, 0, 0.4, 0, 0.4, 0});
  CHECK(argmax_lowest(row_norms(tie).data()) == 0);
  // invariant under common positive scaling
  Rng rng(12);
  auto data = oracles::random_vec(rng, 8);
  Tensor a = Tensor::from_data({4, 2}, data);
  std::vector<double> scaled(data);
  for (double& x : scaled) x *= 3.7;
  Tensor b = Tensor::from_data({4, 2}, scaled);
  CHECK(argmax_lowest(row_norms(a).data()) ==
        argmax_lowest(row_norms(b).data()));
}

TEST_CASE("full capsule model losses match finite differences") {
  Rng data_rng(13);
  Tensor x = Tensor::from_data({1, 8, 8},
                               oracles::random_vec(data_rng, 64, 0.0, 1.0));
  // K=1 keeps the detached coupling exactly constant, so the whole loss
  // is differentiable as computed
  CapsNetConfig cfg = tiny_caps_config();
  cfg.routing_iters = 1;
  CapsuleNetwork net(cfg, Rng(14));
  auto params = net.named_parameters();
  Rng pick_rng(15);

  auto loss_value = [&]() { return net.loss(x, 1).item(); };
  for (int probe = 0; probe < 8; ++probe) {
    auto& param = params[pick_rng.uniform_int(params.size())].tensor;
    std::size_t idx = pick_rng.uniform_int(param.numel());
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
    double fp = loss_value();
    param.node()->value[idx] = keep - h;
    double fm = loss_value();
    param.node()->value[idx] = keep;
    double fd = (fp - fm) / (2 * h);
    double scale = std::max({1.0, std::fabs(fd), std::fabs(analytic)});
    CHECK(std::fabs(fd - analytic) / scale < 1e-4);
  }
}

TEST_CASE("backprop-through-routing gradients match finite differences at K=3") {
  Rng data_rng(16);
  Tensor x = Tensor::from_data({1, 8, 8},
                               oracles::random_vec(data_rng, 64, 0.0, 1.0));
  CapsNetConfig cfg = tiny_caps_config();
  cfg.routing_iters = 3;
  cfg.routing_backprop = true;
  cfg.reconstruction = false;
  CapsuleNetwork net(cfg, Rng(17));
  auto params = net.named_parameters();
  Rng pick_rng(18);
  for (int probe = 0; probe < 6; ++probe) {
    auto& param = params[pick_rng.uniform_int(params.size())].tensor;
    std::size_t idx = pick_rng.uniform_int(param.numel());
    double analytic;
    {
      net.set_trainable(true);
      Tape tape;
      tape.backward(net.loss(x, 0));
      analytic = param.grad()[idx];
      net.set_trainable(false);
    }
    double h = 1e-5;
    double keep = param.node()->value[idx];
    param.node()->value[idx] = keep + h;
    double fp = net.loss(x, 0).item();
    param.node()->value[idx] = keep - h;
    double fm = net.loss(x, 0).item();
    param.node()->value[idx] = keep;
    double fd = (fp - fm) / (2 * h);
    double scale = std::max({1.0, std::fabs(fd), std::fabs(analytic)});
    CHECK(std::fabs(fd - analytic) / scale < 1e-4);
  }
}
