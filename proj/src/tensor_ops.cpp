// Softmax family, layer norm, and the capsule-specific tensor ops.

#include <cmath>
#include <stdexcept>

#include "capsprobe/tensor.hpp"
#include "op_support.hpp"

namespace capsprobe {

using detail::accumulate;
using detail::fail;
using detail::make_op_result;

namespace {

// Decomposes the index space around `axis` so that lines along the axis
// can be walked as base + t*inner for t in [0, extent).
struct AxisLines {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisLines axis_lines(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    fail("softmax: invalid axis " + std::to_string(axis) + " for shape " +
         shape_str(s));
  }
  AxisLines l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
  l.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

}  // namespace

Tensor softmax(const Tensor& a, std::size_t axis) {
  AxisLines l = axis_lines(a.shape(), axis);
  std::vector<double> out(a.numel());
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t i = 0; i < l.inner; ++i) {
      std::size_t base = o * l.extent * l.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < l.extent; ++t)
        mx = std::max(mx, a.data()[base + t * l.inner]);
      double z = 0.0;
      for (std::size_t t = 0; t < l.extent; ++t) {
        double e = std::exp(a.data()[base + t * l.inner] - mx);
        out[base + t * l.inner] = e;
        z += e;
      }
      for (std::size_t t = 0; t < l.extent; ++t) out[base + t * l.inner] /= z;
    }
  auto an = a.node();
  return make_op_result(a.shape(), std::move(out), {a},
                        [an, l](const TensorNode& o) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t ou = 0; ou < l.outer; ++ou)
                            for (std::size_t i = 0; i < l.inner; ++i) {
                              std::size_t base = ou * l.extent * l.inner + i;
                              double dot = 0.0;
                              for (std::size_t t = 0; t < l.extent; ++t) {
                                std::size_t idx = base + t * l.inner;
                                dot += o.grad[idx] * o.value[idx];
                              }
                              for (std::size_t t = 0; t < l.extent; ++t) {
                                std::size_t idx = base + t * l.inner;
                                an->grad[idx] +=
                                    o.value[idx] * (o.grad[idx] - dot);
                              }
                            }
                        });
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  AxisLines l = axis_lines(a.shape(), axis);
  std::vector<double> out(a.numel());
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t i = 0; i < l.inner; ++i) {
      std::size_t base = o * l.extent * l.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < l.extent; ++t)
        mx = std::max(mx, a.data()[base + t * l.inner]);
      double z = 0.0;
      for (std::size_t t = 0; t < l.extent; ++t)
        z += std::exp(a.data()[base + t * l.inner] - mx);
      double lse = mx + std::log(z);
      for (std::size_t t = 0; t < l.extent; ++t)
        out[base + t * l.inner] = a.data()[base + t * l.inner] - lse;
    }
  auto an = a.node();
  return make_op_result(a.shape(), std::move(out), {a},
                        [an, l](const TensorNode& o) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t ou = 0; ou < l.outer; ++ou)
                            for (std::size_t i = 0; i < l.inner; ++i) {
                              std::size_t base = ou * l.extent * l.inner + i;
                              double gsum = 0.0;
                              for (std::size_t t = 0; t < l.extent; ++t)
                                gsum += o.grad[base + t * l.inner];
                              for (std::size_t t = 0; t < l.extent; ++t) {
                                std::size_t idx = base + t * l.inner;
                                an->grad[idx] +=
                                    o.grad[idx] - std::exp(o.value[idx]) * gsum;
                              }
                            }
                        });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, double eps) {
  if (x.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 ||
      gamma.shape()[0] != x.shape()[1] || beta.shape()[0] != x.shape()[1]) {
    fail("layer_norm_rows: shape mismatch " + shape_str(x.shape()) + " / " +
         shape_str(gamma.shape()) + " / " + shape_str(beta.shape()));
  }
  std::size_t rows = x.shape()[0], cols = x.shape()[1];
  std::vector<double> out(x.numel());
  std::vector<double> inv_std(rows), mean(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += xr[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(cols);
    double is = 1.0 / std::sqrt(var + eps);
    mean[r] = mu;
    inv_std[r] = is;
    for (std::size_t j = 0; j < cols; ++j)
      out[r * cols + j] = (xr[j] - mu) * is * gamma.data()[j] + beta.data()[j];
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_op_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, rows, cols, mean = std::move(mean),
       inv_std = std::move(inv_std)](const TensorNode& o) {
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = o.grad.data() + r * cols;
          const double* xr = xn->value.data() + r * cols;
          double mu = mean[r], is = inv_std[r];
          if (gn->requires_grad) {
            gn->ensure_grad();
            for (std::size_t j = 0; j < cols; ++j)
              gn->grad[j] += g[j] * (xr[j] - mu) * is;
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t j = 0; j < cols; ++j) bn->grad[j] += g[j];
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            double n = static_cast<double>(cols);
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
              double dy = g[j] * gn->value[j];
              double xhat = (xr[j] - mu) * is;
              sum_dy += dy;
              sum_dy_xhat += dy * xhat;
            }
            for (std::size_t j = 0; j < cols; ++j) {
              double dy = g[j] * gn->value[j];
              double xhat = (xr[j] - mu) * is;
              xn->grad[r * cols + j] +=
                  is * (dy - sum_dy / n - xhat * sum_dy_xhat / n);
            }
          }
        }
      });
}

Tensor row_norms(const Tensor& a) {
  if (a.rank() != 2) fail("row_norms: expected 2-D tensor");
  std::size_t rows = a.shape()[0], cols = a.shape()[1];
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      double v = a.data()[r * cols + j];
      s += v * v;
    }
    out[r] = std::sqrt(s);
  }
  auto an = a.node();
  return make_op_result({rows}, std::move(out), {a},
                        [an, rows, cols](const TensorNode& o) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r) {
                            double norm = o.value[r];
                            if (norm < 1e-12) continue;
                            double g = o.grad[r] / norm;
                            for (std::size_t j = 0; j < cols; ++j)
                              an->grad[r * cols + j] +=
                                  g * an->value[r * cols + j];
                          }
                        });
}

// v = (|s|^2 / (1 + |s|^2)) * s / |s|, applied per row; v(0) = 0.
Tensor squash_rows(const Tensor& a) {
  if (a.rank() != 2) fail("squash_rows: expected 2-D tensor");
  std::size_t rows = a.shape()[0], cols = a.shape()[1];
  std::vector<double> out(a.numel(), 0.0);
  std::vector<double> rnorm(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double t = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      double v = a.data()[r * cols + j];
      t += v * v;
    }
    double norm = std::sqrt(t);
    rnorm[r] = norm;
    if (norm < 1e-12) continue;
    double q = norm / (1.0 + t);
    for (std::size_t j = 0; j < cols; ++j)
      out[r * cols + j] = a.data()[r * cols + j] * q;
  }
  auto an = a.node();
  return make_op_result(
      a.shape(), std::move(out), {a},
      [an, rows, cols, rnorm = std::move(rnorm)](const TensorNode& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          double norm = rnorm[r];
          if (norm < 1e-12) continue;  // squash is flat at the origin
          double t = norm * norm;
          double q = norm / (1.0 + t);
          double dq = (1.0 - t) / ((1.0 + t) * (1.0 + t));
          double sg = 0.0;
          for (std::size_t j = 0; j < cols; ++j)
            sg += o.grad[r * cols + j] * an->value[r * cols + j];
          for (std::size_t j = 0; j < cols; ++j) {
            an->grad[r * cols + j] +=
                q * o.grad[r * cols + j] +
                dq * (sg / norm) * an->value[r * cols + j];
          }
        }
      });
}

Tensor to_primary_capsules(const Tensor& x, std::size_t d_in) {
  if (x.rank() != 3) fail("to_primary_capsules: expected CxHxW feature maps");
  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (d_in == 0 || c % d_in != 0) {
    fail("to_primary_capsules: capsule dimension " + std::to_string(d_in) +
         " does not divide channel count " + std::to_string(c));
  }
  std::size_t groups = c / d_in, n = groups * h * w;
  std::vector<double> out(n * d_in);
  // capsule (g,h,w) element d is feature-map channel g*d_in+d at (h,w)
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        std::size_t row = (g * h + i) * w + j;
        for (std::size_t d = 0; d < d_in; ++d)
          out[row * d_in + d] = x.data()[((g * d_in + d) * h + i) * w + j];
      }
  auto xn = x.node();
  return make_op_result({n, d_in}, std::move(out), {x},
                        [xn, groups, h, w, d_in](const TensorNode& o) {
                          if (!xn->requires_grad) return;
                          xn->ensure_grad();
                          for (std::size_t g = 0; g < groups; ++g)
                            for (std::size_t i = 0; i < h; ++i)
                              for (std::size_t j = 0; j < w; ++j) {
                                std::size_t row = (g * h + i) * w + j;
                                for (std::size_t d = 0; d < d_in; ++d)
                                  xn->grad[((g * d_in + d) * h + i) * w + j] +=
                                      o.grad[row * d_in + d];
                              }
                        });
}

Tensor vote_full(const Tensor& u, const Tensor& w) {
  if (u.rank() != 2 || w.rank() != 4 || w.shape()[0] != u.shape()[0] ||
      w.shape()[2] != u.shape()[1]) {
    fail("vote_full: shape mismatch " + shape_str(u.shape()) + " vs " +
         shape_str(w.shape()));
  }
  std::size_t n = u.shape()[0], din = u.shape()[1], m = w.shape()[1],
              dout = w.shape()[3];
  std::vector<double> out(n * m * dout, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double* wij = w.data().data() + ((i * m + j) * din) * dout;
      double* o = out.data() + (i * m + j) * dout;
      for (std::size_t d = 0; d < din; ++d) {
        double uv = u.data()[i * din + d];
        if (uv == 0.0) continue;
        for (std::size_t e = 0; e < dout; ++e) o[e] += uv * wij[d * dout + e];
      }
    }
  auto un = u.node(), wn = w.node();
  return make_op_result(
      {n, m, dout}, std::move(out), {u, w},
      [un, wn, n, din, m, dout](const TensorNode& o) {
        if (un->requires_grad) un->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double* g = o.grad.data() + (i * m + j) * dout;
            for (std::size_t d = 0; d < din; ++d) {
              std::size_t wbase = ((i * m + j) * din + d) * dout;
              if (un->requires_grad) {
                double s = 0.0;
                for (std::size_t e = 0; e < dout; ++e)
                  s += g[e] * wn->value[wbase + e];
                un->grad[i * din + d] += s;
              }
              if (wn->requires_grad) {
                double uv = un->value[i * din + d];
                for (std::size_t e = 0; e < dout; ++e)
                  wn->grad[wbase + e] += uv * g[e];
              }
            }
          }
      });
}

Tensor vote_shared(const Tensor& u, const Tensor& w) {
  if (u.rank() != 2 || w.rank() != 3 || w.shape()[1] != u.shape()[1]) {
    fail("vote_shared: shape mismatch " + shape_str(u.shape()) + " vs " +
         shape_str(w.shape()));
  }
  std::size_t n = u.shape()[0], din = u.shape()[1], m = w.shape()[0],
              dout = w.shape()[2];
  std::vector<double> out(n * m * dout, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double* wj = w.data().data() + (j * din) * dout;
      double* o = out.data() + (i * m + j) * dout;
      for (std::size_t d = 0; d < din; ++d) {
        double uv = u.data()[i * din + d];
        if (uv == 0.0) continue;
        for (std::size_t e = 0; e < dout; ++e) o[e] += uv * wj[d * dout + e];
      }
    }
  auto un = u.node(), wn = w.node();
  return make_op_result(
      {n, m, dout}, std::move(out), {u, w},
      [un, wn, n, din, m, dout](const TensorNode& o) {
        if (un->requires_grad) un->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double* g = o.grad.data() + (i * m + j) * dout;
            for (std::size_t d = 0; d < din; ++d) {
              std::size_t wbase = (j * din + d) * dout;
              if (un->requires_grad) {
                double s = 0.0;
                for (std::size_t e = 0; e < dout; ++e)
                  s += g[e] * wn->value[wbase + e];
                un->grad[i * din + d] += s;
              }
              if (wn->requires_grad) {
                double uv = un->value[i * din + d];
                for (std::size_t e = 0; e < dout; ++e)
                  wn->grad[wbase + e] += uv * g[e];
              }
            }
          }
      });
}

Tensor route_combine(const Tensor& u_hat, const Tensor& c) {
  if (u_hat.rank() != 3 || c.rank() != 2 || c.shape()[0] != u_hat.shape()[0] ||
      c.shape()[1] != u_hat.shape()[1]) {
    fail("route_combine: shape mismatch " + shape_str(u_hat.shape()) +
         " vs " + shape_str(c.shape()));
  }
  std::size_t n = u_hat.shape()[0], m = u_hat.shape()[1], d = u_hat.shape()[2];
  std::vector<double> out(m * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double cij = c.data()[i * m + j];
      const double* uij = u_hat.data().data() + (i * m + j) * d;
      for (std::size_t e = 0; e < d; ++e) out[j * d + e] += cij * uij[e];
    }
  auto un = u_hat.node(), cn = c.node();
  return make_op_result({m, d}, std::move(out), {u_hat, c},
                        [un, cn, n, m, d](const TensorNode& o) {
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < m; ++j) {
                              double cij = cn->value[i * m + j];
                              if (un->requires_grad) {
                                un->ensure_grad();
                                for (std::size_t e = 0; e < d; ++e)
                                  un->grad[(i * m + j) * d + e] +=
                                      cij * o.grad[j * d + e];
                              }
                              if (cn->requires_grad) {
                                cn->ensure_grad();
                                double s = 0.0;
                                for (std::size_t e = 0; e < d; ++e)
                                  s += un->value[(i * m + j) * d + e] *
                                       o.grad[j * d + e];
                                cn->grad[i * m + j] += s;
                              }
                            }
                        });
}

Tensor vote_agreement(const Tensor& u_hat, const Tensor& v) {
  if (u_hat.rank() != 3 || v.rank() != 2 || v.shape()[0] != u_hat.shape()[1] ||
      v.shape()[1] != u_hat.shape()[2]) {
    fail("vote_agreement: shape mismatch " + shape_str(u_hat.shape()) +
         " vs " + shape_str(v.shape()));
  }
  std::size_t n = u_hat.shape()[0], m = u_hat.shape()[1], d = u_hat.shape()[2];
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double* uij = u_hat.data().data() + (i * m + j) * d;
      const double* vj = v.data().data() + j * d;
      double s = 0.0;
      for (std::size_t e = 0; e < d; ++e) s += uij[e] * vj[e];
      out[i * m + j] = s;
    }
  auto un = u_hat.node(), vn = v.node();
  return make_op_result({n, m}, std::move(out), {u_hat, v},
                        [un, vn, n, m, d](const TensorNode& o) {
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < m; ++j) {
                              double g = o.grad[i * m + j];
                              if (g == 0.0) continue;
                              for (std::size_t e = 0; e < d; ++e) {
                                if (un->requires_grad) {
                                  un->ensure_grad();
                                  un->grad[(i * m + j) * d + e] +=
                                      g * vn->value[j * d + e];
                                }
                                if (vn->requires_grad) {
                                  vn->ensure_grad();
                                  vn->grad[j * d + e] +=
                                      g * un->value[(i * m + j) * d + e];
                                }
                              }
                            }
                        });
}

}  // namespace capsprobe
