#include "capsprobe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "op_support.hpp"

namespace capsprobe {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local std::uint64_t g_next_tape_id = 1;
thread_local std::uint64_t g_op_count = 0;

void check_finite_span(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) detail::fail(std::string(what) + ": non-finite value");
  }
}

#ifndef NDEBUG
void debug_check_finite(const std::vector<double>& v, const char* op) {
  check_finite_span(v, op);
}
#else
void debug_check_finite(const std::vector<double>&, const char*) {}
#endif

}  // namespace

namespace detail {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
         " vs " + shape_str(b.shape()));
  }
}

void accumulate(const std::shared_ptr<TensorNode>& n,
                const std::vector<double>& g) {
  if (!n->requires_grad) return;
  n->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
}

Tensor make_op_result(Shape shape, std::vector<double> value,
                      const std::vector<Tensor>& inputs, BackwardFn backward) {
  ++g_op_count;
  debug_check_finite(value, "op result");
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  Tensor out = Tensor::wrap(node);
  Tape* tape = Tape::active();
  if (tape != nullptr && backward) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->tape_id = tape->id();
      tape->push_step([node, fn = std::move(backward)]() {
        if (!node->grad.empty()) fn(*node);
      });
    }
  }
  return out;
}

}  // namespace detail

using detail::accumulate;
using detail::fail;
using detail::make_op_result;
using detail::require_same_shape;

std::string shape_str(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out;
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

void TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

Tensor Tensor::wrap(std::shared_ptr<TensorNode> n) {
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from_data(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) fail("tensor extents must be positive, got " + shape_str(shape));
  }
  std::size_t n = shape_numel(shape);
  if (data.empty()) data.assign(n, 0.0);
  if (data.size() != n) {
    fail("data length " + std::to_string(data.size()) +
         " does not match shape " + shape_str(shape));
  }
  check_finite_span(data, "tensor creation");
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

double Tensor::item() const {
  if (numel() != 1) fail("item() on non-scalar tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) fail("tensor has no gradient (missing-grad)");
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::clone() const {
  return from_data(node_->shape, node_->value, node_->requires_grad);
}

Tensor Tensor::detach() const {
  return from_data(node_->shape, node_->value, false);
}

Tape::Tape() : id_(g_next_tape_id++) {
  if (g_active_tape != nullptr) {
    throw std::logic_error("nested tapes are not supported");
  }
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = nullptr; }

Tape* Tape::active() { return g_active_tape; }

void Tape::push_step(std::function<void()> step) {
  steps_.push_back(std::move(step));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) {
    throw std::logic_error("tape backward called twice without reset");
  }
  if (!loss.defined() || loss.numel() != 1) {
    fail("backward requires a scalar loss");
  }
  if (loss.node()->tape_id != id_) {
    fail("loss tensor is detached from this tape");
  }
  consumed_ = true;
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
    (*it)();
    ++backward_steps_;
  }
}

std::uint64_t op_count() { return g_op_count; }

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_op_result(a.shape(), std::move(out), {a, b},
                        [an, bn](const TensorNode& o) {
                          accumulate(an, o.grad);
                          accumulate(bn, o.grad);
                        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_op_result(a.shape(), std::move(out), {a, b},
                        [an, bn](const TensorNode& o) {
                          accumulate(an, o.grad);
                          if (bn->requires_grad) {
                            bn->ensure_grad();
                            for (std::size_t i = 0; i < o.grad.size(); ++i)
                              bn->grad[i] -= o.grad[i];
                          }
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_op_result(a.shape(), std::move(out), {a, b},
                        [an, bn](const TensorNode& o) {
                          if (an->requires_grad) {
                            an->ensure_grad();
                            for (std::size_t i = 0; i < o.grad.size(); ++i)
                              an->grad[i] += o.grad[i] * bn->value[i];
                          }
                          if (bn->requires_grad) {
                            bn->ensure_grad();
                            for (std::size_t i = 0; i < o.grad.size(); ++i)
                              bn->grad[i] += o.grad[i] * an->value[i];
                          }
                        });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double s) {
  if (!std::isfinite(s)) fail("scale: non-finite factor");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a.data()[i];
  auto an = a.node();
  return make_op_result(a.shape(), std::move(out), {a},
                        [an, s](const TensorNode& o) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t i = 0; i < o.grad.size(); ++i)
                            an->grad[i] += s * o.grad[i];
                        });
}

Tensor add_scalar(const Tensor& a, double s) {
  if (!std::isfinite(s)) fail("add_scalar: non-finite addend");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
  auto an = a.node();
  return make_op_result(a.shape(), std::move(out), {a},
                        [an](const TensorNode& o) { accumulate(an, o.grad); });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  auto an = a.node();
  return make_op_result(a.shape(), std::move(out), {a},
                        [an](const TensorNode& o) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t i = 0; i < o.grad.size(); ++i)
                            if (an->value[i] > 0.0) an->grad[i] += o.grad[i];
                        });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = a.data()[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  }
  auto an = a.node();
  return make_op_result(a.shape(), std::move(out), {a},
                        [an](const TensorNode& o) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t i = 0; i < o.grad.size(); ++i) {
                            double y = o.value[i];
                            an->grad[i] += o.grad[i] * y * (1.0 - y);
                          }
                        });
}

// ------------------------------------------------------------------ reshaping

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto an = a.node();
  return make_op_result({1}, {s}, {a}, [an](const TensorNode& o) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (double& g : an->grad) g += o.grad[0];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    fail("reshape: cannot view " + shape_str(a.shape()) + " as " +
         shape_str(shape));
  }
  auto an = a.node();
  return make_op_result(std::move(shape), a.data(), {a},
                        [an](const TensorNode& o) { accumulate(an, o.grad); });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) fail("transpose: expected 2-D tensor, got " + shape_str(a.shape()));
  std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
  auto an = a.node();
  return make_op_result({c, r}, std::move(out), {a},
                        [an, r, c](const TensorNode& o) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j)
                              an->grad[i * c + j] += o.grad[j * r + i];
                        });
}

Tensor pick(const Tensor& a, std::size_t flat_index) {
  if (flat_index >= a.numel()) {
    fail("pick: index " + std::to_string(flat_index) + " out of range for " +
         shape_str(a.shape()));
  }
  auto an = a.node();
  return make_op_result({1}, {a.data()[flat_index]}, {a},
                        [an, flat_index](const TensorNode& o) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          an->grad[flat_index] += o.grad[0];
                        });
}

Tensor take_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  if (a.rank() != 2) fail("take_rows: expected 2-D tensor");
  std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (r0 >= r1 || r1 > rows) fail("take_rows: bad row range");
  std::vector<double> out(a.data().begin() + r0 * cols,
                          a.data().begin() + r1 * cols);
  auto an = a.node();
  return make_op_result({r1 - r0, cols}, std::move(out), {a},
                        [an, r0, cols](const TensorNode& o) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t i = 0; i < o.grad.size(); ++i)
                            an->grad[r0 * cols + i] += o.grad[i];
                        });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
    fail("concat_rows: incompatible shapes " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  }
  std::size_t cols = a.shape()[1];
  std::vector<double> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  auto an = a.node(), bn = b.node();
  std::size_t na = a.numel();
  return make_op_result({a.shape()[0] + b.shape()[0], cols}, std::move(out),
                        {a, b}, [an, bn, na](const TensorNode& o) {
                          if (an->requires_grad) {
                            an->ensure_grad();
                            for (std::size_t i = 0; i < na; ++i)
                              an->grad[i] += o.grad[i];
                          }
                          if (bn->requires_grad) {
                            bn->ensure_grad();
                            for (std::size_t i = na; i < o.grad.size(); ++i)
                              bn->grad[i - na] += o.grad[i];
                          }
                        });
}

Tensor mask_rows_except(const Tensor& a, std::size_t keep_row) {
  if (a.rank() != 2) fail("mask_rows_except: expected 2-D tensor");
  std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (keep_row >= rows) fail("mask_rows_except: row out of range");
  std::vector<double> out(a.numel(), 0.0);
  for (std::size_t j = 0; j < cols; ++j)
    out[keep_row * cols + j] = a.data()[keep_row * cols + j];
  auto an = a.node();
  return make_op_result(a.shape(), std::move(out), {a},
                        [an, keep_row, cols](const TensorNode& o) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t j = 0; j < cols; ++j)
                            an->grad[keep_row * cols + j] +=
                                o.grad[keep_row * cols + j];
                        });
}

Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != a.shape()[1]) {
    fail("add_rowwise: shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(bias.shape()));
  }
  std::size_t rows = a.shape()[0], cols = a.shape()[1];
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out[i * cols + j] = a.data()[i * cols + j] + bias.data()[j];
  auto an = a.node(), bn = bias.node();
  return make_op_result(a.shape(), std::move(out), {a, bias},
                        [an, bn, rows, cols](const TensorNode& o) {
                          accumulate(an, o.grad);
                          if (bn->requires_grad) {
                            bn->ensure_grad();
                            for (std::size_t i = 0; i < rows; ++i)
                              for (std::size_t j = 0; j < cols; ++j)
                                bn->grad[j] += o.grad[i * cols + j];
                          }
                        });
}

// --------------------------------------------------------------------- linear

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    fail("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  }
  std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      double av = a.data()[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = b.data().data() + kk * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  auto an = a.node(), bn = b.node();
  return make_op_result({m, n}, std::move(out), {a, b},
                        [an, bn, m, k, n](const TensorNode& o) {
                          if (an->requires_grad) {
                            an->ensure_grad();
                            // a.grad += g . b^T
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t kk = 0; kk < k; ++kk) {
                                double s = 0.0;
                                for (std::size_t j = 0; j < n; ++j)
                                  s += o.grad[i * n + j] * bn->value[kk * n + j];
                                an->grad[i * k + kk] += s;
                              }
                          }
                          if (bn->requires_grad) {
                            bn->ensure_grad();
                            // b.grad += a^T . g
                            for (std::size_t kk = 0; kk < k; ++kk)
                              for (std::size_t i = 0; i < m; ++i) {
                                double av = an->value[i * k + kk];
                                if (av == 0.0) continue;
                                for (std::size_t j = 0; j < n; ++j)
                                  bn->grad[kk * n + j] += av * o.grad[i * n + j];
                              }
                          }
                        });
}

// -------------------------------------------------------------------- spatial

Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride) {
  if (x.rank() != 3 || k.rank() != 4) {
    fail("conv2d: expected CxHxW input and FxCxPxQ kernel, got " +
         shape_str(x.shape()) + " and " + shape_str(k.shape()));
  }
  if (stride == 0) fail("conv2d: stride must be positive");
  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::size_t f = k.shape()[0], kc = k.shape()[1], p = k.shape()[2],
              q = k.shape()[3];
  if (kc != c) {
    fail("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
         shape_str(k.shape()));
  }
  if (p > h || q > w) {
    fail("conv2d: kernel " + shape_str(k.shape()) + " larger than input " +
         shape_str(x.shape()));
  }
  std::size_t ho = (h - p) / stride + 1, wo = (w - q) / stride + 1;
  std::vector<double> out(f * ho * wo, 0.0);
  const double* xd = x.data().data();
  const double* kd = k.data().data();
  for (std::size_t fo = 0; fo < f; ++fo)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double s = 0.0;
        for (std::size_t cc = 0; cc < c; ++cc)
          for (std::size_t pp = 0; pp < p; ++pp) {
            const double* xrow = xd + (cc * h + i * stride + pp) * w + j * stride;
            const double* krow = kd + ((fo * c + cc) * p + pp) * q;
            for (std::size_t qq = 0; qq < q; ++qq) s += xrow[qq] * krow[qq];
          }
        out[(fo * ho + i) * wo + j] = s;
      }
  auto xn = x.node(), kn = k.node();
  return make_op_result(
      {f, ho, wo}, std::move(out), {x, k},
      [xn, kn, c, h, w, f, p, q, ho, wo, stride](const TensorNode& o) {
        if (xn->requires_grad) xn->ensure_grad();
        if (kn->requires_grad) kn->ensure_grad();
        for (std::size_t fo = 0; fo < f; ++fo)
          for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
              double g = o.grad[(fo * ho + i) * wo + j];
              if (g == 0.0) continue;
              for (std::size_t cc = 0; cc < c; ++cc)
                for (std::size_t pp = 0; pp < p; ++pp)
                  for (std::size_t qq = 0; qq < q; ++qq) {
                    std::size_t xi = (cc * h + i * stride + pp) * w +
                                     j * stride + qq;
                    std::size_t ki = ((fo * c + cc) * p + pp) * q + qq;
                    if (xn->requires_grad)
                      xn->grad[xi] += g * kn->value[ki];
                    if (kn->requires_grad)
                      kn->grad[ki] += g * xn->value[xi];
                  }
            }
      });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() != 3 || b.rank() != 1 || b.shape()[0] != x.shape()[0]) {
    fail("add_channel_bias: shape mismatch " + shape_str(x.shape()) + " vs " +
         shape_str(b.shape()));
  }
  std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  std::vector<double> out(x.numel());
  for (std::size_t cc = 0; cc < c; ++cc)
    for (std::size_t i = 0; i < hw; ++i)
      out[cc * hw + i] = x.data()[cc * hw + i] + b.data()[cc];
  auto xn = x.node(), bn = b.node();
  return make_op_result(x.shape(), std::move(out), {x, b},
                        [xn, bn, c, hw](const TensorNode& o) {
                          accumulate(xn, o.grad);
                          if (bn->requires_grad) {
                            bn->ensure_grad();
                            for (std::size_t cc = 0; cc < c; ++cc)
                              for (std::size_t i = 0; i < hw; ++i)
                                bn->grad[cc] += o.grad[cc * hw + i];
                          }
                        });
}

Tensor max_pool(const Tensor& x, std::size_t s) {
  if (x.rank() != 3) fail("max_pool: expected CxHxW input");
  if (s == 0) fail("max_pool: size must be positive");
  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (h % s != 0 || w % s != 0) {
    fail("max_pool: size " + std::to_string(s) +
         " does not divide input extents " + shape_str(x.shape()));
  }
  std::size_t ho = h / s, wo = w / s;
  std::vector<double> out(c * ho * wo);
  std::vector<std::size_t> argmax(c * ho * wo);
  for (std::size_t cc = 0; cc < c; ++cc)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        // row-major scan keeps the first occurrence on ties
        for (std::size_t pp = 0; pp < s; ++pp)
          for (std::size_t qq = 0; qq < s; ++qq) {
            std::size_t xi = (cc * h + i * s + pp) * w + j * s + qq;
            if (x.data()[xi] > best) {
              best = x.data()[xi];
              best_idx = xi;
            }
          }
        out[(cc * ho + i) * wo + j] = best;
        argmax[(cc * ho + i) * wo + j] = best_idx;
      }
  auto xn = x.node();
  return make_op_result({c, ho, wo}, std::move(out), {x},
                        [xn, argmax = std::move(argmax)](const TensorNode& o) {
                          if (!xn->requires_grad) return;
                          xn->ensure_grad();
                          for (std::size_t i = 0; i < o.grad.size(); ++i)
                            xn->grad[argmax[i]] += o.grad[i];
                        });
}

Tensor extract_patches(const Tensor& x, std::size_t p) {
  if (x.rank() != 3) fail("extract_patches: expected CxHxW input");
  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (p == 0 || h % p != 0 || w % p != 0) {
    fail("extract_patches: patch size " + std::to_string(p) +
         " does not divide " + shape_str(x.shape()));
  }
  std::size_t gh = h / p, gw = w / p, n = gh * gw, cols = c * p * p;
  std::vector<double> out(n * cols);
  for (std::size_t a = 0; a < gh; ++a)
    for (std::size_t b = 0; b < gw; ++b) {
      std::size_t row = a * gw + b;
      std::size_t o = row * cols;
      for (std::size_t cc = 0; cc < c; ++cc)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            out[o++] = x.data()[(cc * h + a * p + dy) * w + b * p + dx];
    }
  auto xn = x.node();
  return make_op_result({n, cols}, std::move(out), {x},
                        [xn, c, h, w, p, gh, gw, cols](const TensorNode& o) {
                          if (!xn->requires_grad) return;
                          xn->ensure_grad();
                          for (std::size_t a = 0; a < gh; ++a)
                            for (std::size_t b = 0; b < gw; ++b) {
                              std::size_t src = (a * gw + b) * cols;
                              for (std::size_t cc = 0; cc < c; ++cc)
                                for (std::size_t dy = 0; dy < p; ++dy)
                                  for (std::size_t dx = 0; dx < p; ++dx)
                                    xn->grad[(cc * h + a * p + dy) * w + b * p +
                                             dx] += o.grad[src++];
                            }
                        });
}

// ------------------------------------------------------------------ optimizer

void sgd_step(const std::vector<Tensor>& params, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("sgd_step: invalid learning rate");
  for (const Tensor& p : params) {
    if (!p.has_grad()) {
      fail("sgd_step: parameter of shape " + shape_str(p.shape()) +
           " has no gradient (missing-grad)");
    }
  }
  for (const Tensor& p : params) {
    auto n = p.node();
    for (std::size_t i = 0; i < n->value.size(); ++i)
      n->value[i] -= lr * n->grad[i];
    n->grad.clear();
  }
}

void zero_grads(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) p.node()->grad.clear();
}

}  // namespace capsprobe
