#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace capsprobe {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;    // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t tape_id = 0;   // tape that produced this node, 0 for leaves

  void ensure_grad();
};

/// Dense 64-bit tensor handle. Copies share the underlying node, so a
/// model's parameter list and its layers see the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  // Rejects non-finite values.
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rank() const { return node_->shape.size(); }

  const std::vector<double>& data() const { return node_->value; }
  std::vector<double>& data() { return node_->value; }
  double item() const;  // scalar tensors only

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  const std::vector<double>& grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  Tensor clone() const;    // deep copy, keeps requires_grad
  Tensor detach() const;   // deep copy with requires_grad = false

  std::shared_ptr<TensorNode> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<TensorNode> n);

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;
};

/// Ordered record of executed operations. Ops append themselves to the
/// active tape; backward() replays the record in exact reverse order.
/// A tape and its tensors belong to one execution context.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // dLoss/dT for every requires_grad tensor on the tape. Errors on a
  // non-scalar loss, a loss this tape did not produce, or a second call.
  void backward(const Tensor& loss);

  std::size_t size() const { return steps_.size(); }
  std::size_t backward_steps() const { return backward_steps_; }
  std::uint64_t id() const { return id_; }

  static Tape* active();
  void push_step(std::function<void()> step);

 private:
  std::vector<std::function<void()>> steps_;
  std::uint64_t id_;
  bool consumed_ = false;
  std::size_t backward_steps_ = 0;
};

// Total number of tensor ops executed in this thread (forward only).
std::uint64_t op_count();

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);        // s * a
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// ---- reductions / views ----
Tensor sum(const Tensor& a);                    // scalar
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);              // 2-D
Tensor pick(const Tensor& a, std::size_t flat_index);  // scalar gather
Tensor take_rows(const Tensor& a, std::size_t r0, std::size_t r1);  // [r0,r1)
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor mask_rows_except(const Tensor& a, std::size_t keep_row);
Tensor add_rowwise(const Tensor& a, const Tensor& bias);  // bias per column

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- spatial ----
Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride);
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
Tensor max_pool(const Tensor& x, std::size_t s);
Tensor extract_patches(const Tensor& x, std::size_t p);

// ---- normalized / capsule ----
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, double eps = 1e-5);
Tensor row_norms(const Tensor& a);                    // {R,D} -> {R}
Tensor squash_rows(const Tensor& a);                  // Eq-style capsule squash
Tensor to_primary_capsules(const Tensor& x, std::size_t d_in);
Tensor vote_full(const Tensor& u, const Tensor& w);   // {N,Din},{N,M,Din,Dout}
Tensor vote_shared(const Tensor& u, const Tensor& w); // {N,Din},{M,Din,Dout}
Tensor route_combine(const Tensor& u_hat, const Tensor& c);  // -> {M,D}
Tensor vote_agreement(const Tensor& u_hat, const Tensor& v); // -> {N,M}

// ---- optimizer ----
void sgd_step(const std::vector<Tensor>& params, double lr);
void zero_grads(const std::vector<Tensor>& params);

}  // namespace capsprobe
