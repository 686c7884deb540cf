#pragma once

// Internal helpers shared by the tensor op translation units.

#include <functional>
#include <string>

#include "capsprobe/tensor.hpp"

namespace capsprobe::detail {

using BackwardFn = std::function<void(const TensorNode& out)>;

[[noreturn]] void fail(const std::string& msg);
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);
void accumulate(const std::shared_ptr<TensorNode>& n,
                const std::vector<double>& g);

// Builds the op output; records the backward rule when a tape is active
// and any input tracks gradients. A backward rule only runs if downstream
// ops actually deposited gradient on the output.
Tensor make_op_result(Shape shape, std::vector<double> value,
                      const std::vector<Tensor>& inputs, BackwardFn backward);

}  // namespace capsprobe::detail
