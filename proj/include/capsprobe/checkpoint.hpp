#pragma once

#include <string>
#include <vector>

#include "capsprobe/tensor.hpp"

namespace capsprobe {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Flat binary parameter container. Layout: 8-byte magic "CPRB0001",
/// then per-tensor records of
///   name length (LE u64), UTF-8 name bytes,
///   rank (LE u64), extents (LE u64 each),
///   payload (LE f64, row-major).
void save_checkpoint(const std::string& path,
                     const std::vector<NamedTensor>& tensors);

std::vector<NamedTensor> load_checkpoint(const std::string& path);

// Copies stored values into the matching (by name) destination tensors.
// Throws on a missing name or a shape mismatch.
void restore_parameters(const std::vector<NamedTensor>& stored,
                        const std::vector<NamedTensor>& dst);

}  // namespace capsprobe
