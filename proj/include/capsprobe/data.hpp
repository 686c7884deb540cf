#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "capsprobe/rng.hpp"
#include "capsprobe/tensor.hpp"

namespace capsprobe {

// Inclusive pixel bounds.
struct Box {
  std::size_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;

  bool contains(std::size_t r, std::size_t c) const {
    return r >= row0 && r <= row1 && c >= col0 && c <= col1;
  }
};

struct LabeledImage {
  Tensor pixels;  // C x H x W in [0,1]
  std::size_t label = 0;
  std::optional<Box> box;  // primary object
  // second object in two-object images
  std::optional<Box> distractor_box;
  std::optional<std::size_t> distractor_label;
};

using Dataset = std::vector<LabeledImage>;

struct IdxError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Big-endian IDX pair (images magic 0x803, labels magic 0x801); pixel
// bytes scaled to [0,1] by /255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& data);

enum class ShapeClass : std::size_t { kCircle = 0, kSquare = 1, kTriangle = 2 };
constexpr std::size_t kShapeClassCount = 3;

// Procedural 28x28 shape images with tight bounding boxes, balanced
// classes (round-robin), byte-deterministic in the seed. Two-object mode
// adds a second, different-class shape with a disjoint box; the label
// stays the primary shape's.
Dataset synth_shapes(std::size_t n, std::uint64_t seed, bool two_object = false);

struct AffineParams {
  double rotate_deg = 0.0;
  double shift_rows = 0.0;
  double shift_cols = 0.0;
  double scale = 1.0;
  double shear_deg = 0.0;
};

// Inverse-mapped bilinear resampling about the image center, zero padding
// outside the source.
Tensor apply_affine(const Tensor& x, const AffineParams& p);

}  // namespace capsprobe
