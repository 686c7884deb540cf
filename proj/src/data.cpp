#include "capsprobe/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace capsprobe {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::istream& is, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IdxError(std::string("idx: truncated file reading ") + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IdxError("idx: cannot open " + images_path);
  std::ifstream lbl(labels_path, std::ios::binary);
  if (!lbl) throw IdxError("idx: cannot open " + labels_path);

  std::uint32_t magic = read_be32(img, "image magic");
  if (magic != kImageMagic) {
    throw IdxError("idx: image magic mismatch, expected 0x803, found 0x" +
                   [&] {
                     char buf[16];
                     std::snprintf(buf, sizeof buf, "%x", magic);
                     return std::string(buf);
                   }());
  }
  std::uint32_t count = read_be32(img, "image count");
  std::uint32_t rows = read_be32(img, "rows");
  std::uint32_t cols = read_be32(img, "cols");

  std::uint32_t lmagic = read_be32(lbl, "label magic");
  if (lmagic != kLabelMagic) {
    throw IdxError("idx: label magic mismatch, expected 0x801, found 0x" +
                   [&] {
                     char buf[16];
                     std::snprintf(buf, sizeof buf, "%x", lmagic);
                     return std::string(buf);
                   }());
  }
  std::uint32_t lcount = read_be32(lbl, "label count");
  if (count != lcount) {
    throw IdxError("idx: image count " + std::to_string(count) +
                   " does not match label count " + std::to_string(lcount));
  }

  Dataset out;
  out.reserve(count);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t i = 0; i < count; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(buf.size()));
    if (!img) throw IdxError("idx: truncated image payload");
    char label = 0;
    lbl.read(&label, 1);
    if (!lbl) throw IdxError("idx: truncated label payload");
    std::vector<double> pix(buf.size());
    for (std::size_t j = 0; j < buf.size(); ++j) pix[j] = buf[j] / 255.0;
    LabeledImage item;
    item.pixels = Tensor::from_data({1, rows, cols}, std::move(pix));
    item.label = static_cast<unsigned char>(label);
    out.push_back(std::move(item));
  }
  return out;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& data) {
  if (data.empty()) throw IdxError("idx: refusing to write an empty dataset");
  std::size_t rows = data[0].pixels.shape()[1];
  std::size_t cols = data[0].pixels.shape()[2];
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lbl(labels_path, std::ios::binary);
  if (!img || !lbl) throw IdxError("idx: cannot open output files");
  write_be32(img, kImageMagic);
  write_be32(img, static_cast<std::uint32_t>(data.size()));
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  write_be32(lbl, kLabelMagic);
  write_be32(lbl, static_cast<std::uint32_t>(data.size()));
  for (const auto& item : data) {
    for (double v : item.pixels.data()) {
      double clamped = std::min(1.0, std::max(0.0, v));
      unsigned char b =
          static_cast<unsigned char>(std::lround(clamped * 255.0));
      img.write(reinterpret_cast<const char*>(&b), 1);
    }
    unsigned char l = static_cast<unsigned char>(item.label);
    lbl.write(reinterpret_cast<const char*>(&l), 1);
  }
}

namespace {

constexpr std::size_t kCanvas = 28;

struct Placement {
  std::size_t cy, cx, half;
};

// Rasterizes one shape; returns the tight bounding box of set pixels.
Box rasterize(std::vector<double>& pix, ShapeClass cls, const Placement& pl,
              double intensity) {
  std::size_t r0 = kCanvas, c0 = kCanvas, r1 = 0, c1 = 0;
  auto set = [&](std::size_t r, std::size_t c) {
    pix[r * kCanvas + c] = intensity;
    r0 = std::min(r0, r);
    c0 = std::min(c0, c);
    r1 = std::max(r1, r);
    c1 = std::max(c1, c);
  };
  long cy = static_cast<long>(pl.cy), cx = static_cast<long>(pl.cx);
  long a = static_cast<long>(pl.half);
  for (long r = cy - a; r <= cy + a; ++r) {
    for (long c = cx - a; c <= cx + a; ++c) {
      if (r < 0 || c < 0 || r >= long(kCanvas) || c >= long(kCanvas)) continue;
      long dy = r - cy, dx = c - cx;
      bool inside = false;
      switch (cls) {
        case ShapeClass::kCircle:
          inside = dy * dy + dx * dx <= a * a;
          break;
        case ShapeClass::kSquare:
          inside = std::labs(dy) <= a && std::labs(dx) <= a;
          break;
        case ShapeClass::kTriangle: {
          // apex at cy-a, base at cy+a, halfwidth grows with dy
          long t = dy + a;  // 0 .. 2a
          inside = t >= 0 && t <= 2 * a && 2 * std::labs(dx) <= t;
          break;
        }
      }
      if (inside) set(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    }
  }
  return {r0, c0, r1, c1};
}

bool boxes_disjoint(const Box& a, const Box& b) {
  bool row_overlap = a.row0 <= b.row1 && b.row0 <= a.row1;
  bool col_overlap = a.col0 <= b.col1 && b.col0 <= a.col1;
  return !(row_overlap && col_overlap);
}

Placement sample_placement(Rng& rng, std::size_t min_half, std::size_t max_half) {
  std::size_t half = min_half + rng.uniform_int(max_half - min_half + 1);
  std::size_t lo = half + 1, hi = kCanvas - 2 - half;
  std::size_t cy = lo + rng.uniform_int(hi - lo + 1);
  std::size_t cx = lo + rng.uniform_int(hi - lo + 1);
  return {cy, cx, half};
}

}  // namespace

Dataset synth_shapes(std::size_t n, std::uint64_t seed, bool two_object) {
  if (n == 0) throw std::invalid_argument("synth_shapes: need n >= 1");
  Rng rng = Rng(seed).split("synth-shapes");
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto cls = static_cast<ShapeClass>(i % kShapeClassCount);
    std::vector<double> pix(kCanvas * kCanvas, 0.0);
    double intensity = rng.uniform(0.75, 1.0);
    Placement pl = two_object ? sample_placement(rng, 3, 5)
                              : sample_placement(rng, 4, 7);
    Box box = rasterize(pix, cls, pl, intensity);

    LabeledImage item;
    item.label = static_cast<std::size_t>(cls);
    item.box = box;
    if (two_object) {
      auto other = static_cast<ShapeClass>(
          (static_cast<std::size_t>(cls) + 1 + rng.uniform_int(2)) %
          kShapeClassCount);
      double intensity2 = rng.uniform(0.75, 1.0);
      for (int attempt = 0;; ++attempt) {
        Placement pl2 = sample_placement(rng, 3, attempt < 40 ? 5 : 3);
        // probe on a scratch canvas so failed placements leave no trace
        std::vector<double> scratch(kCanvas * kCanvas, 0.0);
        Box box2 = rasterize(scratch, other, pl2, intensity2);
        if (!boxes_disjoint(box, box2)) continue;
        for (std::size_t j = 0; j < pix.size(); ++j)
          pix[j] = std::max(pix[j], scratch[j]);
        item.distractor_box = box2;
        item.distractor_label = static_cast<std::size_t>(other);
        break;
      }
    }
    item.pixels = Tensor::from_data({1, kCanvas, kCanvas}, std::move(pix));
    out.push_back(std::move(item));
  }
  return out;
}

Tensor apply_affine(const Tensor& x, const AffineParams& p) {
  if (x.rank() != 3) {
    throw std::invalid_argument("apply_affine: expected CxHxW image");
  }
  if (!(p.scale > 0.0)) {
    throw std::invalid_argument("apply_affine: scale must be positive");
  }
  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  double cy = (static_cast<double>(h) - 1.0) / 2.0;
  double cx = (static_cast<double>(w) - 1.0) / 2.0;
  double th = p.rotate_deg * M_PI / 180.0;
  double sh = std::tan(p.shear_deg * M_PI / 180.0);
  // forward map: rotate . shear . scale, then translate
  double a00 = std::cos(th) * p.scale + (-std::sin(th)) * 0.0;
  double a01 = std::cos(th) * (sh * p.scale) - std::sin(th) * p.scale;
  double a10 = std::sin(th) * p.scale;
  double a11 = std::sin(th) * (sh * p.scale) + std::cos(th) * p.scale;
  double det = a00 * a11 - a01 * a10;
  double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;

  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t col = 0; col < w; ++col) {
      double dy = static_cast<double>(r) - cy - p.shift_rows;
      double dx = static_cast<double>(col) - cx - p.shift_cols;
      double sy = i00 * dy + i01 * dx + cy;
      double sx = i10 * dy + i11 * dx + cx;
      double fy = std::floor(sy), fx = std::floor(sx);
      long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
      double wy = sy - fy, wx = sx - fx;
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto sample = [&](long yy, long xx) -> double {
          if (yy < 0 || xx < 0 || yy >= long(h) || xx >= long(w)) return 0.0;
          return x.data()[(ch * h + yy) * w + xx];
        };
        double v = (1 - wy) * (1 - wx) * sample(y0, x0) +
                   (1 - wy) * wx * sample(y0, x0 + 1) +
                   wy * (1 - wx) * sample(y0 + 1, x0) +
                   wy * wx * sample(y0 + 1, x0 + 1);
        out[(ch * h + r) * w + col] = v;
      }
    }
  }
  return Tensor::from_data(x.shape(), std::move(out));
}

}  // namespace capsprobe
