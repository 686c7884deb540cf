#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "capsprobe/bench.hpp"
#include "capsprobe/capsnet.hpp"
#include "capsprobe/convnet.hpp"
#include "capsprobe/gracapsnet.hpp"
#include "capsprobe/training.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace capsprobe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / "capsprobe_harness_test";
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("idx round-trip on a hand-built fixture") {
  TempDir dir;
  Dataset fixture;
  for (int i = 0; i < 2; ++i) {
    LabeledImage item;
    std::vector<double> pix = {0.0, 64.0 / 255.0, 128.0 / 255.0,
                               static_cast<double>(i)};
    item.pixels = Tensor::from_data({1, 2, 2}, std::move(pix));
    item.label = static_cast<std::size_t>(i);
    fixture.push_back(std::move(item));
  }
  std::string img = (dir.path / "img.idx").string();
  std::string lbl = (dir.path / "lbl.idx").string();
  write_idx(img, lbl, fixture);
  Dataset loaded = load_idx(img, lbl);
  REQUIRE(loaded.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(loaded[i].label == fixture[i].label);
    CHECK(loaded[i].pixels.data() == fixture[i].pixels.data());
  }
}

TEST_CASE("idx loader rejects bad magic and count mismatches") {
  TempDir dir;
  std::string img = (dir.path / "img.idx").string();
  std::string lbl = (dir.path / "lbl.idx").string();
  {
    std::ofstream os(img, std::ios::binary);
    const unsigned char bad[] = {0, 0, 8, 9, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1};
    os.write(reinterpret_cast<const char*>(bad), sizeof bad);
    std::ofstream ls(lbl, std::ios::binary);
    const unsigned char lab[] = {0, 0, 8, 1, 0, 0, 0, 1, 7};
    ls.write(reinterpret_cast<const char*>(lab), sizeof lab);
  }
  CHECK_THROWS_WITH_AS(load_idx(img, lbl), doctest::Contains("magic"),
                       IdxError);

  // valid magic but 2 images vs 1 label
  Dataset two;
  for (int i = 0; i < 2; ++i) {
    LabeledImage item;
    item.pixels = Tensor::from_data({1, 2, 2}, {0, 0, 0, 0});
    item.label = 0;
    two.push_back(std::move(item));
  }
  write_idx(img, lbl, two);
  {
    std::ofstream ls(lbl, std::ios::binary);
    const unsigned char lab[] = {0, 0, 8, 1, 0, 0, 0, 1, 0};
    ls.write(reinterpret_cast<const char*>(lab), sizeof lab);
  }
  CHECK_THROWS_WITH_AS(load_idx(img, lbl), doctest::Contains("count"),
                       IdxError);

  CHECK_THROWS_AS(load_idx((dir.path / "missing").string(), lbl), IdxError);
}

TEST_CASE("synthetic shapes are deterministic, balanced, boxed") {
  Dataset a = synth_shapes(31, 42);
  Dataset b = synth_shapes(31, 42);
  REQUIRE(a.size() == 31);
  std::size_t counts[3] = {0, 0, 0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pixels.data() == b[i].pixels.data());
    CHECK(a[i].label == b[i].label);
    ++counts[a[i].label];
    REQUIRE(a[i].box.has_value());
    const Box& box = *a[i].box;
    // at least one foreground pixel inside the box
    bool found = false;
    for (std::size_t r = box.row0; r <= box.row1 && !found; ++r)
      for (std::size_t c = box.col0; c <= box.col1 && !found; ++c)
        found = a[i].pixels.data()[r * 28 + c] > 0.0;
    CHECK(found);
    // nothing outside the box
    for (std::size_t r = 0; r < 28; ++r)
      for (std::size_t c = 0; c < 28; ++c)
        if (!box.contains(r, c))
          CHECK(a[i].pixels.data()[r * 28 + c] == 0.0);
  }
  CHECK(std::max({counts[0], counts[1], counts[2]}) -
            std::min({counts[0], counts[1], counts[2]}) <=
        1);
  CHECK(synth_shapes(5, 42)[0].pixels.data() == a[0].pixels.data());
  CHECK_THROWS_AS(synth_shapes(0, 1), std::invalid_argument);
}

TEST_CASE("two-object shapes carry disjoint boxes and distinct labels") {
  Dataset data = synth_shapes(30, 7, true);
  for (const auto& item : data) {
    REQUIRE(item.box.has_value());
    REQUIRE(item.distractor_box.has_value());
    REQUIRE(item.distractor_label.has_value());
    CHECK(*item.distractor_label != item.label);
    const Box& a = *item.box;
    const Box& d = *item.distractor_box;
    bool row_overlap = a.row0 <= d.row1 && d.row0 <= a.row1;
    bool col_overlap = a.col0 <= d.col1 && d.col0 <= a.col1;
    CHECK(!(row_overlap && col_overlap));
  }
}

TEST_CASE("affine identity and full rotation") {
  Dataset data = synth_shapes(3, 11);
  const Tensor& x = data[0].pixels;
  Tensor same = apply_affine(x, AffineParams{});
  CHECK(same.data() == x.data());

  AffineParams full;
  full.rotate_deg = 360.0;
  Tensor rotated = apply_affine(x, full);
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(std::fabs(rotated.data()[i] - x.data()[i]) <= 1e-6);
}

TEST_CASE("translation moves a point spike by whole pixels") {
  std::vector<double> pix(28 * 28, 0.0);
  pix[10 * 28 + 12] = 1.0;
  Tensor x = Tensor::from_data({1, 28, 28}, pix);
  AffineParams p;
  p.shift_rows = 1.0;
  Tensor shifted = apply_affine(x, p);
  CHECK(shifted.data()[11 * 28 + 12] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(shifted.data()[10 * 28 + 12] == doctest::Approx(0.0).epsilon(1e-12));

  p.shift_rows = 0.0;
  p.shift_cols = -2.0;
  Tensor left = apply_affine(x, p);
  CHECK(left.data()[10 * 28 + 10] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("single-component transforms invert within bilinear tolerance") {
  // smooth image so resampling error stays small
  std::vector<double> pix(28 * 28);
  for (std::size_t r = 0; r < 28; ++r)
    for (std::size_t c = 0; c < 28; ++c)
      pix[r * 28 + c] =
          0.5 + 0.4 * std::sin(0.12 * r) * std::cos(0.1 * c);
  Tensor x = Tensor::from_data({1, 28, 28}, pix);

  std::vector<std::pair<AffineParams, AffineParams>> pairs;
  {
    AffineParams f, b;
    f.rotate_deg = 15.0;
    b.rotate_deg = -15.0;
    pairs.emplace_back(f, b);
  }
  {
    AffineParams f, b;
    f.scale = 1.2;
    b.scale = 1.0 / 1.2;
    pairs.emplace_back(f, b);
  }
  {
    AffineParams f, b;
    f.shift_rows = 2.0;
    f.shift_cols = -1.0;
    b.shift_rows = -2.0;
    b.shift_cols = 1.0;
    pairs.emplace_back(f, b);
  }
  for (const auto& [fwd, bwd] : pairs) {
    Tensor round = apply_affine(apply_affine(x, fwd), bwd);
    double mae = 0.0;
    // interior only; the border is zero-padded by construction
    std::size_t count = 0;
    for (std::size_t r = 6; r < 22; ++r)
      for (std::size_t c = 6; c < 22; ++c) {
        mae += std::fabs(round.data()[r * 28 + c] - x.data()[r * 28 + c]);
        ++count;
      }
    mae /= static_cast<double>(count);
    CHECK(mae < 1e-3);
  }
}

TEST_CASE("report lines carry metric, model, split, value and denominator") {
  Report report;
  report.notes.push_back("example");
  report.records.push_back({"accuracy", "convnet", "clean", 0.9375, 32});
  std::string text = report.to_string();
  CHECK(text.find("# example\n") != std::string::npos);
  CHECK(text.find("metric=accuracy model=convnet split=clean value=0.9375 "
                  "denom=32") != std::string::npos);
  CHECK(report.find("accuracy", "convnet", "clean").denom == 32);
  CHECK_THROWS_AS(report.find("accuracy", "vit", "clean"), std::out_of_range);
}

TEST_CASE("parameter accounting") {
  Rng rng(1);
  LinearLayer lin = make_linear(7, 4, rng);
  CHECK(lin.weight.numel() + lin.bias.numel() == 7 * 4 + 4);

  CapsNetConfig dr_cfg;
  dr_cfg.classes = 3;
  CapsuleNetwork dr(dr_cfg, Rng(2));
  CapsNetConfig aff_cfg = dr_cfg;
  aff_cfg.shared_transform = true;
  CapsuleNetwork aff(aff_cfg, Rng(2));
  std::size_t n = dr_cfg.primary_count();
  CHECK(dr.transformation_param_count() ==
        n * aff.transformation_param_count());

  GraCapsConfig gra_cfg;
  gra_cfg.classes = 3;
  GraCapsNet gra(gra_cfg, Rng(3));
  CHECK(param_count(gra) < param_count(dr));
  CHECK(param_count(aff) < param_count(dr));
}

TEST_CASE("affine benchmark: identity split equals clean, reruns identical") {
  ConvNetConfig cfg;
  cfg.in_h = 28;
  cfg.in_w = 28;
  cfg.classes = 3;
  ConvNet net(cfg, Rng(4));
  net.set_trainable(false);
  Dataset data = synth_shapes(12, 5);

  std::vector<std::pair<std::string, AffineParams>> grid = {
      {"identity", AffineParams{}},
      {"rot+15", [] {
         AffineParams p;
         p.rotate_deg = 15.0;
         return p;
       }()},
  };
  Report r1 = affine_benchmark({{"convnet", &net}}, data, grid, 77);
  Report r2 = affine_benchmark({{"convnet", &net}}, data, grid, 77);
  CHECK(r1.to_string() == r2.to_string());
  CHECK(r1.find("accuracy", "convnet", "identity").value ==
        r1.find("accuracy", "convnet", "clean").value);
  CHECK(r1.find("param_count", "convnet", "total").value ==
        static_cast<double>(param_count(net)));

  net.set_trainable(true);
  CHECK_THROWS_WITH_AS(affine_benchmark({{"convnet", &net}}, data, grid, 1),
                       doctest::Contains("frozen"), std::invalid_argument);
}

TEST_CASE("patch benchmark covers every aligned slot and is deterministic") {
  ConvNetConfig cfg;
  cfg.in_h = 28;
  cfg.in_w = 28;
  cfg.classes = 3;
  ConvNet net(cfg, Rng(6));
  net.set_trainable(false);
  Dataset data = synth_shapes(9, 8);

  PatchBenchOptions opt;
  opt.patch_size = 14;  // 2x2 slots keeps this test fast
  opt.severities = {3};
  opt.attack_steps = 2;
  opt.grid_attack_steps = 1;
  Report r1 = patch_benchmark({{"convnet", &net}}, data, opt, 9);
  Report r2 = patch_benchmark({{"convnet", &net}}, data, opt, 9);
  CHECK(r1.to_string() == r2.to_string());
  std::set<std::string> slots;
  for (const auto& rec : r1.records)
    if (rec.metric == "position_attack_success") slots.insert(rec.split);
  CHECK(slots == std::set<std::string>{"slot0", "slot1", "slot2", "slot3"});
  // variance exists and clean accuracy carries the dataset denominator
  CHECK(r1.find("accuracy", "convnet", "clean").denom == 9);
  CHECK(r1.find("position_success_variance", "convnet", "grid").denom == 4);
}
