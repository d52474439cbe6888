#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "vfn/eval.hpp"

using namespace vfn;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vfn_eval_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double raster_iou(const CropRect& a, const CropRect& b, ImageDims dims) {
  long long inter = 0, uni = 0;
  for (int y = 0; y < dims.height; ++y)
    for (int x = 0; x < dims.width; ++x) {
      const bool ia = x >= a.x && x < a.right() && y >= a.y && y < a.bottom();
      const bool ib = x >= b.x && x < b.right() && y >= b.y && y < b.bottom();
      inter += ia && ib;
      uni += ia || ib;
    }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

CropRect random_rect(ImageDims dims, Rng& rng) {
  const int w = 1 + static_cast<int>(rng.below(dims.width)), h = 1 + static_cast<int>(rng.below(dims.height));
  return {static_cast<int>(rng.below(dims.width - w + 1)), static_cast<int>(rng.below(dims.height - h + 1)), w, h};
}

// Scores a window by closeness to a known target rect.
struct OracleScorer {
  CropRect target;
  double operator()(const ImageBuffer&, const CropRect& r) const { return iou(r, target); }
};

struct ZeroScorer {
  double operator()(const ImageBuffer&, const CropRect&) const { return 0.0; }
};

}  // namespace

TEST(Iou, KnownCases) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {10, 0, 10, 10}), 0.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {5, 0, 10, 10}), 1.0 / 3.0);
  EXPECT_THROW(iou({0, 0, 0, 10}, {0, 0, 1, 1}), ContractError);
}

TEST(Iou, MatchesRasterCount) {
  Rng rng(1);
  const ImageDims dims{40, 30};
  for (int i = 0; i < 300; ++i) {
    const CropRect a = random_rect(dims, rng), b = random_rect(dims, rng);
    ASSERT_NEAR(iou(a, b), raster_iou(a, b, dims), 1e-12);
    ASSERT_DOUBLE_EQ(iou(a, b), iou(b, a));
  }
}

TEST(Displacement, KnownCaseAndSymmetry) {
  EXPECT_DOUBLE_EQ(boundary_displacement({0, 0, 100, 80}, {25, 20, 50, 40}, {100, 80}), 0.25);
  EXPECT_DOUBLE_EQ(boundary_displacement({3, 4, 5, 6}, {3, 4, 5, 6}, {10, 10}), 0.0);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const CropRect a = random_rect({50, 50}, rng), b = random_rect({50, 50}, rng);
    const double d = boundary_displacement(a, b, {50, 50});
    EXPECT_DOUBLE_EQ(d, boundary_displacement(b, a, {50, 50}));
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(AlphaRecall, StrictThreshold) {
  EXPECT_DOUBLE_EQ(alpha_recall({0.9, 0.8, 1.0}), 100.0);
  EXPECT_DOUBLE_EQ(alpha_recall({0.75, 0.1}), 0.0);
  EXPECT_DOUBLE_EQ(alpha_recall({0.8, 0.7, 0.9}), 200.0 / 3.0);
  EXPECT_DOUBLE_EQ(alpha_recall({0.6, 0.4}, 0.5), 50.0);
  EXPECT_THROW(alpha_recall({}), ContractError);
}

TEST(Annotations, SingleAndMultipleSetsWithRelativePaths) {
  const auto dir = fresh_dir("ann");
  std::ofstream(dir / "a.json") << R"([
    {"image": "x.png", "crop": [1, 2, 30, 40], "category": "street"},
    {"image": "/abs/y.png", "crops": [[0, 0, 10, 10], [5, 5, 10, 10]]}
  ])";
  const auto ann = load_annotations((dir / "a.json").string());
  ASSERT_EQ(ann.size(), 2u);
  EXPECT_EQ(ann[0].image, (dir / "x.png").string());
  EXPECT_EQ(ann[0].ground_truths, (std::vector<CropRect>{{1, 2, 30, 40}}));
  EXPECT_EQ(ann[0].category, "street");
  EXPECT_EQ(ann[1].image, "/abs/y.png");
  EXPECT_EQ(ann[1].ground_truths.size(), 2u);
  EXPECT_EQ(ann[1].category, "");

  std::ofstream(dir / "bad.json") << R"([{"image": "x.png", "crop": [1, 2, 3]}])";
  EXPECT_THROW(load_annotations((dir / "bad.json").string()), FormatError);
  std::ofstream(dir / "obj.json") << R"({"image": "x.png"})";
  EXPECT_THROW(load_annotations((dir / "obj.json").string()), FormatError);
  EXPECT_THROW(load_annotations((dir / "none.json").string()), IoError);
}

TEST(Benchmark, OracleScorerIsPerfectWhenGroundTruthIsAvailable) {
  const auto dir = fresh_dir("oracle");
  save_png(ImageBuffer(80, 60, 0.5f), (dir / "a.png").string());
  const CropRect gt{7, 9, 41, 33};
  const std::vector<AnnotatedImage> ann{{(dir / "a.png").string(), {gt}, "c"}};
  const auto report = run_benchmark(ann, OracleScorer{gt});
  ASSERT_EQ(report.sets.size(), 1u);
  const auto& a = report.sets[0].aggregate;
  EXPECT_EQ(a.count, 1u);
  EXPECT_DOUBLE_EQ(a.mean_iou, 1.0);
  EXPECT_DOUBLE_EQ(a.mean_displacement, 0.0);
  EXPECT_DOUBLE_EQ(a.alpha_recall, 100.0);

  BenchConfig no_gt;
  no_gt.include_ground_truth = false;
  const auto windows_only = run_benchmark(ann, OracleScorer{gt}, no_gt);
  const CropRect chosen = windows_only.sets[0].rows[0].chosen;
  for (const auto& w : sliding_windows({80, 60}, no_gt.search.scales, no_gt.search.grid))
    EXPECT_LE(iou(w, gt), iou(chosen, gt));
}

TEST(Benchmark, ConstantScorerPicksFirstWindowAndAggregatesRecompute) {
  const auto dir = fresh_dir("const");
  Rng rng(3);
  std::vector<AnnotatedImage> ann;
  for (int i = 0; i < 4; ++i) {
    const ImageDims dims{60 + 10 * i, 50};
    save_png(ImageBuffer(dims.width, dims.height), (dir / (std::to_string(i) + ".png")).string());
    ann.push_back({(dir / (std::to_string(i) + ".png")).string(),
                   {random_rect({dims.width - 1, 49}, rng), {0, 0, dims.width, 50}}, ""});
  }
  ann.push_back({(dir / "gone.png").string(), {{0, 0, 10, 10}}, ""});
  const auto report = run_benchmark(ann, ZeroScorer{});
  EXPECT_EQ(report.missing, (std::vector<std::string>{(dir / "gone.png").string()}));
  ASSERT_EQ(report.sets.size(), 2u);
  for (const auto& set : report.sets) {
    ASSERT_EQ(set.rows.size(), 4u);
    double sum_iou = 0.0, sum_disp = 0.0;
    std::vector<double> ious;
    for (const auto& row : set.rows) {
      const ImageDims dims = load_image(row.image).dims();
      EXPECT_EQ(row.chosen, sliding_windows(dims, default_window_scales(), {5, 5}).front());
      EXPECT_DOUBLE_EQ(row.iou, iou(row.chosen, row.ground_truth));
      sum_iou += row.iou;
      sum_disp += boundary_displacement(row.chosen, row.ground_truth, dims);
      ious.push_back(row.iou);
    }
    EXPECT_DOUBLE_EQ(set.aggregate.mean_iou, sum_iou / 4);
    EXPECT_DOUBLE_EQ(set.aggregate.mean_displacement, sum_disp / 4);
    EXPECT_DOUBLE_EQ(set.aggregate.alpha_recall, alpha_recall(ious));
  }
  const auto j = to_json(report);
  EXPECT_EQ(j.at("sets").size(), 2u);
  EXPECT_NE(to_text(report).find("missing images: 1"), std::string::npos);
}
