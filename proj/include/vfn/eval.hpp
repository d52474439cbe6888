#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vfn/error.hpp"
#include "vfn/geometry.hpp"
#include "vfn/image_io.hpp"
#include "vfn/search.hpp"

namespace vfn {

inline double iou(const CropRect& a, const CropRect& b) {
  if (a.w <= 0 || a.h <= 0 || b.w <= 0 || b.h <= 0) throw ContractError("iou: rects need positive area");
  const long long iw = std::max(0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  const long long ih = std::max(0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  const long long inter = iw * ih;
  return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

// Mean absolute offset of the four corresponding edges, x-edges normalized by
// the image width and y-edges by its height.
inline double boundary_displacement(const CropRect& a, const CropRect& b, ImageDims dims) {
  const double W = dims.width, H = dims.height;
  return (std::abs(a.x - b.x) / W + std::abs(a.right() - b.right()) / W + std::abs(a.y - b.y) / H +
          std::abs(a.bottom() - b.bottom()) / H) /
         4.0;
}

// Percentage of IoU values strictly greater than alpha.
inline double alpha_recall(const std::vector<double>& ious, double alpha = 0.75) {
  if (ious.empty()) throw ContractError("alpha_recall: empty list");
  const auto hits = std::count_if(ious.begin(), ious.end(), [alpha](double v) { return v > alpha; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ious.size());
}

// ---------------------------------------------------------------------------

struct AnnotatedImage {
  std::string image;
  std::vector<CropRect> ground_truths;  // one per annotation set
  std::string category;
};

// JSON array of {"image": path, "crop": [x,y,w,h], "category": optional}.
// "crops": [[x,y,w,h], ...] supplies one crop per annotation set instead.
// Relative image paths resolve against the annotation file's directory.
inline std::vector<AnnotatedImage> load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations '" + path + "'");
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<AnnotatedImage> out;
  try {
    const auto doc = nlohmann::json::parse(in);
    if (!doc.is_array()) throw FormatError("annotations: top level must be an array");
    auto rect = [](const nlohmann::json& j) {
      const auto v = j.get<std::vector<int>>();
      if (v.size() != 4) throw FormatError("annotations: crop needs 4 values");
      return CropRect{v[0], v[1], v[2], v[3]};
    };
    for (const auto& e : doc) {
      AnnotatedImage a;
      std::filesystem::path img = e.at("image").get<std::string>();
      a.image = img.is_absolute() ? img.string() : (base / img).string();
      if (e.contains("crops"))
        for (const auto& c : e.at("crops")) a.ground_truths.push_back(rect(c));
      else
        a.ground_truths.push_back(rect(e.at("crop")));
      if (e.contains("category") && !e.at("category").is_null()) a.category = e.at("category").get<std::string>();
      out.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("annotations: ") + e.what());
  }
  return out;
}

struct BenchConfig {
  SearchConfig search;
  double alpha = 0.75;
  bool include_ground_truth = true;
};

struct BenchRow {
  std::string image;
  std::string category;
  CropRect ground_truth;
  CropRect chosen;
  double score = 0.0;
  double iou = 0.0;
  double displacement = 0.0;
  bool hit = false;
};

struct BenchAggregate {
  std::size_t count = 0;
  double mean_iou = 0.0;
  double mean_displacement = 0.0;
  double alpha_recall = 0.0;
};

struct BenchSet {
  std::vector<BenchRow> rows;
  BenchAggregate aggregate;
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchSet> sets;
  std::vector<std::string> missing;
};

inline BenchAggregate aggregate_rows(const std::vector<BenchRow>& rows, double alpha) {
  BenchAggregate a;
  a.count = rows.size();
  if (rows.empty()) return a;
  std::vector<double> ious;
  for (const auto& r : rows) {
    a.mean_iou += r.iou;
    a.mean_displacement += r.displacement;
    ious.push_back(r.iou);
  }
  a.mean_iou /= static_cast<double>(rows.size());
  a.mean_displacement /= static_cast<double>(rows.size());
  a.alpha_recall = alpha_recall(ious, alpha);
  return a;
}

// Sliding-window protocol: for every image and annotation set, the best
// scoring candidate among the windows (plus the ground truth) is compared
// with the ground truth. Images that cannot be loaded are listed as missing.
template <class Scorer>
BenchReport run_benchmark(const std::vector<AnnotatedImage>& annotations, const Scorer& scorer,
                          const BenchConfig& cfg = {}) {
  BenchReport report;
  report.config = cfg;
  std::size_t num_sets = 0;
  for (const auto& a : annotations) num_sets = std::max(num_sets, a.ground_truths.size());
  report.sets.resize(num_sets);

  for (const AnnotatedImage& a : annotations) {
    ImageBuffer img;
    try {
      img = load_image(a.image);
    } catch (const DecodeError&) {
      report.missing.push_back(a.image);
      continue;
    }
    require_min_dims(img.dims());
    const auto windows = sliding_windows(img.dims(), cfg.search.scales, cfg.search.grid);
    const auto window_scores = score_candidates(img, std::span<const CropRect>(windows), scorer);
    for (std::size_t s = 0; s < a.ground_truths.size(); ++s) {
      const CropRect& gt = a.ground_truths[s];
      if (!is_inside(gt, img.dims())) throw ContractError("benchmark: ground truth outside " + a.image);
      std::vector<double> scores = window_scores;
      std::vector<CropRect> rects = windows;
      if (cfg.include_ground_truth) {
        rects.push_back(gt);
        scores.push_back(scorer(img, gt));
      }
      const std::size_t best = argmax_first(scores);
      BenchRow row{a.image, a.category, gt, rects[best], scores[best], iou(rects[best], gt),
                   boundary_displacement(rects[best], gt, img.dims()), false};
      row.hit = row.iou > cfg.alpha;
      report.sets[s].rows.push_back(row);
    }
  }
  for (auto& set : report.sets) set.aggregate = aggregate_rows(set.rows, cfg.alpha);
  return report;
}

inline nlohmann::json rect_json(const CropRect& r) { return {r.x, r.y, r.w, r.h}; }

inline nlohmann::json to_json(const BenchReport& r) {
  using nlohmann::json;
  json sets = json::array();
  for (std::size_t s = 0; s < r.sets.size(); ++s) {
    json rows = json::array();
    for (const auto& row : r.sets[s].rows)
      rows.push_back({{"image", row.image},
                      {"category", row.category},
                      {"ground_truth", rect_json(row.ground_truth)},
                      {"chosen", rect_json(row.chosen)},
                      {"score", row.score},
                      {"iou", row.iou},
                      {"disp", row.displacement},
                      {"hit", row.hit}});
    const auto& a = r.sets[s].aggregate;
    sets.push_back({{"set", s + 1},
                    {"rows", rows},
                    {"aggregate",
                     {{"n", a.count}, {"iou", a.mean_iou}, {"disp", a.mean_displacement}, {"alpha_recall", a.alpha_recall}}}});
  }
  return {{"config",
           {{"scales", r.config.search.scales},
            {"grid", {r.config.search.grid.gx, r.config.search.grid.gy}},
            {"alpha", r.config.alpha},
            {"include_ground_truth", r.config.include_ground_truth}}},
          {"sets", sets},
          {"missing", r.missing}};
}

inline std::string to_text(const BenchReport& r) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-6s %6s %10s %10s %10s\n", "Set", "N", "IoU", "Disp.", "a-recall");
  out << line;
  for (std::size_t s = 0; s < r.sets.size(); ++s) {
    const auto& a = r.sets[s].aggregate;
    std::snprintf(line, sizeof line, "%-6zu %6zu %10.4f %10.4f %10.4f\n", s + 1, a.count, a.mean_iou,
                  a.mean_displacement, a.alpha_recall);
    out << line;
  }
  if (!r.missing.empty()) out << "missing images: " << r.missing.size() << "\n";
  return out.str();
}

}  // namespace vfn
