#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "vfn/checkpoint.hpp"
#include "vfn/error.hpp"
#include "vfn/geometry.hpp"
#include "vfn/imaging.hpp"
#include "vfn/parallel.hpp"
#include "vfn/ranker.hpp"

namespace vfn {

struct ScoredCrop {
  CropRect rect;
  double score = 0.0;
};

// Scores a crop with a trained model: extract, resize to 227, backbone,
// pooling, head.
class ModelScorer {
 public:
  explicit ModelScorer(Checkpoint ck) : ck_(std::move(ck)) { ck_.spec.validate(); }

  double operator()(const ImageBuffer& img, const CropRect& rect) const {
    return score(extract_features<float>(network_input(img, rect), ck_.spec, ck_.weights), ck_.weights);
  }

  const Checkpoint& checkpoint() const { return ck_; }

 private:
  Checkpoint ck_;
};

template <class Scorer>
double score_crop(const ImageBuffer& img, const CropRect& rect, const Scorer& scorer) {
  return scorer(img, rect);
}

template <class Scorer>
std::vector<double> score_candidates(const ImageBuffer& img, std::span<const CropRect> rects,
                                     const Scorer& scorer) {
  std::vector<double> scores(rects.size());
  parallel_for(rects.size(), [&](std::size_t i) {
    scores[i] = scorer(img, rects[i]);
    if (!std::isfinite(scores[i])) throw NumericError("non-finite score for " + to_string(rects[i]));
  });
  return scores;
}

// Argmax with ties resolved to the earliest candidate.
inline std::size_t argmax_first(std::span<const double> scores) {
  if (scores.empty()) throw ContractError("argmax: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

template <class Scorer>
ScoredCrop best_of(const ImageBuffer& img, std::span<const CropRect> rects, const Scorer& scorer) {
  const auto scores = score_candidates(img, rects, scorer);
  const std::size_t i = argmax_first(scores);
  return {rects[i], scores[i]};
}

struct SearchConfig {
  std::vector<double> scales = default_window_scales();
  Grid grid{5, 5};
};

// Candidate set: sliding windows followed by the extra candidates.
inline std::vector<CropRect> search_candidates(ImageDims dims, const SearchConfig& cfg,
                                               std::span<const CropRect> extra) {
  auto rects = sliding_windows(dims, cfg.scales, cfg.grid);
  rects.insert(rects.end(), extra.begin(), extra.end());
  return rects;
}

template <class Scorer>
ScoredCrop best_crop(const ImageBuffer& img, const Scorer& scorer, const SearchConfig& cfg,
                     std::span<const CropRect> extra = {}) {
  require_min_dims(img.dims());
  return best_of(img, std::span<const CropRect>(search_candidates(img.dims(), cfg, extra)), scorer);
}

// ---------------------------------------------------------------------------
// Heatmaps

struct ScalarField {
  int width = 0;
  int height = 0;
  std::vector<double> sum;       // accumulated window scores per pixel
  std::vector<int> coverage;     // windows covering each pixel
  std::vector<double> values;    // blurred per-pixel mean score

  // values rescaled to [0, 1]; a constant field maps to all zeros.
  std::vector<double> normalized() const {
    std::vector<double> out(values.size(), 0.0);
    if (values.empty()) return out;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (*hi - *lo <= 0.0) return out;
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / (*hi - *lo);
    return out;
  }
};

// Separable Gaussian with standard deviation sigma (pixels), truncated at
// 3 sigma, edges clamped. sigma <= 0 is the identity.
inline std::vector<double> gaussian_blur(const std::vector<double>& in, int width, int height, double sigma) {
  if (sigma <= 0.0) return in;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& k : kernel) k /= total;

  std::vector<double> tmp(in.size()), out(in.size());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * in[static_cast<std::size_t>(y) * width + std::clamp(x + i, 0, width - 1)];
      tmp[static_cast<std::size_t>(y) * width + x] = acc;
    }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, height - 1)) * width + x];
      out[static_cast<std::size_t>(y) * width + x] = acc;
    }
  return out;
}

inline double default_blur_radius(ImageDims dims) {
  return 0.02 * std::hypot(static_cast<double>(dims.width), static_cast<double>(dims.height));
}

// Each pixel takes the mean score of the windows covering it, then the field
// is blurred. Every pixel must be covered by at least one window.
inline ScalarField heatmap_from_scores(ImageDims dims, std::span<const CropRect> windows,
                                       std::span<const double> scores, double blur_radius) {
  if (windows.size() != scores.size()) throw ContractError("heatmap: one score per window required");
  const int w = dims.width, h = dims.height;
  // 2-D difference arrays, integrated below.
  std::vector<double> dsum(static_cast<std::size_t>(w + 1) * (h + 1), 0.0);
  std::vector<int> dcount(dsum.size(), 0);
  auto at = [w](int x, int y) { return static_cast<std::size_t>(y) * (w + 1) + x; };
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const CropRect& r = windows[i];
    if (!is_inside(r, dims)) throw ContractError("heatmap: window outside image");
    const double s = scores[i];
    dsum[at(r.x, r.y)] += s;
    dsum[at(r.right(), r.y)] -= s;
    dsum[at(r.x, r.bottom())] -= s;
    dsum[at(r.right(), r.bottom())] += s;
    dcount[at(r.x, r.y)] += 1;
    dcount[at(r.right(), r.y)] -= 1;
    dcount[at(r.x, r.bottom())] -= 1;
    dcount[at(r.right(), r.bottom())] += 1;
  }
  ScalarField f;
  f.width = w;
  f.height = h;
  f.sum.assign(static_cast<std::size_t>(w) * h, 0.0);
  f.coverage.assign(f.sum.size(), 0);
  std::vector<double> row_sum(w + 1, 0.0);
  std::vector<int> row_count(w + 1, 0);
  for (int y = 0; y < h; ++y) {
    double run_s = 0.0;
    int run_c = 0;
    for (int x = 0; x < w; ++x) {
      run_s += dsum[at(x, y)];
      run_c += dcount[at(x, y)];
      row_sum[x] += run_s;
      row_count[x] += run_c;
      f.sum[static_cast<std::size_t>(y) * w + x] = row_sum[x];
      f.coverage[static_cast<std::size_t>(y) * w + x] = row_count[x];
    }
  }
  std::vector<double> mean(f.sum.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (f.coverage[i] < 1) throw ContractError("heatmap: pixel not covered by any window");
    mean[i] = f.sum[i] / f.coverage[i];
  }
  f.values = gaussian_blur(mean, w, h, blur_radius);
  return f;
}

template <class Scorer>
ScalarField heatmap(const ImageBuffer& img, const Scorer& scorer, const SearchConfig& cfg, double blur_radius) {
  require_min_dims(img.dims());
  const auto windows = sliding_windows(img.dims(), cfg.scales, cfg.grid);
  const auto scores = score_candidates(img, std::span<const CropRect>(windows), scorer);
  return heatmap_from_scores(img.dims(), windows, scores, blur_radius);
}

// Blends a blue-to-red ramp of the normalized field over a dimmed image.
inline ImageBuffer render_heatmap(const ImageBuffer& img, const ScalarField& field) {
  if (img.width() != field.width || img.height() != field.height)
    throw ContractError("render_heatmap: size mismatch");
  const auto n = field.normalized();
  ImageBuffer out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const float t = static_cast<float>(n[static_cast<std::size_t>(y) * img.width() + x]);
      const float heat[3] = {t, 1.0f - std::abs(2.0f * t - 1.0f), 1.0f - t};
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = 0.4f * img.at(x, y, c) + 0.6f * heat[c];
    }
  return out;
}

// Draws a rectangle outline (for visualizing search results).
inline void draw_rect(ImageBuffer& img, const CropRect& r, int thickness = 2) {
  const float color[3] = {1.0f, 0.85f, 0.0f};
  for (int y = r.y; y < r.bottom(); ++y)
    for (int x = r.x; x < r.right(); ++x) {
      const bool edge = x < r.x + thickness || x >= r.right() - thickness || y < r.y + thickness ||
                        y >= r.bottom() - thickness;
      if (edge)
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = color[c];
    }
}

// ---------------------------------------------------------------------------
// Panorama view recommendation

struct PanoResult {
  ScoredCrop best;
  std::size_t candidates = 0;
};

template <class Scorer>
PanoResult pano_scan(const ImageBuffer& img, const Scorer& scorer, const PanoConfig& cfg = {}) {
  require_min_dims(img.dims());
  const auto rects = pano_candidates(img.dims(), cfg);
  return {best_of(img, std::span<const CropRect>(rects), scorer), rects.size()};
}

}  // namespace vfn
