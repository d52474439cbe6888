#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "vfn/error.hpp"
#include "vfn/random.hpp"

namespace vfn {

// Fractional pixel coordinates round half away from zero everywhere.
inline int round_px(double v) { return static_cast<int>(std::lround(v)); }

struct ImageDims {
  int width = 0;
  int height = 0;

  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

// Axis-aligned rectangle in pixel coordinates: origin (x, y), extent (w, h).
struct CropRect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  int right() const { return x + w; }
  int bottom() const { return y + h; }
  long long area() const { return static_cast<long long>(w) * h; }

  friend bool operator==(const CropRect&, const CropRect&) = default;
  friend auto operator<=>(const CropRect& a, const CropRect& b) {
    return std::tie(a.x, a.y, a.w, a.h) <=> std::tie(b.x, b.y, b.w, b.h);
  }
};

inline bool is_inside(const CropRect& r, ImageDims dims) {
  return r.w > 0 && r.h > 0 && r.x >= 0 && r.y >= 0 && r.right() <= dims.width &&
         r.bottom() <= dims.height;
}

inline std::string to_string(const CropRect& r) {
  return "(" + std::to_string(r.x) + "," + std::to_string(r.y) + "," + std::to_string(r.w) +
         "," + std::to_string(r.h) + ")";
}

inline CropRect full_rect(ImageDims dims) { return {0, 0, dims.width, dims.height}; }

enum class CropKind : std::uint8_t { Border, Square, Window, Pano };

inline std::string_view to_string(CropKind k) {
  switch (k) {
    case CropKind::Border: return "border";
    case CropKind::Square: return "square";
    case CropKind::Window: return "window";
    case CropKind::Pano: return "pano";
  }
  return "?";
}

inline CropKind parse_crop_kind(std::string_view s) {
  if (s == "border") return CropKind::Border;
  if (s == "square") return CropKind::Square;
  if (s == "window") return CropKind::Window;
  if (s == "pano") return CropKind::Pano;
  throw FormatError("unknown crop kind '" + std::string(s) + "'");
}

struct CropCandidate {
  CropRect rect;
  CropKind kind = CropKind::Border;
  double scale = 1.0;
  // Border: corner 0..3 (TL, TR, BL, BR). Square: slot 0..num_square-1.
  int corner_or_slot = 0;

  friend bool operator==(const CropCandidate&, const CropCandidate&) = default;
};

struct SamplerConfig {
  std::vector<double> scales{0.5, 0.6};
  int num_square = 3;
  double perturb_frac = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (scales.empty()) throw ConfigError("sampler: no scales");
    for (double s : scales)
      if (!(s > 0.0 && s < 1.0)) throw ConfigError("sampler: scale outside (0,1)");
    if (num_square < 1) throw ConfigError("sampler: num_square must be >= 1");
    if (!(perturb_frac >= 0.0 && perturb_frac <= 0.2))
      throw ConfigError("sampler: perturb_frac outside [0,0.2]");
  }

  std::size_t crops_per_image() const {
    return scales.size() * (4 + static_cast<std::size_t>(num_square));
  }

  friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

inline constexpr int kMinImageSide = 32;
inline constexpr int kMinCropSide = 16;

// Geometry precondition shared by crop sampling and window search.
inline void require_min_dims(ImageDims dims) {
  if (dims.width < kMinImageSide || dims.height < kMinImageSide)
    throw SizeError("image " + std::to_string(dims.width) + "x" + std::to_string(dims.height) +
                    " is smaller than the minimum " + std::to_string(kMinImageSide) + "x" +
                    std::to_string(kMinImageSide));
}

// Jitters origin by up to frac of the extent and scales the extent by a factor
// in [1-frac, 1+frac], then clamps back inside the image. Always consumes four
// draws from rng.
inline CropRect perturb(const CropRect& rect, ImageDims dims, double frac, Rng& rng) {
  const double dx = rng.uniform(-frac, frac) * rect.w;
  const double dy = rng.uniform(-frac, frac) * rect.h;
  const double sw = rng.uniform(1.0 - frac, 1.0 + frac);
  const double sh = rng.uniform(1.0 - frac, 1.0 + frac);
  if (frac == 0.0) return rect;

  const int min_w = std::min(kMinCropSide, dims.width);
  const int min_h = std::min(kMinCropSide, dims.height);
  CropRect out;
  out.w = std::clamp(round_px(rect.w * sw), min_w, dims.width);
  out.h = std::clamp(round_px(rect.h * sh), min_h, dims.height);
  out.x = std::clamp(round_px(rect.x + dx), 0, dims.width - out.w);
  out.y = std::clamp(round_px(rect.y + dy), 0, dims.height - out.h);
  return out;
}

inline CropRect clamp_inside(CropRect r, ImageDims dims) {
  r.w = std::clamp(r.w, 1, dims.width);
  r.h = std::clamp(r.h, 1, dims.height);
  r.x = std::clamp(r.x, 0, dims.width - r.w);
  r.y = std::clamp(r.y, 0, dims.height - r.h);
  return r;
}

// Unperturbed border and square crops for one scale.
inline std::vector<CropCandidate> base_crops(ImageDims dims, double scale, int num_square) {
  std::vector<CropCandidate> out;
  const int bw = round_px(scale * dims.width);
  const int bh = round_px(scale * dims.height);
  const std::array<CropRect, 4> corners{{{0, 0, bw, bh},
                                         {dims.width - bw, 0, bw, bh},
                                         {0, dims.height - bh, bw, bh},
                                         {dims.width - bw, dims.height - bh, bw, bh}}};
  for (int c = 0; c < 4; ++c) out.push_back({corners[c], CropKind::Border, scale, c});

  const bool landscape = dims.width >= dims.height;
  const int long_side = landscape ? dims.width : dims.height;
  const int short_side = landscape ? dims.height : dims.width;
  const int side = round_px(scale * short_side);
  const int short_origin = round_px((short_side - side) / 2.0);
  for (int k = 0; k < num_square; ++k) {
    const double center = long_side * static_cast<double>(k + 1) / (num_square + 1);
    const int long_origin = round_px(center - side / 2.0);
    CropRect r = landscape ? CropRect{long_origin, short_origin, side, side}
                           : CropRect{short_origin, long_origin, side, side};
    out.push_back({clamp_inside(r, dims), CropKind::Square, scale, k});
  }
  return out;
}

// Border crops (a scaled copy of the frame at each corner) and square crops
// evenly spaced along the long axis, for every configured scale, each
// perturbed and clamped inside the image.
inline std::vector<CropCandidate> sample_crops(ImageDims dims, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  require_min_dims(dims);
  const double smallest = *std::min_element(cfg.scales.begin(), cfg.scales.end());
  if (round_px(smallest * std::min(dims.width, dims.height)) < kMinCropSide)
    throw SizeError("image " + std::to_string(dims.width) + "x" + std::to_string(dims.height) +
                    " cannot fit a crop at scale " + std::to_string(smallest));

  std::vector<CropCandidate> out;
  out.reserve(cfg.crops_per_image());
  for (double s : cfg.scales) {
    for (CropCandidate c : base_crops(dims, s, cfg.num_square)) {
      c.rect = perturb(c.rect, dims, cfg.perturb_frac, rng);
      out.push_back(c);
    }
  }
  return out;
}

inline std::vector<CropCandidate> sample_crops(ImageDims dims, const SamplerConfig& cfg) {
  Rng rng(cfg.seed);
  return sample_crops(dims, cfg, rng);
}

struct Grid {
  int gx = 5;
  int gy = 5;
};

inline std::vector<double> default_window_scales() { return {0.5, 0.6, 0.7, 0.8, 0.9}; }

// Lattice coordinate i of n spanning [0, span] inclusive.
inline int lattice_coord(int i, int n, int span) {
  return n <= 1 ? 0 : round_px(static_cast<double>(i) * span / (n - 1));
}

// Windows with the image's aspect ratio at each scale, origins on a uniform
// gx-by-gy lattice from (0,0) to (W-w, H-h). Order: scale, row, column.
inline std::vector<CropRect> sliding_windows(ImageDims dims, const std::vector<double>& scales,
                                             Grid grid) {
  if (grid.gx < 1 || grid.gy < 1) throw ConfigError("sliding windows: grid must be >= 1x1");
  if (scales.empty()) throw ConfigError("sliding windows: no scales");
  std::vector<CropRect> out;
  out.reserve(scales.size() * grid.gx * grid.gy);
  for (double s : scales) {
    if (!(s > 0.0 && s <= 1.0)) throw ConfigError("sliding windows: scale outside (0,1]");
    const int w = std::max(1, round_px(s * dims.width));
    const int h = std::max(1, round_px(s * dims.height));
    for (int iy = 0; iy < grid.gy; ++iy) {
      const int y = lattice_coord(iy, grid.gy, dims.height - h);
      for (int ix = 0; ix < grid.gx; ++ix)
        out.push_back({lattice_coord(ix, grid.gx, dims.width - w), y, w, h});
    }
  }
  return out;
}

struct WindowSize {
  int w = 0;
  int h = 0;
};

// Panorama candidate lattice: windows of height fraction f of the image and
// aspect ratio a (w = a*h), origins stepped by stride_frac of the window.
// The defaults give 2112 candidates on a 6000x1200 panorama.
struct PanoConfig {
  std::vector<double> height_fracs{0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> aspects{1.0, 4.0 / 3.0, 1.5};
  double stride_frac = 0.154;
};

inline std::vector<WindowSize> pano_sizes(ImageDims dims, const PanoConfig& cfg) {
  std::vector<WindowSize> out;
  for (double f : cfg.height_fracs) {
    for (double a : cfg.aspects) {
      const int h = round_px(f * dims.height);
      const int w = round_px(a * h);
      if (w >= 1 && h >= 1 && w <= dims.width && h <= dims.height) out.push_back({w, h});
    }
  }
  return out;
}

inline std::vector<CropRect> pano_candidates(ImageDims dims, const std::vector<WindowSize>& sizes,
                                             double stride_frac) {
  if (sizes.empty()) throw ConfigError("pano: empty size list");
  if (!(stride_frac > 0.0)) throw ConfigError("pano: stride_frac must be positive");
  std::vector<CropRect> out;
  std::set<CropRect> seen;
  for (const WindowSize& sz : sizes) {
    if (sz.w < 1 || sz.h < 1 || sz.w > dims.width || sz.h > dims.height)
      throw ConfigError("pano: window " + std::to_string(sz.w) + "x" + std::to_string(sz.h) +
                        " does not fit the image");
    const int sx = std::max(1, round_px(stride_frac * sz.w));
    const int sy = std::max(1, round_px(stride_frac * sz.h));
    for (int y = 0; y + sz.h <= dims.height; y += sy)
      for (int x = 0; x + sz.w <= dims.width; x += sx) {
        const CropRect r{x, y, sz.w, sz.h};
        if (seen.insert(r).second) out.push_back(r);
      }
  }
  return out;
}

inline std::vector<CropRect> pano_candidates(ImageDims dims, const PanoConfig& cfg) {
  return pano_candidates(dims, pano_sizes(dims, cfg), cfg.stride_frac);
}

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// The four rule-of-thirds power points of a rectangle.
inline std::array<Point, 4> thirds_points(const CropRect& r) {
  const double x1 = r.x + r.w / 3.0, x2 = r.x + 2.0 * r.w / 3.0;
  const double y1 = r.y + r.h / 3.0, y2 = r.y + 2.0 * r.h / 3.0;
  return {{{x1, y1}, {x2, y1}, {x1, y2}, {x2, y2}}};
}

inline double distance_to_thirds(const CropRect& r, Point p) {
  double best = INFINITY;
  for (const Point& q : thirds_points(r)) best = std::min(best, std::hypot(p.x - q.x, p.y - q.y));
  return best;
}

}  // namespace vfn
