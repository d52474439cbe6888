#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "vfn/error.hpp"
#include "vfn/geometry.hpp"
#include "vfn/random.hpp"

namespace vfn {

inline constexpr int kNetInputSide = 227;

// Row-major, channel-interleaved RGB raster with values in [0, 1].
class ImageBuffer {
 public:
  static constexpr int kChannels = 3;

  ImageBuffer() = default;
  ImageBuffer(int width, int height, float fill = 0.0f)
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(check_dims(width, height)) * kChannels, fill) {}
  ImageBuffer(int width, int height, std::vector<float> data)
      : width_(width), height_(height), data_(std::move(data)) {
    check_dims(width, height);
    if (data_.size() != static_cast<std::size_t>(width) * height * kChannels)
      throw ContractError("image buffer: data length does not match dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return kChannels; }
  ImageDims dims() const { return {width_, height_}; }
  bool empty() const { return data_.empty(); }

  float& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  float at(int x, int y, int c) const { return data_[index(x, y, c)]; }
  const float* pixel(int x, int y) const { return data_.data() + index(x, y, 0); }
  float* pixel(int x, int y) { return data_.data() + index(x, y, 0); }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  static long long check_dims(int w, int h) {
    if (w < 1 || h < 1) throw ContractError("image buffer: dimensions must be positive");
    return static_cast<long long>(w) * h;
  }
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

// Pixel (i, j) of the result is pixel (rect.x + i, rect.y + j) of img.
inline ImageBuffer extract_crop(const ImageBuffer& img, const CropRect& rect) {
  if (!is_inside(rect, img.dims()))
    throw ContractError("extract_crop: rect " + to_string(rect) + " outside " +
                        std::to_string(img.width()) + "x" + std::to_string(img.height()));
  ImageBuffer out(rect.w, rect.h);
  const std::size_t row = static_cast<std::size_t>(rect.w) * ImageBuffer::kChannels;
  for (int j = 0; j < rect.h; ++j) {
    const float* src = img.pixel(rect.x, rect.y + j);
    std::copy(src, src + row, out.pixel(0, j));
  }
  return out;
}

// Bilinear resampling with pixel-center alignment and clamp-to-edge.
inline ImageBuffer resize_bilinear(const ImageBuffer& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw ContractError("resize_bilinear: output dims must be >= 1");
  if (out_w == img.width() && out_h == img.height()) return img;

  struct Tap {
    int i0, i1;
    float frac;
  };
  auto taps = [](int out_n, int in_n) {
    std::vector<Tap> t(out_n);
    const double ratio = static_cast<double>(in_n) / out_n;
    for (int d = 0; d < out_n; ++d) {
      double s = (d + 0.5) * ratio - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
      const int i0 = static_cast<int>(std::floor(s));
      const int i1 = std::min(i0 + 1, in_n - 1);
      t[d] = {i0, i1, static_cast<float>(s - i0)};
    }
    return t;
  };
  const auto tx = taps(out_w, img.width());
  const auto ty = taps(out_h, img.height());

  ImageBuffer out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const Tap& a = ty[y];
    for (int x = 0; x < out_w; ++x) {
      const Tap& b = tx[x];
      for (int c = 0; c < ImageBuffer::kChannels; ++c) {
        const float top = img.at(b.i0, a.i0, c) * (1.0f - b.frac) + img.at(b.i1, a.i0, c) * b.frac;
        const float bot = img.at(b.i0, a.i1, c) * (1.0f - b.frac) + img.at(b.i1, a.i1, c) * b.frac;
        out.at(x, y, c) = top * (1.0f - a.frac) + bot * a.frac;
      }
    }
  }
  return out;
}

inline ImageBuffer resize_bilinear(const ImageBuffer& img, ImageDims dims) {
  return resize_bilinear(img, dims.width, dims.height);
}

// Crop and resize to the fixed network input.
inline ImageBuffer network_input(const ImageBuffer& img, const CropRect& rect) {
  return resize_bilinear(extract_crop(img, rect), kNetInputSide, kNetInputSide);
}

inline ImageBuffer flip_horizontal(const ImageBuffer& img) {
  ImageBuffer out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < ImageBuffer::kChannels; ++c)
        out.at(img.width() - 1 - x, y, c) = img.at(x, y, c);
  return out;
}

inline std::array<double, 3> channel_means(const ImageBuffer& img) {
  std::array<double, 3> sum{};
  const auto& d = img.data();
  for (std::size_t i = 0; i < d.size(); i += 3)
    for (int c = 0; c < 3; ++c) sum[c] += d[i + c];
  const double n = static_cast<double>(img.width()) * img.height();
  for (double& s : sum) s /= n;
  return sum;
}

struct AugmentConfig {
  double flip_prob = 0.5;
  double brightness_delta_max = 0.1;
  double contrast_lo = 0.8;
  double contrast_hi = 1.2;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("augment: flip_prob outside [0,1]");
    if (!(brightness_delta_max >= 0.0 && brightness_delta_max <= 0.3))
      throw ConfigError("augment: brightness_delta_max outside [0,0.3]");
    if (!(contrast_lo > 0.0 && contrast_lo <= 1.0 && contrast_hi >= 1.0))
      throw ConfigError("augment: contrast range must satisfy 0 < lo <= 1 <= hi");
  }

  static AugmentConfig identity() { return {0.0, 0.0, 1.0, 1.0, 0}; }
};

// Random mirror, then v' = clamp((v - mean_c) * contrast + mean_c + brightness).
// Consumes exactly three draws: flip, contrast, brightness.
inline ImageBuffer augment(const ImageBuffer& img, const AugmentConfig& cfg, Rng& rng) {
  const bool flip = rng.uniform() < cfg.flip_prob;
  const double contrast = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
  const double brightness = rng.uniform(-cfg.brightness_delta_max, cfg.brightness_delta_max);

  ImageBuffer out = flip ? flip_horizontal(img) : img;
  if (contrast == 1.0 && brightness == 0.0) return out;

  const auto mean = channel_means(out);
  auto& d = out.data();
  for (std::size_t i = 0; i < d.size(); i += 3)
    for (int c = 0; c < 3; ++c) {
      const double v = (d[i + c] - mean[c]) * contrast + mean[c] + brightness;
      d[i + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return out;
}

}  // namespace vfn
