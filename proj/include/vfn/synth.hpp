#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "vfn/error.hpp"
#include "vfn/geometry.hpp"
#include "vfn/image_io.hpp"
#include "vfn/imaging.hpp"
#include "vfn/parallel.hpp"
#include "vfn/random.hpp"
#include "vfn/search.hpp"

// Synthetic composition corpus: a single high-contrast disc on a textured
// background. Source images place the disc on a rule-of-thirds power point of
// the frame; benchmark scenes place it on a power point of one protocol
// window, which is the ground-truth crop.
namespace vfn::synth {

struct SynthConfig {
  int width = 240;
  int height = 160;
  // Disc radius as a fraction of the composing frame's height.
  double radius_lo = 0.07;
  double radius_hi = 0.13;
  // Power-point jitter as a fraction of the frame size.
  double jitter = 0.015;
};

struct Scene {
  ImageDims dims;
  std::uint64_t texture_seed = 0;
  std::array<float, 3> base{};
  std::array<float, 3> disc_color{};
  Point center;
  double radius = 0.0;
  CropRect frame;  // the well-composed frame the disc was placed in
};

namespace detail {

struct Wave {
  double fx, fy, phase, amp;
  int channel;
};

inline std::vector<Wave> waves(std::uint64_t seed, ImageDims dims) {
  Rng rng(mix_seed(seed, 1));
  std::vector<Wave> out;
  for (int i = 0; i < 6; ++i) {
    const double period = rng.uniform(0.15, 0.6) * std::max(dims.width, dims.height);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    out.push_back({std::cos(angle) / period, std::sin(angle) / period, rng.uniform(0.0, 2 * std::numbers::pi),
                   rng.uniform(0.03, 0.08), static_cast<int>(rng.below(3))});
  }
  return out;
}

}  // namespace detail

inline ImageBuffer render(const Scene& s, bool with_disc = true) {
  ImageBuffer img(s.dims.width, s.dims.height);
  const auto ws = detail::waves(s.texture_seed, s.dims);
  for (int y = 0; y < s.dims.height; ++y)
    for (int x = 0; x < s.dims.width; ++x) {
      std::array<double, 3> v{s.base[0], s.base[1], s.base[2]};
      for (const auto& w : ws)
        v[w.channel] += w.amp * std::sin(2 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
      const std::uint64_t h = mix_seed(s.texture_seed, static_cast<std::uint64_t>(y) * s.dims.width + x);
      const double grain = (static_cast<double>(h >> 11) * 0x1.0p-53 - 0.5) * 0.08;
      double cover = 0.0;
      if (with_disc) {
        const double d = std::hypot(x + 0.5 - s.center.x, y + 0.5 - s.center.y);
        cover = std::clamp(s.radius + 0.5 - d, 0.0, 1.0);
      }
      for (int c = 0; c < 3; ++c) {
        const double bg = v[c] + grain;
        img.at(x, y, c) = static_cast<float>(std::clamp(bg * (1.0 - cover) + s.disc_color[c] * cover, 0.0, 1.0));
      }
    }
  return img;
}

namespace detail {

inline Scene base_scene(ImageDims dims, Rng& rng) {
  Scene s;
  s.dims = dims;
  s.texture_seed = rng.next_u64();
  for (float& b : s.base) b = static_cast<float>(rng.uniform(0.2, 0.45));
  const std::array<std::array<float, 3>, 4> palette{{{0.98f, 0.85f, 0.15f},
                                                     {0.95f, 0.3f, 0.2f},
                                                     {0.95f, 0.95f, 0.95f},
                                                     {0.2f, 0.9f, 0.95f}}};
  s.disc_color = palette[rng.below(palette.size())];
  return s;
}

inline void place_on_power_point(Scene& s, const CropRect& frame, const SynthConfig& cfg, Rng& rng,
                                 double jitter) {
  const auto pts = thirds_points(frame);
  const Point p = pts[rng.below(4)];
  s.center = {p.x + rng.uniform(-jitter, jitter) * frame.w, p.y + rng.uniform(-jitter, jitter) * frame.h};
  s.radius = rng.uniform(cfg.radius_lo, cfg.radius_hi) * frame.h;
  s.frame = frame;
}

}  // namespace detail

// A well-composed source image: disc on a power point of the whole frame.
inline Scene composed_scene(const SynthConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Scene s = detail::base_scene({cfg.width, cfg.height}, rng);
  detail::place_on_power_point(s, full_rect(s.dims), cfg, rng, cfg.jitter);
  return s;
}

// The protocol window whose nearest rule-of-thirds point is closest to p;
// ties go to the earliest window.
inline CropRect oracle_crop(ImageDims dims, Point p, const SearchConfig& search = {}) {
  const auto windows = sliding_windows(dims, search.scales, search.grid);
  std::size_t best = 0;
  double best_d = INFINITY;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const double d = distance_to_thirds(windows[i], p);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return windows[best];
}

// A benchmark scene: the disc sits exactly on a power point of a randomly
// chosen protocol window, sized relative to that window. Redraws until the
// oracle recovers that window, so the ground truth is unambiguous.
inline Scene bench_scene(const SynthConfig& cfg, std::uint64_t seed, const SearchConfig& search = {}) {
  Rng rng(seed);
  const ImageDims dims{cfg.width, cfg.height};
  const auto windows = sliding_windows(dims, search.scales, search.grid);
  for (;;) {
    Scene s = detail::base_scene(dims, rng);
    const CropRect frame = windows[rng.below(windows.size())];
    detail::place_on_power_point(s, frame, cfg, rng, 0.0);
    if (oracle_crop(dims, s.center, search) == frame) return s;
  }
}

struct Corpus {
  std::vector<std::string> train_images;
  std::vector<std::string> bench_images;
  std::string annotations;
};

inline nlohmann::json scene_json(const Scene& s, const std::string& file) {
  return {{"image", file},
          {"center", {s.center.x, s.center.y}},
          {"radius", s.radius},
          {"frame", {s.frame.x, s.frame.y, s.frame.w, s.frame.h}},
          {"texture_seed", s.texture_seed}};
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << j.dump(1) << '\n';
}

// Writes n images: the first n - n/3 are composed sources under train/, the
// rest are benchmark scenes under bench/ with bench/annotations.json.
inline Corpus write_corpus(const std::string& out_dir, std::size_t n, std::uint64_t seed,
                           const SynthConfig& cfg = {}) {
  namespace fs = std::filesystem;
  if (n < 3) throw ConfigError("synth: need at least 3 images");
  const std::size_t n_bench = n / 3;
  const std::size_t n_train = n - n_bench;
  const fs::path root(out_dir);
  fs::create_directories(root / "train");
  fs::create_directories(root / "bench");

  auto name = [](const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04zu.png", prefix, i);
    return std::string(buf);
  };
  std::vector<Scene> train(n_train), bench(n_bench);
  parallel_for(n_train, [&](std::size_t i) {
    train[i] = composed_scene(cfg, mix_seed(seed, i));
    save_png(render(train[i]), (root / "train" / name("src", i)).string());
  });
  parallel_for(n_bench, [&](std::size_t i) {
    bench[i] = bench_scene(cfg, mix_seed(seed ^ 0xbe7c4ULL, i));
    save_png(render(bench[i]), (root / "bench" / name("bench", i)).string());
  });

  Corpus c;
  nlohmann::json annotations = nlohmann::json::array();
  nlohmann::json scenes = {{"seed", seed},
                           {"width", cfg.width},
                           {"height", cfg.height},
                           {"radius", {cfg.radius_lo, cfg.radius_hi}},
                           {"train", nlohmann::json::array()},
                           {"bench", nlohmann::json::array()}};
  for (std::size_t i = 0; i < n_train; ++i) {
    c.train_images.push_back((root / "train" / name("src", i)).string());
    scenes["train"].push_back(scene_json(train[i], name("src", i)));
  }
  for (std::size_t i = 0; i < n_bench; ++i) {
    c.bench_images.push_back((root / "bench" / name("bench", i)).string());
    const CropRect& f = bench[i].frame;
    annotations.push_back({{"image", name("bench", i)}, {"crop", {f.x, f.y, f.w, f.h}}, {"category", "synthetic"}});
    scenes["bench"].push_back(scene_json(bench[i], name("bench", i)));
  }
  c.annotations = (root / "bench" / "annotations.json").string();
  write_json(annotations, c.annotations);
  write_json(scenes, root / "scenes.json");
  return c;
}

}  // namespace vfn::synth
