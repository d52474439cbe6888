#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vfn/error.hpp"
#include "vfn/imaging.hpp"

namespace vfn {

// Named dense array; the unit of parameter storage and checkpointing.
template <class T>
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> values;

  Tensor() = default;
  Tensor(std::string n, std::vector<int> s, T fill = T(0)) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    values.assign(count, fill);
  }

  std::size_t size() const { return values.size(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <class T>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;  // channel-major, then row-major

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  T at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
};

template <class T>
using FeatureVector = std::vector<T>;

// ---------------------------------------------------------------------------
// Backbone description

enum class LayerType : std::uint8_t { Conv = 0, Relu = 1, MaxPool = 2 };

struct LayerSpec {
  LayerType type = LayerType::Conv;
  int out_channels = 0;  // conv only
  int kernel = 1;        // conv and pool
  int stride = 1;
  int pad = 0;  // conv only

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Toy backbones train end to end; Fixed backbones keep their (random) weights
// frozen and only the head is optimized.
enum class BackboneKind : std::uint8_t { Toy = 0, Fixed = 1 };

struct MapShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  friend bool operator==(const MapShape&, const MapShape&) = default;
};

inline constexpr int kBackboneOutputSide = 13;

struct BackboneSpec {
  BackboneKind kind = BackboneKind::Fixed;
  int input_side = kNetInputSide;
  int input_channels = 3;
  std::vector<LayerSpec> layers;

  // AlexNet-like geometry: 227 -> conv11/4 -> 55 -> pool3/2 -> 27 -> conv5 ->
  // pool3/2 -> 13 -> conv3 -> 13.
  static BackboneSpec toy(int c1 = 16, int c2 = 32, int c3 = 16,
                          BackboneKind kind = BackboneKind::Fixed) {
    BackboneSpec s;
    s.kind = kind;
    s.layers = {
        {LayerType::Conv, c1, 11, 4, 0}, {LayerType::Relu},
        {LayerType::MaxPool, 0, 3, 2, 0}, {LayerType::Conv, c2, 5, 1, 2},
        {LayerType::Relu},               {LayerType::MaxPool, 0, 3, 2, 0},
        {LayerType::Conv, c3, 3, 1, 1},  {LayerType::Relu},
    };
    return s;
  }

  bool trainable() const { return kind == BackboneKind::Toy; }

  // Shapes of every layer's input, plus the final output as the last entry.
  std::vector<MapShape> shapes() const {
    std::vector<MapShape> out{{input_channels, input_side, input_side}};
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& l = layers[i];
      MapShape s = out.back();
      switch (l.type) {
        case LayerType::Conv:
          if (l.out_channels < 1 || l.kernel < 1 || l.stride < 1 || l.pad < 0)
            throw ConfigError("backbone: invalid conv layer " + std::to_string(i));
          s = {l.out_channels, (s.height + 2 * l.pad - l.kernel) / l.stride + 1,
               (s.width + 2 * l.pad - l.kernel) / l.stride + 1};
          break;
        case LayerType::MaxPool:
          if (l.kernel < 1 || l.stride < 1)
            throw ConfigError("backbone: invalid pool layer " + std::to_string(i));
          s = {s.channels, (s.height - l.kernel) / l.stride + 1, (s.width - l.kernel) / l.stride + 1};
          break;
        case LayerType::Relu:
          break;
      }
      if (s.height < 1 || s.width < 1)
        throw ConfigError("backbone: layer " + std::to_string(i) + " collapses the map");
      out.push_back(s);
    }
    return out;
  }

  MapShape output_shape() const { return shapes().back(); }

  void validate() const {
    if (input_side != kNetInputSide || input_channels != 3)
      throw ConfigError("backbone: input must be 227x227x3");
    const MapShape s = output_shape();
    if (s.height != kBackboneOutputSide || s.width != kBackboneOutputSide)
      throw ConfigError("backbone: output must be 13x13, got " + std::to_string(s.height) + "x" +
                        std::to_string(s.width));
  }

  std::size_t conv_count() const {
    return static_cast<std::size_t>(
        std::count_if(layers.begin(), layers.end(), [](const LayerSpec& l) { return l.type == LayerType::Conv; }));
  }

  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

inline std::string to_string(LayerType t) {
  switch (t) {
    case LayerType::Conv: return "conv";
    case LayerType::Relu: return "relu";
    case LayerType::MaxPool: return "maxpool";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Spatial pyramid pooling

enum class PoolMode : std::uint8_t { Max = 0, Avg = 1 };

struct SppConfig {
  std::vector<int> sizes{3, 5, 7};
  PoolMode mode = PoolMode::Max;

  // One cell smaller than the window; a 1x1 window steps by one cell.
  static int stride(int k) { return std::max(1, k - 1); }
  static int bins_per_axis(int side, int k) { return (side - k) / stride(k) + 1; }

  std::size_t bins_per_channel(int height, int width) const {
    std::size_t n = 0;
    for (int k : sizes)
      n += static_cast<std::size_t>(bins_per_axis(height, k)) * bins_per_axis(width, k);
    return n;
  }

  void validate(int height, int width) const {
    if (sizes.empty()) throw ConfigError("spp: no pooling sizes");
    for (int k : sizes)
      if (k < 1 || k > height || k > width)
        throw ConfigError("spp: pooling size " + std::to_string(k) + " does not fit a " +
                          std::to_string(height) + "x" + std::to_string(width) + " map");
  }
};

// Bins are laid out size-major, then channel, then window row and column.
template <class T>
FeatureVector<T> spp_pool(const FeatureMap<T>& map, const SppConfig& cfg) {
  cfg.validate(map.height, map.width);
  FeatureVector<T> out;
  out.reserve(cfg.bins_per_channel(map.height, map.width) * map.channels);
  for (int k : cfg.sizes) {
    const int stride = SppConfig::stride(k);
    const int ny = SppConfig::bins_per_axis(map.height, k);
    const int nx = SppConfig::bins_per_axis(map.width, k);
    for (int c = 0; c < map.channels; ++c)
      for (int by = 0; by < ny; ++by)
        for (int bx = 0; bx < nx; ++bx) {
          T acc = cfg.mode == PoolMode::Max ? map.at(c, by * stride, bx * stride) : T(0);
          for (int y = by * stride; y < by * stride + k; ++y)
            for (int x = bx * stride; x < bx * stride + k; ++x) {
              const T v = map.at(c, y, x);
              if (cfg.mode == PoolMode::Max) {
                if (v > acc) acc = v;
              } else {
                acc += v;
              }
            }
          out.push_back(cfg.mode == PoolMode::Max ? acc : acc / static_cast<T>(k * k));
        }
  }
  return out;
}

// Max routes each bin's gradient to its first (lowest flat index) maximum;
// Avg spreads it evenly over the window. Overlapping windows accumulate.
template <class T>
FeatureMap<T> spp_backward(const FeatureMap<T>& map, const SppConfig& cfg,
                           std::span<const T> upstream) {
  cfg.validate(map.height, map.width);
  if (upstream.size() != cfg.bins_per_channel(map.height, map.width) * map.channels)
    throw ContractError("spp_backward: upstream gradient length mismatch");
  FeatureMap<T> grad(map.channels, map.height, map.width);
  std::size_t i = 0;
  for (int k : cfg.sizes) {
    const int stride = SppConfig::stride(k);
    const int ny = SppConfig::bins_per_axis(map.height, k);
    const int nx = SppConfig::bins_per_axis(map.width, k);
    const T inv_area = T(1) / static_cast<T>(k * k);
    for (int c = 0; c < map.channels; ++c)
      for (int by = 0; by < ny; ++by)
        for (int bx = 0; bx < nx; ++bx, ++i) {
          const T g = upstream[i];
          if (cfg.mode == PoolMode::Max) {
            int best_y = by * stride, best_x = bx * stride;
            T best = map.at(c, best_y, best_x);
            for (int y = by * stride; y < by * stride + k; ++y)
              for (int x = bx * stride; x < bx * stride + k; ++x)
                if (map.at(c, y, x) > best) {
                  best = map.at(c, y, x);
                  best_y = y;
                  best_x = x;
                }
            grad.at(c, best_y, best_x) += g;
          } else {
            for (int y = by * stride; y < by * stride + k; ++y)
              for (int x = bx * stride; x < bx * stride + k; ++x) grad.at(c, y, x) += g * inv_area;
          }
        }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Whole-network description: backbone + aggregation of its 13x13 map.

enum class Pooling : std::uint8_t { Flatten = 0, SppMax = 1, SppAvg = 2 };

inline std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::Flatten: return "off";
    case Pooling::SppMax: return "max";
    case Pooling::SppAvg: return "avg";
  }
  return "?";
}

inline Pooling parse_pooling(const std::string& s) {
  if (s == "off") return Pooling::Flatten;
  if (s == "max") return Pooling::SppMax;
  if (s == "avg") return Pooling::SppAvg;
  throw ConfigError("unknown pooling '" + s + "' (expected off, max or avg)");
}

struct NetworkSpec {
  BackboneSpec backbone = BackboneSpec::toy();
  Pooling pooling = Pooling::SppMax;
  std::vector<int> spp_sizes{3, 5, 7};

  SppConfig spp() const {
    return {spp_sizes, pooling == Pooling::SppAvg ? PoolMode::Avg : PoolMode::Max};
  }

  std::size_t feature_dim() const {
    const MapShape s = backbone.output_shape();
    if (pooling == Pooling::Flatten) return static_cast<std::size_t>(s.channels) * s.height * s.width;
    return spp().bins_per_channel(s.height, s.width) * s.channels;
  }

  void validate() const {
    backbone.validate();
    if (pooling != Pooling::Flatten) spp().validate(kBackboneOutputSide, kBackboneOutputSide);
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

template <class T>
FeatureVector<T> pool_features(const FeatureMap<T>& map, const NetworkSpec& spec) {
  if (spec.pooling == Pooling::Flatten) return map.data;
  return spp_pool(map, spec.spp());
}

template <class T>
FeatureMap<T> pool_backward(const FeatureMap<T>& map, const NetworkSpec& spec,
                            std::span<const T> upstream) {
  if (spec.pooling != Pooling::Flatten) return spp_backward(map, spec.spp(), upstream);
  if (upstream.size() != map.data.size())
    throw ContractError("pool_backward: upstream gradient length mismatch");
  FeatureMap<T> grad(map.channels, map.height, map.width);
  std::copy(upstream.begin(), upstream.end(), grad.data.begin());
  return grad;
}

// ---------------------------------------------------------------------------
// Backbone forward / backward

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstRowMap = Eigen::Map<const RowMatrix<T>>;

template <class T>
RowMatrix<T> im2col(const FeatureMap<T>& in, const LayerSpec& l, int out_h, int out_w) {
  const int k = l.kernel;
  RowMatrix<T> col(static_cast<Eigen::Index>(in.channels) * k * k,
                   static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < in.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int y = oy * l.stride - l.pad + ky;
          for (int ox = 0; ox < out_w; ++ox) {
            const int x = ox * l.stride - l.pad + kx;
            row[oy * out_w + ox] =
                (y >= 0 && y < in.height && x >= 0 && x < in.width) ? in.at(c, y, x) : T(0);
          }
        }
      }
  return col;
}

template <class T>
void col2im_add(const RowMatrix<T>& col, const LayerSpec& l, int out_h, int out_w,
                FeatureMap<T>& grad_in) {
  const int k = l.kernel;
  for (int c = 0; c < grad_in.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int y = oy * l.stride - l.pad + ky;
          if (y < 0 || y >= grad_in.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int x = ox * l.stride - l.pad + kx;
            if (x >= 0 && x < grad_in.width) grad_in.at(c, y, x) += row[oy * out_w + ox];
          }
        }
      }
}

template <class T>
void require_finite(const std::vector<T>& v, std::size_t layer, LayerType type) {
  for (const T x : v)
    if (!std::isfinite(x))
      throw NumericError("non-finite activation in backbone layer " + std::to_string(layer) + " (" +
                         to_string(type) + ")");
}

}  // namespace detail

// Layer inputs recorded during a forward pass, consumed by the backward pass.
template <class T>
struct BackboneTrace {
  std::vector<FeatureMap<T>> inputs;
  std::vector<std::vector<std::uint32_t>> argmax;  // per MaxPool layer, empty otherwise
  FeatureMap<T> output;
};

template <class T>
FeatureMap<T> image_to_map(const ImageBuffer& img) {
  FeatureMap<T> m(3, img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) m.at(c, y, x) = static_cast<T>(img.at(x, y, c)) - T(0.5);
  return m;
}

// conv_params holds (weight, bias) per conv layer in order; weight is
// [out, in*k*k] row-major, bias is [out]. Input pixels are centered at 0.5.
template <class T>
FeatureMap<T> backbone_forward(const ImageBuffer& img, const BackboneSpec& spec,
                               std::span<const Tensor<T>> conv_params,
                               BackboneTrace<T>* trace = nullptr) {
  if (img.width() != spec.input_side || img.height() != spec.input_side)
    throw ContractError("backbone_forward: input must be " + std::to_string(spec.input_side) + "x" +
                        std::to_string(spec.input_side) + ", got " + std::to_string(img.width()) +
                        "x" + std::to_string(img.height()));
  if (conv_params.size() != 2 * spec.conv_count())
    throw ContractError("backbone_forward: parameter count does not match spec");

  FeatureMap<T> cur = image_to_map<T>(img);
  if (trace) {
    trace->inputs.clear();
    trace->argmax.clear();
  }
  std::size_t conv_index = 0;
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& l = spec.layers[li];
    std::vector<std::uint32_t> arg;
    FeatureMap<T> next;
    switch (l.type) {
      case LayerType::Conv: {
        const Tensor<T>& w = conv_params[2 * conv_index];
        const Tensor<T>& b = conv_params[2 * conv_index + 1];
        ++conv_index;
        const int oh = (cur.height + 2 * l.pad - l.kernel) / l.stride + 1;
        const int ow = (cur.width + 2 * l.pad - l.kernel) / l.stride + 1;
        const Eigen::Index patch = static_cast<Eigen::Index>(cur.channels) * l.kernel * l.kernel;
        if (w.size() != static_cast<std::size_t>(l.out_channels * patch) ||
            b.size() != static_cast<std::size_t>(l.out_channels))
          throw ContractError("backbone_forward: conv weight shape mismatch at layer " +
                              std::to_string(li));
        const auto col = detail::im2col(cur, l, oh, ow);
        next = FeatureMap<T>(l.out_channels, oh, ow);
        detail::RowMap<T> out(next.data.data(), l.out_channels, static_cast<Eigen::Index>(oh) * ow);
        detail::ConstRowMap<T> wm(w.values.data(), l.out_channels, patch);
        out.noalias() = wm * col;
        for (int o = 0; o < l.out_channels; ++o) out.row(o).array() += b.values[o];
        break;
      }
      case LayerType::Relu:
        next = cur;
        for (T& v : next.data) v = v > T(0) ? v : T(0);
        break;
      case LayerType::MaxPool: {
        const int oh = (cur.height - l.kernel) / l.stride + 1;
        const int ow = (cur.width - l.kernel) / l.stride + 1;
        next = FeatureMap<T>(cur.channels, oh, ow);
        arg.resize(next.data.size());
        std::size_t o = 0;
        for (int c = 0; c < cur.channels; ++c)
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox, ++o) {
              std::size_t best_i = (static_cast<std::size_t>(c) * cur.height + oy * l.stride) * cur.width +
                                   ox * l.stride;
              T best = cur.data[best_i];
              for (int y = oy * l.stride; y < oy * l.stride + l.kernel; ++y)
                for (int x = ox * l.stride; x < ox * l.stride + l.kernel; ++x) {
                  const std::size_t i = (static_cast<std::size_t>(c) * cur.height + y) * cur.width + x;
                  if (cur.data[i] > best) {
                    best = cur.data[i];
                    best_i = i;
                  }
                }
              next.data[o] = best;
              arg[o] = static_cast<std::uint32_t>(best_i);
            }
        break;
      }
    }
    detail::require_finite(next.data, li, l.type);
    if (trace) {
      trace->inputs.push_back(std::move(cur));
      trace->argmax.push_back(std::move(arg));
    }
    cur = std::move(next);
  }
  if (trace) trace->output = cur;
  return cur;
}

// Accumulates parameter gradients into conv_grads (same layout as the
// parameters) given d(loss)/d(output map).
template <class T>
void backbone_backward(const BackboneSpec& spec, std::span<const Tensor<T>> conv_params,
                       const BackboneTrace<T>& trace, FeatureMap<T> grad,
                       std::span<Tensor<T>> conv_grads) {
  if (trace.inputs.size() != spec.layers.size())
    throw ContractError("backbone_backward: trace does not match spec");
  if (conv_grads.size() != conv_params.size())
    throw ContractError("backbone_backward: gradient count mismatch");

  std::size_t conv_index = spec.conv_count();
  for (std::size_t li = spec.layers.size(); li-- > 0;) {
    const LayerSpec& l = spec.layers[li];
    const FeatureMap<T>& in = trace.inputs[li];
    FeatureMap<T> grad_in(in.channels, in.height, in.width);
    switch (l.type) {
      case LayerType::Conv: {
        --conv_index;
        const Tensor<T>& w = conv_params[2 * conv_index];
        Tensor<T>& gw = conv_grads[2 * conv_index];
        Tensor<T>& gb = conv_grads[2 * conv_index + 1];
        const int oh = grad.height, ow = grad.width;
        const Eigen::Index patch = static_cast<Eigen::Index>(in.channels) * l.kernel * l.kernel;
        const auto col = detail::im2col(in, l, oh, ow);
        detail::ConstRowMap<T> dout(grad.data.data(), l.out_channels, static_cast<Eigen::Index>(oh) * ow);
        detail::RowMap<T> dw(gw.values.data(), l.out_channels, patch);
        dw.noalias() += dout * col.transpose();
        for (int o = 0; o < l.out_channels; ++o) gb.values[o] += dout.row(o).sum();
        if (li > 0) {
          detail::ConstRowMap<T> wm(w.values.data(), l.out_channels, patch);
          const detail::RowMatrix<T> dcol = wm.transpose() * dout;
          detail::col2im_add(dcol, l, oh, ow, grad_in);
        }
        break;
      }
      case LayerType::Relu:
        for (std::size_t i = 0; i < grad_in.data.size(); ++i)
          grad_in.data[i] = in.data[i] > T(0) ? grad.data[i] : T(0);
        break;
      case LayerType::MaxPool: {
        const auto& arg = trace.argmax[li];
        for (std::size_t o = 0; o < arg.size(); ++o) grad_in.data[arg[o]] += grad.data[o];
        break;
      }
    }
    grad = std::move(grad_in);
  }
}

}  // namespace vfn
