#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "vfn/error.hpp"
#include "vfn/features.hpp"
#include "vfn/parallel.hpp"
#include "vfn/random.hpp"

namespace vfn {

inline constexpr int kHiddenWidth = 1000;

// All trainable tensors of the ranking network.
template <class T>
struct ParamSet {
  std::vector<Tensor<T>> backbone;  // conv{i}.weight [out, in*k*k], conv{i}.bias [out]
  Tensor<T> fc1_weight;             // [1000, feature_dim]
  Tensor<T> fc1_bias;               // [1000]
  Tensor<T> fc2_weight;             // [1, 1000]
  Tensor<T> fc2_bias;               // [1]

  std::vector<Tensor<T>*> tensors() {
    std::vector<Tensor<T>*> out;
    for (auto& t : backbone) out.push_back(&t);
    out.insert(out.end(), {&fc1_weight, &fc1_bias, &fc2_weight, &fc2_bias});
    return out;
  }
  std::vector<const Tensor<T>*> tensors() const {
    std::vector<const Tensor<T>*> out;
    for (const auto& t : backbone) out.push_back(&t);
    out.insert(out.end(), {&fc1_weight, &fc1_bias, &fc2_weight, &fc2_bias});
    return out;
  }

  ParamSet zeros_like() const {
    ParamSet z = *this;
    for (Tensor<T>* t : z.tensors()) std::fill(t->values.begin(), t->values.end(), T(0));
    return z;
  }

  std::size_t feature_dim() const { return fc1_weight.shape.empty() ? 0 : fc1_weight.shape[1]; }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

template <class T>
struct RankerParams {
  NetworkSpec spec;
  ParamSet<T> weights;
  ParamSet<T> velocity;  // momentum buffers, same shapes as weights
};

template <class U, class T>
ParamSet<U> cast_params(const ParamSet<T>& p) {
  auto cast = [](const Tensor<T>& t) {
    Tensor<U> u;
    u.name = t.name;
    u.shape = t.shape;
    u.values.assign(t.values.begin(), t.values.end());
    return u;
  };
  ParamSet<U> out;
  for (const auto& t : p.backbone) out.backbone.push_back(cast(t));
  out.fc1_weight = cast(p.fc1_weight);
  out.fc1_bias = cast(p.fc1_bias);
  out.fc2_weight = cast(p.fc2_weight);
  out.fc2_bias = cast(p.fc2_bias);
  return out;
}

template <class U, class T>
RankerParams<U> cast_params(const RankerParams<T>& p) {
  return {p.spec, cast_params<U>(p.weights), cast_params<U>(p.velocity)};
}

// Zero-filled tensors with the shapes implied by spec.
template <class T>
ParamSet<T> shaped_params(const NetworkSpec& spec) {
  spec.validate();
  ParamSet<T> p;
  const auto shapes = spec.backbone.shapes();
  int conv = 0;
  for (std::size_t i = 0; i < spec.backbone.layers.size(); ++i) {
    const LayerSpec& l = spec.backbone.layers[i];
    if (l.type != LayerType::Conv) continue;
    const int fan_in = shapes[i].channels * l.kernel * l.kernel;
    const std::string base = "conv" + std::to_string(conv++);
    p.backbone.emplace_back(base + ".weight", std::vector<int>{l.out_channels, fan_in});
    p.backbone.emplace_back(base + ".bias", std::vector<int>{l.out_channels});
  }
  const int dim = static_cast<int>(spec.feature_dim());
  p.fc1_weight = Tensor<T>("fc1.weight", {kHiddenWidth, dim});
  p.fc1_bias = Tensor<T>("fc1.bias", {kHiddenWidth});
  p.fc2_weight = Tensor<T>("fc2.weight", {1, kHiddenWidth});
  p.fc2_bias = Tensor<T>("fc2.bias", {1});
  return p;
}

// He initialization: weights ~ N(0, 2/fan_in), biases zero.
template <class T>
RankerParams<T> init_params(const NetworkSpec& spec, std::uint64_t seed) {
  RankerParams<T> rp{spec, shaped_params<T>(spec), {}};
  Rng rng(seed);
  for (Tensor<T>* t : rp.weights.tensors()) {
    if (t->shape.size() != 2) continue;
    const double std_dev = std::sqrt(2.0 / t->shape[1]);
    for (T& v : t->values) v = static_cast<T>(rng.normal() * std_dev);
  }
  rp.velocity = rp.weights.zeros_like();
  return rp;
}

// Features of a 227x227 input: backbone map aggregated by SPP or flattening.
template <class T>
FeatureVector<T> extract_features(const ImageBuffer& img227, const NetworkSpec& spec,
                                  const ParamSet<T>& p) {
  const auto map = backbone_forward<T>(img227, spec.backbone, std::span<const Tensor<T>>(p.backbone));
  return pool_features(map, spec);
}

// Phi(feature) = fc2(ReLU(fc1(feature))). Sequential loops with double
// accumulation, so the value does not depend on the SIMD code path.
template <class T>
double score(std::span<const T> feature, const ParamSet<T>& p) {
  const std::size_t dim = p.feature_dim();
  if (feature.size() != dim)
    throw ContractError("score: feature length " + std::to_string(feature.size()) +
                        " does not match fc1 input " + std::to_string(dim));
  double out = p.fc2_bias.values[0];
  for (int j = 0; j < kHiddenWidth; ++j) {
    const T* row = p.fc1_weight.values.data() + static_cast<std::size_t>(j) * dim;
    double z = p.fc1_bias.values[j];
    for (std::size_t i = 0; i < dim; ++i) z += static_cast<double>(row[i]) * feature[i];
    if (z > 0.0) out += static_cast<double>(p.fc2_weight.values[j]) * z;
  }
  if (!std::isfinite(out)) throw NumericError("non-finite score at fc2");
  return out;
}

template <class T>
double score(const FeatureVector<T>& feature, const ParamSet<T>& p) {
  return score(std::span<const T>(feature), p);
}

// l = max{0, g + Phi(crop) - Phi(full)}
template <class T>
T pair_loss(T score_full, T score_crop, T gap) {
  return std::max(T(0), gap + score_crop - score_full);
}

template <class T>
using FeatureMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct HeadPass {
  T loss = T(0);
  std::vector<T> full_scores;
  std::vector<T> crop_scores;
  // d(loss)/d(features), rows [full; crop]; filled only when requested.
  FeatureMatrix<T> feature_grads;
};

namespace detail {

template <class T>
void require_finite_matrix(const FeatureMatrix<T>& m, const char* layer) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite activation at ") + layer);
}

}  // namespace detail

// Hinge loss summed over pairs and its gradient with respect to the head.
// full and crop hold one feature row per pair. Head gradients are
// accumulated into grads when non-null.
template <class T>
HeadPass<T> head_loss_and_grads(const FeatureMatrix<T>& full, const FeatureMatrix<T>& crop,
                                const ParamSet<T>& p, T gap, ParamSet<T>* grads,
                                bool want_feature_grads = false) {
  const Eigen::Index n = full.rows();
  const Eigen::Index dim = static_cast<Eigen::Index>(p.feature_dim());
  if (n == 0 || crop.rows() != n) throw ContractError("head: batch must be nonempty and paired");
  if (full.cols() != dim || crop.cols() != dim)
    throw ContractError("head: feature length does not match fc1 input");

  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  Eigen::Map<const FeatureMatrix<T>> w1(p.fc1_weight.values.data(), kHiddenWidth, dim);
  Eigen::Map<const Vec> b1(p.fc1_bias.values.data(), kHiddenWidth);
  Eigen::Map<const Vec> w2(p.fc2_weight.values.data(), kHiddenWidth);
  const T b2 = p.fc2_bias.values[0];

  FeatureMatrix<T> x(2 * n, dim);
  x.topRows(n) = full;
  x.bottomRows(n) = crop;
  FeatureMatrix<T> z = x * w1.transpose();
  z.rowwise() += b1.transpose();
  detail::require_finite_matrix(z, "fc1");
  const FeatureMatrix<T> h = z.cwiseMax(T(0));
  Vec s = h * w2;
  s.array() += b2;
  if (!s.allFinite()) throw NumericError("non-finite activation at fc2");

  HeadPass<T> out;
  out.full_scores.assign(s.data(), s.data() + n);
  out.crop_scores.assign(s.data() + n, s.data() + 2 * n);

  // Only violating pairs carry gradient: d/dPhi(full) = -1, d/dPhi(crop) = +1.
  std::vector<Eigen::Index> active_rows;
  std::vector<T> ds;
  for (Eigen::Index i = 0; i < n; ++i) {
    const T margin = gap + s[n + i] - s[i];
    if (margin > T(0)) {
      out.loss += margin;
      active_rows.push_back(i);
      ds.push_back(T(-1));
      active_rows.push_back(n + i);
      ds.push_back(T(1));
    }
  }
  if (want_feature_grads) out.feature_grads = FeatureMatrix<T>::Zero(2 * n, dim);
  if (active_rows.empty() || (!grads && !want_feature_grads)) return out;

  const auto m = static_cast<Eigen::Index>(active_rows.size());
  FeatureMatrix<T> dz(m, kHiddenWidth);
  FeatureMatrix<T> xa(m, dim);
  for (Eigen::Index r = 0; r < m; ++r) {
    const Eigen::Index row = active_rows[r];
    for (Eigen::Index j = 0; j < kHiddenWidth; ++j)
      dz(r, j) = z(row, j) > T(0) ? ds[r] * w2[j] : T(0);
    xa.row(r) = x.row(row);
  }
  if (grads) {
    Eigen::Map<FeatureMatrix<T>> gw1(grads->fc1_weight.values.data(), kHiddenWidth, dim);
    gw1.noalias() += dz.transpose() * xa;
    Eigen::Map<Vec> gb1(grads->fc1_bias.values.data(), kHiddenWidth);
    gb1 += dz.colwise().sum().transpose();
    Eigen::Map<Vec> gw2(grads->fc2_weight.values.data(), kHiddenWidth);
    for (Eigen::Index r = 0; r < m; ++r) {
      gw2 += ds[r] * h.row(active_rows[r]).transpose();
      grads->fc2_bias.values[0] += ds[r];
    }
  }
  if (want_feature_grads) {
    const FeatureMatrix<T> dx = dz * w1;
    for (Eigen::Index r = 0; r < m; ++r) out.feature_grads.row(active_rows[r]) = dx.row(r);
  }
  return out;
}

template <class T>
FeatureMatrix<T> stack_rows(std::span<const FeatureVector<T>> rows) {
  if (rows.empty()) return {};
  FeatureMatrix<T> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw ContractError("stack_rows: ragged feature rows");
    std::copy(rows[i].begin(), rows[i].end(), m.row(static_cast<Eigen::Index>(i)).data());
  }
  return m;
}

struct ImagePair {
  ImageBuffer full;  // 227x227
  ImageBuffer crop;  // 227x227
};

template <class T>
struct LossAndGrads {
  T loss = T(0);
  ParamSet<T> grads;
  std::vector<T> full_scores;
  std::vector<T> crop_scores;
};

// Total hinge loss over a batch of (original, crop) inputs and its gradient
// through the head and, when the backbone is trainable, the backbone.
template <class T>
LossAndGrads<T> batch_loss_and_grads(std::span<const ImagePair> batch, const RankerParams<T>& rp,
                                     T gap) {
  if (batch.empty()) throw ContractError("batch_loss_and_grads: empty batch");
  const NetworkSpec& spec = rp.spec;
  const bool train_backbone = spec.backbone.trainable();
  const std::size_t n = batch.size();
  const std::span<const Tensor<T>> conv(rp.weights.backbone);

  std::vector<BackboneTrace<T>> traces(train_backbone ? 2 * n : 0);
  std::vector<FeatureVector<T>> feats(2 * n);
  parallel_for(2 * n, [&](std::size_t i) {
    const ImageBuffer& img = i < n ? batch[i].full : batch[i - n].crop;
    const auto map = backbone_forward<T>(img, spec.backbone, conv, train_backbone ? &traces[i] : nullptr);
    feats[i] = pool_features(map, spec);
  });
  const std::span<const FeatureVector<T>> fs(feats);
  const auto full = stack_rows<T>(fs.subspan(0, n));
  const auto crop = stack_rows<T>(fs.subspan(n, n));

  LossAndGrads<T> out;
  out.grads = rp.weights.zeros_like();
  auto head = head_loss_and_grads(full, crop, rp.weights, gap, &out.grads, train_backbone);
  out.loss = head.loss;
  out.full_scores = std::move(head.full_scores);
  out.crop_scores = std::move(head.crop_scores);
  if (!train_backbone || out.loss == T(0)) return out;

  std::vector<std::vector<Tensor<T>>> per_image(2 * n);
  parallel_for(2 * n, [&](std::size_t i) {
    const auto row = head.feature_grads.row(static_cast<Eigen::Index>(i));
    if (row.isZero()) return;
    std::vector<T> upstream(row.data(), row.data() + row.size());
    auto grad_map = pool_backward<T>(traces[i].output, spec, upstream);
    per_image[i] = rp.weights.backbone;
    for (Tensor<T>& t : per_image[i]) std::fill(t.values.begin(), t.values.end(), T(0));
    backbone_backward<T>(spec.backbone, conv, traces[i], std::move(grad_map), per_image[i]);
  });
  // Ordered reduction keeps the sum independent of worker scheduling.
  for (const auto& g : per_image) {
    if (g.empty()) continue;
    for (std::size_t t = 0; t < g.size(); ++t)
      for (std::size_t k = 0; k < g[t].values.size(); ++k)
        out.grads.backbone[t].values[k] += g[t].values[k];
  }
  return out;
}

// Classical momentum: v <- momentum * v + grad; p <- p - lr * v. Frozen
// backbone tensors are left untouched.
template <class T>
void sgd_momentum_step(RankerParams<T>& rp, const ParamSet<T>& grads, T lr, T momentum) {
  auto weights = rp.weights.tensors();
  auto velocity = rp.velocity.tensors();
  const auto g = grads.tensors();
  if (weights.size() != g.size() || velocity.size() != g.size())
    throw ContractError("sgd_momentum_step: parameter/gradient structure mismatch");
  const std::size_t first = rp.spec.backbone.trainable() ? 0 : rp.weights.backbone.size();
  for (std::size_t t = first; t < weights.size(); ++t) {
    if (weights[t]->size() != g[t]->size() || velocity[t]->size() != g[t]->size())
      throw ContractError("sgd_momentum_step: shape mismatch for " + weights[t]->name);
    auto& p = weights[t]->values;
    auto& v = velocity[t]->values;
    const auto& d = g[t]->values;
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = momentum * v[k] + d[k];
      p[k] = p[k] - lr * v[k];
    }
  }
}

}  // namespace vfn
