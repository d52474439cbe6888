#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vfn/checkpoint.hpp"
#include "vfn/dataset.hpp"
#include "vfn/error.hpp"
#include "vfn/parallel.hpp"
#include "vfn/ranker.hpp"

namespace vfn {

struct TrainConfig {
  double lr_initial = 0.01;
  double lr_after = 0.002;
  std::size_t lr_switch_iter = 10000;
  double momentum = 0.9;
  std::size_t batch_pairs = 100;
  std::size_t total_iters = 15000;
  std::size_t validate_every = 1000;
  double gap = 1.0;
  std::uint64_t seed = 0;

  double learning_rate(std::size_t iter) const { return iter < lr_switch_iter ? lr_initial : lr_after; }

  void validate() const {
    if (!(lr_initial > 0 && lr_after > 0 && momentum > 0 && gap > 0))
      throw ConfigError("train: rates, momentum and gap must be positive");
    if (batch_pairs == 0 || total_iters == 0 || validate_every == 0 || lr_switch_iter == 0)
      throw ConfigError("train: counts must be positive");
    if (lr_switch_iter >= total_iters) throw ConfigError("train: lr_switch_iter must be < total_iters");
  }

  // The default schedule compressed to `iters` iterations: the learning rate
  // drops at 2/3 of the run and validation happens 15 times.
  static TrainConfig scaled(std::size_t iters) {
    TrainConfig c;
    c.total_iters = iters;
    c.lr_switch_iter = std::max<std::size_t>(1, iters * 2 / 3);
    c.validate_every = std::max<std::size_t>(1, iters / 15);
    return c;
  }
};

struct CurvePoint {
  std::size_t iteration = 0;
  double train_loss = 0.0;  // mean pair loss since the previous validation
  double val_loss = 0.0;    // mean pair loss on the validation split
};

inline void write_curve_csv(const std::vector<CurvePoint>& curve, std::ostream& out) {
  out << "iteration,train_loss,val_loss\n";
  for (const auto& p : curve) {
    char line[128];
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g\n", p.iteration, p.train_loss, p.val_loss);
    out << line;
  }
}

struct TrainSetup {
  AugmentConfig augment{};
  // Frozen backbone: number of augmented feature variants cached per input
  // (variant 0 is always the unaugmented input).
  std::size_t aug_variants = 4;
  std::function<bool()> should_stop;
  std::function<void(const CurvePoint&)> on_validate;
};

struct TrainResult {
  Checkpoint best;
  std::vector<CurvePoint> curve;
  bool interrupted = false;
};

// Thrown when the loss becomes non-finite; carries the best checkpoint
// validated before the failure, if any.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, std::optional<Checkpoint> last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const std::optional<Checkpoint>& last_good() const { return last_good_; }

 private:
  std::optional<Checkpoint> last_good_;
};

// Keeps the checkpoint with the smallest validation loss; ties keep the
// earlier one.
class BestCheckpoint {
 public:
  bool offer(const RankerParams<float>& rp, std::size_t iteration, double val_loss) {
    if (best_ && !(val_loss < best_->validation_loss)) return false;
    best_ = Checkpoint{kCheckpointVersion, rp.spec, rp.weights, iteration, val_loss};
    return true;
  }
  const std::optional<Checkpoint>& get() const { return best_; }

 private:
  std::optional<Checkpoint> best_;
};

// Generic loop: step(iter) -> (summed batch loss, grads); validate() -> mean
// validation pair loss.
template <class StepFn, class ValidateFn>
TrainResult run_sgd(RankerParams<float>& rp, const TrainConfig& cfg, const TrainSetup& setup,
                    StepFn&& step, ValidateFn&& validate) {
  TrainResult result;
  BestCheckpoint best;
  double window_loss = 0.0;
  std::size_t window_pairs = 0;
  auto checkpoint_now = [&](std::size_t done) {
    CurvePoint p{done, window_pairs ? window_loss / window_pairs : 0.0, validate()};
    window_loss = 0.0;
    window_pairs = 0;
    result.curve.push_back(p);
    best.offer(rp, done, p.val_loss);
    if (setup.on_validate) setup.on_validate(p);
  };

  for (std::size_t it = 0; it < cfg.total_iters; ++it) {
    auto [loss, grads] = step(it);
    if (!std::isfinite(loss))
      throw TrainingAborted("non-finite training loss at iteration " + std::to_string(it), best.get());
    // The loss is summed over the batch; the step uses its per-pair mean.
    const double lr = cfg.learning_rate(it) / static_cast<double>(cfg.batch_pairs);
    sgd_momentum_step(rp, grads, static_cast<float>(lr), static_cast<float>(cfg.momentum));
    window_loss += loss;
    window_pairs += cfg.batch_pairs;
    const std::size_t done = it + 1;
    if (done % cfg.validate_every == 0 || done == cfg.total_iters) checkpoint_now(done);
    if (setup.should_stop && setup.should_stop() && done < cfg.total_iters) {
      if (!best.get()) checkpoint_now(done);
      result.interrupted = true;
      break;
    }
  }
  result.best = *best.get();
  return result;
}

// ---------------------------------------------------------------------------
// Frozen-backbone path: features are computed once per (input, variant).

class FeatureBank {
 public:
  FeatureBank(const PairManifest& m, const NetworkSpec& spec, const ParamSet<float>& weights,
              const AugmentConfig& aug, std::size_t variants) {
    variants_ = variants + 1;
    std::map<std::string, std::size_t> source_ids;
    for (const PairRecord& r : m.records)
      if (source_ids.emplace(r.image, source_ids.size()).second) sources_.push_back(r.image);
    record_unit_.resize(m.records.size());
    full_unit_.resize(m.records.size());
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      full_unit_[i] = source_ids.at(m.records[i].image);
      record_unit_[i] = sources_.size() + i;
    }
    const std::size_t units = sources_.size() + m.records.size();
    dim_ = spec.feature_dim();
    features_.assign(units * variants_ * dim_, 0.0f);

    ImageCache cache;
    parallel_for(units * variants_, [&](std::size_t k) {
      const std::size_t unit = k / variants_;
      const std::size_t variant = k % variants_;
      const bool is_source = unit < sources_.size();
      const std::string& path = is_source ? sources_[unit] : m.records[unit - sources_.size()].image;
      const auto img = cache.get(path);
      ImageBuffer input = is_source ? resize_bilinear(*img, kNetInputSide, kNetInputSide)
                                    : network_input(*img, m.records[unit - sources_.size()].crop);
      if (variant > 0) {
        Rng rng(mix_seed(aug.seed, k));
        input = augment(input, aug, rng);
      }
      const auto f = extract_features<float>(input, spec, weights);
      std::copy(f.begin(), f.end(), features_.begin() + static_cast<std::ptrdiff_t>(k * dim_));
    });
  }

  std::size_t dim() const { return dim_; }
  std::size_t variants() const { return variants_ - 1; }

  const float* full(std::size_t record, std::size_t variant) const {
    return row(full_unit_[record], variant);
  }
  const float* crop(std::size_t record, std::size_t variant) const {
    return row(record_unit_[record], variant);
  }

 private:
  const float* row(std::size_t unit, std::size_t variant) const {
    return features_.data() + (unit * variants_ + variant) * dim_;
  }

  std::vector<std::string> sources_;
  std::vector<std::size_t> full_unit_;
  std::vector<std::size_t> record_unit_;
  std::size_t variants_ = 1;
  std::size_t dim_ = 0;
  std::vector<float> features_;
};

inline double bank_validation_loss(const FeatureBank& bank, const std::vector<std::size_t>& val,
                                   const ParamSet<float>& w, float gap) {
  const auto dim = static_cast<Eigen::Index>(bank.dim());
  FeatureMatrix<float> full(static_cast<Eigen::Index>(val.size()), dim);
  FeatureMatrix<float> crop(static_cast<Eigen::Index>(val.size()), dim);
  for (std::size_t i = 0; i < val.size(); ++i) {
    std::copy_n(bank.full(val[i], 0), dim, full.row(static_cast<Eigen::Index>(i)).data());
    std::copy_n(bank.crop(val[i], 0), dim, crop.row(static_cast<Eigen::Index>(i)).data());
  }
  const auto pass = head_loss_and_grads<float>(full, crop, w, gap, nullptr);
  return static_cast<double>(pass.loss) / static_cast<double>(val.size());
}

// ---------------------------------------------------------------------------

// Trains the ranker on a mined manifest and returns the checkpoint with the
// smallest validation loss. Frozen backbones train the head on cached
// features; toy backbones train end to end on decoded batches.
inline TrainResult train(const PairManifest& manifest, const TrainConfig& cfg, RankerParams<float> init,
                         const TrainSetup& setup = {}) {
  cfg.validate();
  setup.augment.validate();
  const auto train_idx = manifest.indices(Split::Train);
  const auto val_idx = manifest.indices(Split::Val);
  if (train_idx.empty()) throw ConfigError("train: training split is empty");
  if (val_idx.empty()) throw ConfigError("train: validation split is empty");
  const float gap = static_cast<float>(cfg.gap);
  RankerParams<float>& rp = init;

  if (!rp.spec.backbone.trainable()) {
    const FeatureBank bank(manifest, rp.spec, rp.weights, setup.augment, setup.aug_variants);
    BatchCursor cursor(train_idx, cfg.seed);
    const auto dim = static_cast<Eigen::Index>(bank.dim());
    const auto n = static_cast<Eigen::Index>(cfg.batch_pairs);
    FeatureMatrix<float> full(n, dim), crop(n, dim);
    ParamSet<float> grads = rp.weights.zeros_like();
    auto step = [&](std::size_t) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto slot = cursor.next();
        std::size_t vf = 0, vc = 0;
        if (bank.variants() > 0) {
          Rng rng(mix_seed(cfg.seed ^ 0xa5a5a5a5ULL, (slot.epoch << 32) ^ slot.position));
          vf = 1 + rng.below(bank.variants());
          vc = 1 + rng.below(bank.variants());
        }
        std::copy_n(bank.full(slot.record, vf), dim, full.row(i).data());
        std::copy_n(bank.crop(slot.record, vc), dim, crop.row(i).data());
      }
      for (Tensor<float>* t : grads.tensors()) std::fill(t->values.begin(), t->values.end(), 0.0f);
      const auto pass = head_loss_and_grads<float>(full, crop, rp.weights, gap, &grads);
      return std::pair<double, const ParamSet<float>&>{pass.loss, grads};
    };
    auto validate = [&] { return bank_validation_loss(bank, val_idx, rp.weights, gap); };
    return run_sgd(rp, cfg, setup, step, validate);
  }

  auto cache = std::make_shared<ImageCache>();
  BatchStream stream(manifest, Split::Train, cfg.seed, setup.augment, cache);
  auto step = [&](std::size_t) {
    const auto batch = stream.next(cfg.batch_pairs);
    auto lg = batch_loss_and_grads<float>(batch, rp, gap);
    return std::pair<double, ParamSet<float>>{lg.loss, std::move(lg.grads)};
  };
  auto validate = [&] {
    double total = 0.0;
    constexpr std::size_t kChunk = 32;
    for (std::size_t start = 0; start < val_idx.size(); start += kChunk) {
      const std::size_t count = std::min(kChunk, val_idx.size() - start);
      std::vector<ImagePair> pairs(count);
      parallel_for(count, [&](std::size_t i) {
        const PairRecord& r = manifest.records[val_idx[start + i]];
        pairs[i] = make_pair_inputs(*cache->get(r.image), r, std::nullopt, 0);
      });
      std::vector<FeatureVector<float>> feats(2 * count);
      parallel_for(2 * count, [&](std::size_t i) {
        const ImageBuffer& img = i < count ? pairs[i].full : pairs[i - count].crop;
        feats[i] = extract_features<float>(img, rp.spec, rp.weights);
      });
      const std::span<const FeatureVector<float>> fs(feats);
      total += head_loss_and_grads<float>(stack_rows<float>(fs.subspan(0, count)),
                                          stack_rows<float>(fs.subspan(count, count)), rp.weights, gap,
                                          nullptr)
                   .loss;
    }
    return total / static_cast<double>(val_idx.size());
  };
  return run_sgd(rp, cfg, setup, step, validate);
}

// Fraction of a split's pairs for which the model scores the original above
// the crop.
inline double ordering_accuracy(const PairManifest& manifest, Split split, const Checkpoint& ck) {
  const auto idx = manifest.indices(split);
  if (idx.empty()) throw ConfigError("ordering_accuracy: split is empty");
  ImageCache cache;
  std::map<std::string, double> full_scores;
  for (std::size_t i : idx) full_scores.emplace(manifest.records[i].image, 0.0);
  std::vector<std::string> sources;
  for (const auto& [path, _] : full_scores) sources.push_back(path);
  std::vector<double> source_score(sources.size());
  parallel_for(sources.size(), [&](std::size_t i) {
    const auto img = cache.get(sources[i]);
    source_score[i] = score(extract_features<float>(resize_bilinear(*img, kNetInputSide, kNetInputSide),
                                                    ck.spec, ck.weights),
                            ck.weights);
  });
  for (std::size_t i = 0; i < sources.size(); ++i) full_scores[sources[i]] = source_score[i];
  std::vector<char> correct(idx.size());
  parallel_for(idx.size(), [&](std::size_t i) {
    const PairRecord& r = manifest.records[idx[i]];
    const auto img = cache.get(r.image);
    const double s = score(extract_features<float>(network_input(*img, r.crop), ck.spec, ck.weights), ck.weights);
    correct[i] = full_scores.at(r.image) > s;
  });
  return static_cast<double>(std::count(correct.begin(), correct.end(), 1)) / static_cast<double>(idx.size());
}

}  // namespace vfn
