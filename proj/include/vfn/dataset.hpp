#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vfn/error.hpp"
#include "vfn/geometry.hpp"
#include "vfn/image_io.hpp"
#include "vfn/imaging.hpp"
#include "vfn/parallel.hpp"
#include "vfn/random.hpp"
#include "vfn/ranker.hpp"

namespace vfn {

enum class Split : std::uint8_t { Train, Val };

inline std::string_view to_string(Split s) { return s == Split::Train ? "train" : "val"; }

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

// One ranking unit: the source image is preferred over this crop of it.
struct PairRecord {
  std::string image;
  CropRect crop;
  CropKind kind = CropKind::Border;
  double scale = 0.0;
  Split split = Split::Train;

  friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

struct PairManifest {
  int version = 1;
  std::uint64_t seed = 0;
  SamplerConfig sampler;
  double val_fraction = 0.19;
  std::size_t skipped = 0;  // undecodable or undersized inputs
  std::vector<PairRecord> records;

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [s](const PairRecord& r) { return r.split == s; }));
  }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].split == s) out.push_back(i);
    return out;
  }

  friend bool operator==(const PairManifest&, const PairManifest&) = default;
};

inline bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Image files directly inside dir, sorted by file name.
inline std::vector<std::string> list_images(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: '" + dir + "'");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  std::vector<std::string> out;
  for (const auto& n : names) out.push_back((fs::path(dir) / n).string());
  return out;
}

// Samples border and square crops for every decodable image in image_dir and
// assigns whole images to the train or validation split.
inline PairManifest mine_pairs(const std::string& image_dir, const SamplerConfig& sampler,
                               double val_fraction, std::uint64_t seed) {
  sampler.validate();
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw ConfigError("mine: val_fraction must be in [0,1)");
  const auto paths = list_images(image_dir);

  std::vector<std::optional<std::vector<CropCandidate>>> crops(paths.size());
  std::vector<std::string> failures(paths.size());
  parallel_for(paths.size(), [&](std::size_t i) {
    try {
      const ImageDims dims = load_image(paths[i]).dims();
      Rng rng(mix_seed(sampler.seed, i));
      crops[i] = sample_crops(dims, sampler, rng);
    } catch (const DecodeError& e) {
      failures[i] = e.what();
    } catch (const SizeError& e) {
      failures[i] = paths[i] + ": " + e.what();
    }
  });

  PairManifest m;
  m.seed = seed;
  m.sampler = sampler;
  m.val_fraction = val_fraction;
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (crops[i]) {
      usable.push_back(i);
    } else {
      ++m.skipped;
      std::cerr << "warning: skipping " << failures[i] << "\n";
    }
  }
  if (usable.size() < 2)
    throw IoError("mine: '" + image_dir + "' needs at least 2 decodable images, found " +
                  std::to_string(usable.size()));

  std::vector<std::size_t> order = usable;
  Rng split_rng(mix_seed(seed, 0x5b117));
  split_rng.shuffle(std::span<std::size_t>(order));
  const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * usable.size()));
  std::set<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));

  for (std::size_t i : usable) {
    const Split split = val.count(i) ? Split::Val : Split::Train;
    for (const CropCandidate& c : *crops[i]) m.records.push_back({paths[i], c.rect, c.kind, c.scale, split});
  }
  return m;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON persistence

inline nlohmann::json manifest_header(const PairManifest& m) {
  using nlohmann::json;
  return json{{"version", m.version},
              {"seed", m.seed},
              {"sampler",
               {{"scales", m.sampler.scales},
                {"num_square", m.sampler.num_square},
                {"perturb_frac", m.sampler.perturb_frac},
                {"seed", m.sampler.seed}}},
              {"val_fraction", m.val_fraction},
              {"skipped", m.skipped},
              {"counts", {{"train", m.count(Split::Train)}, {"val", m.count(Split::Val)}}}};
}

inline nlohmann::json to_json(const PairRecord& r) {
  return {{"image", r.image},
          {"crop", {r.crop.x, r.crop.y, r.crop.w, r.crop.h}},
          {"kind", to_string(r.kind)},
          {"scale", r.scale},
          {"split", to_string(r.split)}};
}

inline void write_manifest(const PairManifest& m, std::ostream& out) {
  out << manifest_header(m).dump() << '\n';
  for (const PairRecord& r : m.records) out << to_json(r).dump() << '\n';
}

inline void save_manifest(const PairManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_manifest(m, out);
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline PairManifest read_manifest(std::istream& in) {
  using nlohmann::json;
  PairManifest m;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("manifest: missing header line");
  try {
    const json h = json::parse(line);
    m.version = h.at("version").get<int>();
    if (m.version != 1) throw FormatError("manifest: unsupported version " + std::to_string(m.version));
    m.seed = h.at("seed").get<std::uint64_t>();
    const json& s = h.at("sampler");
    m.sampler.scales = s.at("scales").get<std::vector<double>>();
    m.sampler.num_square = s.at("num_square").get<int>();
    m.sampler.perturb_frac = s.at("perturb_frac").get<double>();
    m.sampler.seed = s.at("seed").get<std::uint64_t>();
    m.val_fraction = h.at("val_fraction").get<double>();
    m.skipped = h.at("skipped").get<std::size_t>();

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json r = json::parse(line);
      const auto crop = r.at("crop").get<std::vector<int>>();
      if (crop.size() != 4) throw FormatError("manifest line " + std::to_string(line_no) + ": crop needs 4 values");
      m.records.push_back({r.at("image").get<std::string>(),
                           {crop[0], crop[1], crop[2], crop[3]},
                           parse_crop_kind(r.at("kind").get<std::string>()),
                           r.at("scale").get<double>(),
                           parse_split(r.at("split").get<std::string>())});
    }
    const json& counts = h.at("counts");
    if (counts.at("train").get<std::size_t>() != m.count(Split::Train) ||
        counts.at("val").get<std::size_t>() != m.count(Split::Val))
      throw FormatError("manifest: header counts do not match records");
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return m;
}

inline PairManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  return read_manifest(in);
}

// ---------------------------------------------------------------------------
// Batches

// Cycles through a split's records in an order reshuffled every epoch with
// seed epoch_seed + epoch.
class BatchCursor {
 public:
  BatchCursor(std::vector<std::size_t> records, std::uint64_t epoch_seed)
      : records_(std::move(records)), epoch_seed_(epoch_seed) {
    if (records_.empty()) throw ConfigError("batch cursor: split is empty");
    reshuffle();
  }

  struct Slot {
    std::size_t record;
    std::uint64_t epoch;
    std::size_t position;
  };

  Slot next() {
    if (pos_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    const Slot s{order_[pos_], epoch_, pos_};
    ++pos_;
    return s;
  }

  std::uint64_t epoch() const { return epoch_; }

 private:
  void reshuffle() {
    order_ = records_;
    Rng rng(mix_seed(epoch_seed_ + epoch_));
    rng.shuffle(std::span<std::size_t>(order_));
    pos_ = 0;
  }

  std::vector<std::size_t> records_;
  std::vector<std::size_t> order_;
  std::uint64_t epoch_seed_;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
};

// Decodes source images once and serves resized (and optionally augmented)
// network inputs. Thread-safe.
class ImageCache {
 public:
  std::shared_ptr<const ImageBuffer> get(const std::string& path) {
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(path); it != cache_.end()) return it->second;
    }
    auto img = std::make_shared<const ImageBuffer>(load_image(path));
    std::lock_guard lock(mutex_);
    return cache_.emplace(path, std::move(img)).first->second;
  }

 private:
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const ImageBuffer>> cache_;
};

// Builds the (original, crop) network inputs for a record. Original and crop
// receive independent augmentation draws.
inline ImagePair make_pair_inputs(const ImageBuffer& source, const PairRecord& r,
                                  const std::optional<AugmentConfig>& aug, std::uint64_t aug_seed) {
  ImagePair p{resize_bilinear(source, kNetInputSide, kNetInputSide), network_input(source, r.crop)};
  if (aug) {
    Rng full_rng(mix_seed(aug_seed, 0));
    Rng crop_rng(mix_seed(aug_seed, 1));
    p.full = augment(p.full, *aug, full_rng);
    p.crop = augment(p.crop, *aug, crop_rng);
  }
  return p;
}

// Deterministic stream of input pairs from one split. Training batches are
// augmented; validation batches are not.
class BatchStream {
 public:
  BatchStream(const PairManifest& manifest, Split split, std::uint64_t epoch_seed,
              std::optional<AugmentConfig> aug, std::shared_ptr<ImageCache> cache = nullptr)
      : manifest_(manifest),
        cursor_(manifest.indices(split), epoch_seed),
        aug_(split == Split::Train ? std::move(aug) : std::nullopt),
        cache_(cache ? std::move(cache) : std::make_shared<ImageCache>()) {
    if (aug_) aug_->validate();
  }

  std::vector<ImagePair> next(std::size_t batch_pairs) {
    std::vector<BatchCursor::Slot> slots(batch_pairs);
    for (auto& s : slots) s = cursor_.next();
    std::vector<std::optional<ImagePair>> pairs(batch_pairs);
    parallel_for(batch_pairs, [&](std::size_t i) { pairs[i] = try_build(slots[i]); });

    std::vector<ImagePair> out;
    out.reserve(batch_pairs);
    std::size_t failures = 0;
    for (std::size_t i = 0; i < batch_pairs; ++i) {
      if (pairs[i]) {
        out.push_back(std::move(*pairs[i]));
        continue;
      }
      // Substitute the next record in stream order.
      for (;;) {
        if (++failures > manifest_.records.size())
          throw IoError("batch: no decodable records left in split");
        const auto s = cursor_.next();
        if (auto p = try_build(s)) {
          out.push_back(std::move(*p));
          break;
        }
      }
    }
    return out;
  }

 private:
  std::optional<ImagePair> try_build(const BatchCursor::Slot& s) {
    const PairRecord& r = manifest_.records[s.record];
    try {
      const auto img = cache_->get(r.image);
      const std::uint64_t aug_seed = mix_seed(aug_ ? aug_->seed : 0, (s.epoch << 32) ^ s.position);
      return make_pair_inputs(*img, r, aug_, aug_seed);
    } catch (const Error& e) {
      std::cerr << "warning: batch: " << e.what() << "\n";
      return std::nullopt;
    }
  }

  const PairManifest& manifest_;
  BatchCursor cursor_;
  std::optional<AugmentConfig> aug_;
  std::shared_ptr<ImageCache> cache_;
};

}  // namespace vfn
