#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "vfn/dataset.hpp"
#include "vfn/image_io.hpp"

using namespace vfn;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vfn_dataset_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_images(const fs::path& dir, int n, std::uint64_t seed) {
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    ImageBuffer img(40 + static_cast<int>(rng.below(60)), 40 + static_cast<int>(rng.below(60)));
    for (float& v : img.data()) v = static_cast<float>(rng.below(256)) / 255.0f;
    save_png(img, (dir / ("img_" + std::to_string(i) + ".png")).string());
  }
}

}  // namespace

TEST(Mine, FourteenRecordsPerImage) {
  const auto dir = fresh_dir("count");
  write_images(dir, 6, 1);
  const PairManifest m = mine_pairs(dir.string(), SamplerConfig{}, 0.2, 3);
  EXPECT_EQ(m.records.size(), 6u * 14u);
  std::map<std::string, int> per_image;
  for (const auto& r : m.records) {
    ++per_image[r.image];
    EXPECT_TRUE(is_inside(r.crop, load_image(r.image).dims()));
  }
  EXPECT_EQ(per_image.size(), 6u);
  for (const auto& [_, n] : per_image) EXPECT_EQ(n, 14);
}

TEST(Mine, SplitsAreByWholeImage) {
  const auto dir = fresh_dir("split");
  write_images(dir, 10, 2);
  const PairManifest m = mine_pairs(dir.string(), SamplerConfig{}, 0.3, 4);
  std::set<std::string> train, val;
  for (const auto& r : m.records) (r.split == Split::Train ? train : val).insert(r.image);
  EXPECT_EQ(val.size(), 3u);
  EXPECT_EQ(train.size(), 7u);
  for (const auto& img : val) EXPECT_EQ(train.count(img), 0u);

  const PairManifest all = mine_pairs(dir.string(), SamplerConfig{}, 0.0, 4);
  EXPECT_EQ(all.count(Split::Val), 0u);
  EXPECT_EQ(all.count(Split::Train), 140u);
}

TEST(Mine, IsDeterministic) {
  const auto dir = fresh_dir("det");
  write_images(dir, 5, 3);
  EXPECT_EQ(mine_pairs(dir.string(), SamplerConfig{}, 0.2, 9), mine_pairs(dir.string(), SamplerConfig{}, 0.2, 9));
}

TEST(Mine, SkipsUndecodableAndUndersized) {
  const auto dir = fresh_dir("skip");
  write_images(dir, 3, 4);
  std::ofstream(dir / "broken.png") << "definitely not a png";
  save_png(ImageBuffer(20, 50), (dir / "tiny.png").string());
  const PairManifest m = mine_pairs(dir.string(), SamplerConfig{}, 0.0, 1);
  EXPECT_EQ(m.skipped, 2u);
  EXPECT_EQ(m.records.size(), 3u * 14u);
}

TEST(Mine, NeedsTwoUsableImages) {
  const auto dir = fresh_dir("few");
  write_images(dir, 1, 5);
  EXPECT_THROW(mine_pairs(dir.string(), SamplerConfig{}, 0.0, 1), IoError);
  EXPECT_THROW(mine_pairs(dir.string(), SamplerConfig{}, 1.0, 1), ConfigError);
}

TEST(Manifest, RoundTrip) {
  const auto dir = fresh_dir("manifest");
  write_images(dir, 4, 6);
  const PairManifest m = mine_pairs(dir.string(), SamplerConfig{}, 0.25, 7);
  save_manifest(m, (dir / "pairs.jsonl").string());
  EXPECT_EQ(load_manifest((dir / "pairs.jsonl").string()), m);
}

TEST(Manifest, HeaderCountMismatchIsRejected) {
  PairManifest m;
  m.records.push_back({"a.png", {0, 0, 10, 10}, CropKind::Border, 0.5, Split::Train});
  m.records.push_back({"b.png", {1, 2, 10, 10}, CropKind::Square, 0.6, Split::Val});
  std::stringstream ss;
  write_manifest(m, ss);
  std::string text = ss.str();
  std::istringstream ok(text);
  EXPECT_EQ(read_manifest(ok), m);

  // Drop the last record; the header still claims one val pair.
  text.erase(text.rfind('{'));
  std::istringstream short_in(text);
  EXPECT_THROW(read_manifest(short_in), FormatError);

  std::istringstream garbage("{not json\n");
  EXPECT_THROW(read_manifest(garbage), FormatError);
  std::istringstream empty("");
  EXPECT_THROW(read_manifest(empty), FormatError);
}

TEST(BatchCursor, EveryEpochVisitsEveryRecordOnce) {
  BatchCursor cursor({4, 9, 11}, 5);
  for (std::uint64_t epoch = 0; epoch < 20; ++epoch) {
    std::multiset<std::size_t> seen;
    for (int i = 0; i < 3; ++i) {
      const auto s = cursor.next();
      EXPECT_EQ(s.epoch, epoch);
      EXPECT_EQ(s.position, static_cast<std::size_t>(i));
      seen.insert(s.record);
    }
    EXPECT_EQ(seen, (std::multiset<std::size_t>{4, 9, 11}));
  }
  EXPECT_THROW(BatchCursor({}, 1), ConfigError);
}

TEST(BatchStream, ReproducibleAndValUnaugmented) {
  const auto dir = fresh_dir("stream");
  write_images(dir, 5, 8);
  const PairManifest m = mine_pairs(dir.string(), SamplerConfig{}, 0.2, 2);
  AugmentConfig aug;
  aug.seed = 11;

  BatchStream a(m, Split::Train, 3, aug), b(m, Split::Train, 3, aug);
  for (int step = 0; step < 3; ++step) {
    const auto pa = a.next(7), pb = b.next(7);
    ASSERT_EQ(pa.size(), 7u);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      EXPECT_EQ(pa[i].full, pb[i].full);
      EXPECT_EQ(pa[i].crop, pb[i].crop);
      EXPECT_EQ(pa[i].full.width(), kNetInputSide);
    }
  }

  // Validation inputs equal the plain resized pair regardless of the augment config.
  BatchStream val(m, Split::Val, 3, aug);
  const auto idx = m.indices(Split::Val);
  BatchCursor cursor(idx, 3);
  for (const auto& p : val.next(5)) {
    const PairRecord& r = m.records[cursor.next().record];
    const ImagePair plain = make_pair_inputs(load_image(r.image), r, std::nullopt, 0);
    EXPECT_EQ(p.full, plain.full);
    EXPECT_EQ(p.crop, plain.crop);
  }
}
