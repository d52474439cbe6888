#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vfn/cli.hpp"

using namespace vfn;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "vfn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  testing::internal::CaptureStderr();
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out);
  return {code, out.str(), testing::internal::GetCapturedStderr()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vfn_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string tiny_model(const fs::path& dir) {
  NetworkSpec spec;
  spec.backbone = BackboneSpec::toy(4, 6, 4);
  const auto path = (dir / "m.vfn").string();
  save_checkpoint({kCheckpointVersion, spec, init_params<float>(spec, 1).weights, 0, 0.0}, path);
  return path;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({"synth", "--out", "x", "--bogus"}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"mine"}).code, 2);
}

TEST(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("bench"), std::string::npos);
}

TEST(Cli, SmallImageIsAStructuredSizeError) {
  const auto dir = fresh_dir("small");
  save_png(ImageBuffer(20, 40), (dir / "small.png").string());
  const auto r = run({"crop", (dir / "small.png").string(), "--model", tiny_model(dir)});
  EXPECT_EQ(r.code, 1);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j.at("error"), "size");
}

TEST(Cli, MissingFilesAreStructuredErrors) {
  const auto dir = fresh_dir("missing");
  const auto r = run({"crop", (dir / "nope.png").string(), "--model", tiny_model(dir)});
  EXPECT_EQ(r.code, 1);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j.at("error"), "decode");
  EXPECT_EQ(j.at("path"), (dir / "nope.png").string());
  EXPECT_EQ(run({"train", (dir / "none.jsonl").string(), "--out", (dir / "m2.vfn").string()}).code, 1);
}

TEST(Cli, BenchNeedsExactlyOneScorer) {
  const auto dir = fresh_dir("bench");
  std::ofstream(dir / "a.json") << "[]";
  EXPECT_EQ(run({"bench", (dir / "a.json").string()}).code, 1);
  EXPECT_EQ(run({"bench", (dir / "a.json").string(), "--constant", "--model", "m.vfn"}).code, 1);
}

TEST(Cli, SynthIsByteReproducible) {
  const auto a = fresh_dir("synth_a"), b = fresh_dir("synth_b");
  ASSERT_EQ(run({"synth", "--n", "6", "--seed", "7", "--out", a.string()}).code, 0);
  ASSERT_EQ(run({"synth", "--n", "6", "--seed", "7", "--out", b.string()}).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
  }
  EXPECT_EQ(files, 6u + 3u);
}

TEST(Cli, CropHeatmapAndPanoWriteOutputs) {
  const auto dir = fresh_dir("tools");
  const auto model = tiny_model(dir);
  save_png(ImageBuffer(96, 64, 0.3f), (dir / "img.png").string());
  save_png(ImageBuffer(192, 48, 0.6f), (dir / "wide.png").string());

  auto r = run({"crop", (dir / "img.png").string(), "--model", model, "--grid", "2x2", "--out",
                (dir / "crop.png").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto crop = nlohmann::json::parse(r.out);
  EXPECT_EQ(load_image((dir / "crop.png").string()).width(), crop.at("rect")[2].get<int>());
  EXPECT_TRUE(fs::exists(dir / "crop.json"));

  r = run({"heatmap", (dir / "img.png").string(), "--model", model, "--grid", "2", "--out",
           (dir / "heat.png").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_image((dir / "heat.png").string()).dims(), (ImageDims{96, 64}));

  r = run({"pano", (dir / "wide.png").string(), "--model", model, "--heights", "1.0", "--aspects", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GT(nlohmann::json::parse(r.out).at("candidates").get<int>(), 1);
}
