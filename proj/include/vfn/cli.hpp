#pragma once

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vfn/checkpoint.hpp"
#include "vfn/dataset.hpp"
#include "vfn/error.hpp"
#include "vfn/eval.hpp"
#include "vfn/features.hpp"
#include "vfn/geometry.hpp"
#include "vfn/image_io.hpp"
#include "vfn/imaging.hpp"
#include "vfn/search.hpp"
#include "vfn/synth.hpp"
#include "vfn/training.hpp"

namespace vfn::cli {

using nlohmann::json;

namespace detail {

inline std::atomic<bool>& interrupted() {
  static std::atomic<bool> flag{false};
  return flag;
}

extern "C" inline void on_sigint(int) { interrupted().store(true); }

// "5x5" or "5" (square grid).
inline Grid parse_grid(const std::string& s) {
  int gx = 0, gy = 0;
  char sep = 0;
  std::istringstream in(s);
  in >> gx;
  if (in >> sep) {
    if (sep != 'x' || !(in >> gy)) throw ConfigError("grid must look like 5x5, got '" + s + "'");
  } else {
    gy = gx;
  }
  if (gx < 1 || gy < 1) throw ConfigError("grid sides must be >= 1");
  return {gx, gy};
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw IoError("cannot write '" + path + "'");
}

inline std::string sibling(const std::string& path, const std::string& ext) {
  return std::filesystem::path(path).replace_extension(ext).string();
}

inline json search_json(const SearchConfig& s) {
  return {{"scales", s.scales}, {"grid", {s.grid.gx, s.grid.gy}}};
}

inline json spec_json(const NetworkSpec& s) {
  json layers = json::array();
  for (const auto& l : s.backbone.layers)
    layers.push_back({{"type", to_string(l.type)},
                      {"out_channels", l.out_channels},
                      {"kernel", l.kernel},
                      {"stride", l.stride},
                      {"pad", l.pad}});
  return {{"backbone", s.backbone.trainable() ? "toy" : "fixed"},
          {"layers", layers},
          {"pooling", to_string(s.pooling)},
          {"spp_sizes", s.spp_sizes},
          {"feature_dim", s.feature_dim()}};
}

inline void print_error(const Error& e) {
  json j{{"error", e.kind()}, {"message", e.what()}};
  if (const auto* d = dynamic_cast<const DecodeError*>(&e)) j["path"] = d->path();
  std::cerr << j.dump() << '\n';
}

}  // namespace detail

// Scores every candidate identically; the benchmark's baseline.
struct ConstantScorer {
  double operator()(const ImageBuffer&, const CropRect&) const { return 0.0; }
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout) {
  CLI::App app{"vfn: learned view finding (crop ranking, search, heatmaps, benchmarks)"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Progress messages on stderr");

  // Values shared by several subcommands.
  std::uint64_t seed = 0;
  std::string out_path;
  std::vector<double> scales;
  std::string grid_text = "5x5";
  std::string image_path, checkpoint_path;

  auto add_search_flags = [&](CLI::App* sub) {
    sub->add_option("--scales", scales, "Window scales (comma separated)")->delimiter(',');
    sub->add_option("--grid", grid_text, "Origin lattice, e.g. 5x5")->capture_default_str();
  };
  auto search_config = [&] {
    SearchConfig s;
    if (!scales.empty()) s.scales = scales;
    s.grid = detail::parse_grid(grid_text);
    for (double v : s.scales)
      if (!(v > 0.0 && v <= 1.0)) throw ConfigError("window scales must lie in (0, 1]");
    return s;
  };

  // synth
  auto* synth = app.add_subcommand("synth", "Write the synthetic composition corpus");
  std::size_t synth_n = 300;
  synth->add_option("--n", synth_n, "Number of images (one third become benchmark scenes)")->capture_default_str();
  synth->add_option("--seed", seed, "Random seed")->capture_default_str();
  synth->add_option("--out", out_path, "Output directory")->required();

  // mine
  auto* mine = app.add_subcommand("mine", "Mine (image, crop) ranking pairs from a directory");
  std::string image_dir;
  SamplerConfig sampler;
  double val_frac = 0.19;
  mine->add_option("dir", image_dir, "Directory of source images")->required();
  mine->add_option("--scales", sampler.scales, "Crop scales (comma separated)")->delimiter(',');
  mine->add_option("--squares", sampler.num_square, "Square crops per scale")->capture_default_str();
  mine->add_option("--perturb", sampler.perturb_frac, "Perturbation fraction")->capture_default_str();
  mine->add_option("--val-frac", val_frac, "Fraction of images held out for validation")->capture_default_str();
  mine->add_option("--seed", seed, "Random seed")->capture_default_str();
  mine->add_option("--out", out_path, "Manifest path (JSONL)")->required();

  // train
  auto* trn = app.add_subcommand("train", "Train the ranker on a manifest");
  std::string manifest_path, backbone = "fixed", spp = "max";
  int channels = 16;
  std::optional<std::size_t> iters, batch;
  std::optional<double> lr;
  std::size_t aug_variants = 4;
  trn->add_option("manifest", manifest_path, "Pair manifest (JSONL)")->required();
  trn->add_option("--backbone", backbone, "fixed (frozen random, head only) or toy (end to end)")
      ->check(CLI::IsMember({"fixed", "toy"}))
      ->capture_default_str();
  trn->add_option("--spp", spp, "Pooling: off (flatten), max or avg")
      ->check(CLI::IsMember({"off", "max", "avg"}))
      ->capture_default_str();
  trn->add_option("--channels", channels, "Channels of the last conv layer")->capture_default_str();
  trn->add_option("--iters", iters, "Iterations (schedule scaled to fit)");
  trn->add_option("--lr", lr, "Initial learning rate (drops 5x at 2/3 of the run)");
  trn->add_option("--batch", batch, "Pairs per batch");
  trn->add_option("--aug-variants", aug_variants, "Cached augmented variants per input (fixed backbone)")
      ->capture_default_str();
  trn->add_option("--seed", seed, "Random seed")->capture_default_str();
  trn->add_option("--out", out_path, "Checkpoint path; .csv and .json siblings hold the curve and config")
      ->required();

  // crop
  auto* crp = app.add_subcommand("crop", "Best crop of an image");
  crp->add_option("image", image_path, "Input image")->required();
  crp->add_option("--model", checkpoint_path, "Checkpoint")->required();
  add_search_flags(crp);
  crp->add_option("--out", out_path, "Cropped PNG; a .json sibling holds the result");

  // heatmap
  auto* hm = app.add_subcommand("heatmap", "Composition heatmap of an image");
  double blur = -1.0;
  hm->add_option("image", image_path, "Input image")->required();
  hm->add_option("--model", checkpoint_path, "Checkpoint")->required();
  add_search_flags(hm);
  hm->add_option("--blur", blur, "Gaussian sigma in pixels (default 2% of the diagonal)");
  hm->add_option("--out", out_path, "Heatmap PNG")->required();

  // pano
  auto* pano = app.add_subcommand("pano", "Recommend a view in a wide image");
  PanoConfig pano_cfg;
  pano->add_option("image", image_path, "Input image")->required();
  pano->add_option("--model", checkpoint_path, "Checkpoint")->required();
  pano->add_option("--heights", pano_cfg.height_fracs, "Window heights as fractions of the image height")
      ->delimiter(',');
  pano->add_option("--aspects", pano_cfg.aspects, "Window aspect ratios (w/h)")->delimiter(',');
  pano->add_option("--stride", pano_cfg.stride_frac, "Stride as a fraction of the window width")
      ->capture_default_str();
  pano->add_option("--out", out_path, "Recommended view PNG");

  // bench
  auto* bench = app.add_subcommand("bench", "Sliding-window benchmark against annotated crops");
  std::string annotations_path;
  double alpha = 0.75;
  bool constant = false, no_gt = false;
  bench->add_option("annotations", annotations_path, "Annotation JSON")->required();
  bench->add_option("--model", checkpoint_path, "Checkpoint");
  bench->add_flag("--constant", constant, "Constant scorer baseline instead of a model");
  add_search_flags(bench);
  bench->add_option("--alpha", alpha, "IoU threshold for alpha-recall")->capture_default_str();
  bench->add_flag("--no-gt", no_gt, "Do not add the ground truth as a candidate");
  bench->add_option("--out", out_path, "Report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, std::cerr);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, std::cerr);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return 2;
  }

  auto log = [&](const std::string& msg) {
    if (verbose) std::cerr << msg << '\n';
  };

  try {
    if (*synth) {
      const auto corpus = synth::write_corpus(out_path, synth_n, seed);
      const json cfg{{"command", "synth"}, {"n", synth_n}, {"seed", seed},
                     {"train", corpus.train_images.size()}, {"bench", corpus.bench_images.size()}};
      synth::write_json(cfg, std::filesystem::path(out_path) / "config.json");
      out << cfg.dump() << '\n';
    } else if (*mine) {
      sampler.seed = seed;
      const auto m = mine_pairs(image_dir, sampler, val_frac, seed);
      save_manifest(m, out_path);
      out << json{{"manifest", out_path},
                  {"train", m.count(Split::Train)},
                  {"val", m.count(Split::Val)},
                  {"skipped", m.skipped}}
                 .dump()
          << '\n';
    } else if (*trn) {
      const PairManifest m = load_manifest(manifest_path);
      TrainConfig cfg = iters ? TrainConfig::scaled(*iters) : TrainConfig{};
      if (lr) {
        cfg.lr_initial = *lr;
        cfg.lr_after = *lr / 5.0;
      }
      if (batch) cfg.batch_pairs = *batch;
      cfg.seed = seed;
      NetworkSpec spec;
      spec.backbone = BackboneSpec::toy(16, 32, channels, backbone == "toy" ? BackboneKind::Toy : BackboneKind::Fixed);
      spec.pooling = parse_pooling(spp);
      spec.validate();
      TrainSetup setup;
      setup.augment.seed = mix_seed(seed, 0xa06);
      setup.aug_variants = aug_variants;
      setup.should_stop = [] { return detail::interrupted().load(); };
      setup.on_validate = [&](const CurvePoint& p) {
        char line[128];
        std::snprintf(line, sizeof line, "iter %zu train %.5f val %.5f", p.iteration, p.train_loss, p.val_loss);
        log(line);
      };
      const json config{{"command", "train"},
                        {"manifest", manifest_path},
                        {"seed", seed},
                        {"network", detail::spec_json(spec)},
                        {"lr_initial", cfg.lr_initial},
                        {"lr_after", cfg.lr_after},
                        {"lr_switch_iter", cfg.lr_switch_iter},
                        {"momentum", cfg.momentum},
                        {"batch_pairs", cfg.batch_pairs},
                        {"total_iters", cfg.total_iters},
                        {"validate_every", cfg.validate_every},
                        {"gap", cfg.gap},
                        {"augment",
                         {{"flip_prob", setup.augment.flip_prob},
                          {"brightness_delta_max", setup.augment.brightness_delta_max},
                          {"contrast", {setup.augment.contrast_lo, setup.augment.contrast_hi}},
                          {"seed", setup.augment.seed},
                          {"variants", aug_variants}}}};
      detail::interrupted().store(false);
      auto* previous = std::signal(SIGINT, detail::on_sigint);
      TrainResult result;
      try {
        result = train(m, cfg, init_params<float>(spec, seed), setup);
      } catch (const TrainingAborted& e) {
        std::signal(SIGINT, previous);
        if (e.last_good()) save_checkpoint(*e.last_good(), out_path);
        throw;
      }
      std::signal(SIGINT, previous);
      save_checkpoint(result.best, out_path);
      std::ostringstream csv;
      write_curve_csv(result.curve, csv);
      detail::write_text(detail::sibling(out_path, ".csv"), csv.str());
      detail::write_text(detail::sibling(out_path, ".json"), config.dump(1) + "\n");
      out << json{{"checkpoint", out_path},
                  {"iteration", result.best.iteration},
                  {"val_loss", result.best.validation_loss},
                  {"interrupted", result.interrupted}}
                 .dump()
          << '\n';
      if (result.interrupted) return 130;
    } else if (*crp) {
      const SearchConfig s = search_config();
      const ImageBuffer img = load_image(image_path);
      require_min_dims(img.dims());
      const ModelScorer scorer(load_checkpoint(checkpoint_path));
      const ScoredCrop best = best_crop(img, scorer, s);
      const json result{{"image", image_path}, {"model", checkpoint_path}, {"search", detail::search_json(s)},
                        {"rect", rect_json(best.rect)}, {"score", best.score}};
      if (!out_path.empty()) {
        save_png(extract_crop(img, best.rect), out_path);
        detail::write_text(detail::sibling(out_path, ".json"), result.dump(1) + "\n");
      }
      out << result.dump() << '\n';
    } else if (*hm) {
      const SearchConfig s = search_config();
      const ImageBuffer img = load_image(image_path);
      require_min_dims(img.dims());
      const ModelScorer scorer(load_checkpoint(checkpoint_path));
      const double sigma = blur >= 0.0 ? blur : default_blur_radius(img.dims());
      const ScalarField field = heatmap(img, scorer, s, sigma);
      save_png(render_heatmap(img, field), out_path);
      const json result{{"image", image_path}, {"model", checkpoint_path}, {"search", detail::search_json(s)},
                        {"blur", sigma}, {"heatmap", out_path}};
      detail::write_text(detail::sibling(out_path, ".json"), result.dump(1) + "\n");
      out << result.dump() << '\n';
    } else if (*pano) {
      const ImageBuffer img = load_image(image_path);
      require_min_dims(img.dims());
      const ModelScorer scorer(load_checkpoint(checkpoint_path));
      const PanoResult r = pano_scan(img, scorer, pano_cfg);
      const json result{{"image", image_path},
                        {"model", checkpoint_path},
                        {"heights", pano_cfg.height_fracs},
                        {"aspects", pano_cfg.aspects},
                        {"stride", pano_cfg.stride_frac},
                        {"candidates", r.candidates},
                        {"rect", rect_json(r.best.rect)},
                        {"score", r.best.score}};
      if (!out_path.empty()) {
        save_png(extract_crop(img, r.best.rect), out_path);
        detail::write_text(detail::sibling(out_path, ".json"), result.dump(1) + "\n");
      }
      out << result.dump() << '\n';
    } else if (*bench) {
      if (constant == !checkpoint_path.empty()) throw ConfigError("bench: give exactly one of --model or --constant");
      BenchConfig cfg;
      cfg.search = search_config();
      cfg.alpha = alpha;
      cfg.include_ground_truth = !no_gt;
      const auto annotations = load_annotations(annotations_path);
      const BenchReport report = constant ? run_benchmark(annotations, ConstantScorer{}, cfg)
                                          : run_benchmark(annotations, ModelScorer(load_checkpoint(checkpoint_path)), cfg);
      json doc = to_json(report);
      doc["config"]["annotations"] = annotations_path;
      doc["config"]["model"] = constant ? json("constant") : json(checkpoint_path);
      if (!out_path.empty()) detail::write_text(out_path, doc.dump(1) + "\n");
      out << to_text(report);
    }
  } catch (const Error& e) {
    detail::print_error(e);
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    detail::print_error(IoError(e.what()));
    return 1;
  } catch (const json::exception& e) {
    detail::print_error(FormatError(e.what()));
    return 1;
  }
  return 0;
}

}  // namespace vfn::cli
