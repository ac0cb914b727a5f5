#include "graspstn/commands.hpp"

#include <cctype>
#include <fstream>
#include <functional>

#include "graspstn/checkpoint.hpp"
#include "graspstn/cornell.hpp"
#include "graspstn/fixtures.hpp"
#include "graspstn/serialize.hpp"
#include "graspstn/trainer.hpp"

namespace graspstn {

namespace {

namespace fs = std::filesystem;

Rgb parse_hex_color(const std::string& hex) {
  if (hex.size() != 6) throw ContractError("color must be 6 hex digits");
  const auto byte = [&](int i) {
    return static_cast<std::uint8_t>(
        std::stoul(hex.substr(static_cast<std::size_t>(i), 2), nullptr, 16));
  };
  return Rgb{byte(0), byte(2), byte(4)};
}

/// Load samples from a preprocessed cache dir or a raw Cornell dir; when a
/// raw dir is parsed a cache is written next to the outputs so later runs
/// skip the raw files.
std::vector<GraspSample> load_samples(const fs::path& data_dir,
                                      const fs::path& cache_out,
                                      std::ostream& out) {
  if (fs::exists(data_dir / "manifest.json")) {
    out << "loading preprocessed cache: " << data_dir.string() << "\n";
    return load_cache(data_dir);
  }
  LoadResult lr = load_cornell(data_dir);
  out << "loaded " << lr.report.images_loaded << " images ("
      << lr.report.items_skipped << " items skipped, "
      << lr.report.rects_skipped << " rectangles skipped)\n";
  if (!cache_out.empty() && !lr.samples.empty()) {
    save_cache(cache_out, lr.samples);
    out << "wrote preprocessed cache: " << cache_out.string() << "\n";
  }
  return std::move(lr.samples);
}

MultiModalImage preprocess_inputs(const fs::path& image_path,
                                  const fs::path& depth_path) {
  ImageU8 rgb = read_png_rgb8(image_path);
  Tensor<float> depth;
  if (depth_path.extension() == ".txt") {
    depth = depth_from_pointcloud(depth_path, rgb.width, rgb.height);
  } else {
    depth = depth_from_png16(depth_path);
  }
  GraspSample s = preprocess(rgb, depth, {}, {}, image_path.stem().string());
  return std::move(s.image);
}

struct LoadedModel {
  ModelConfig cfg;
  GraspModel<float> model;
};

LoadedModel load_model_from_checkpoint(const fs::path& checkpoint_file) {
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_file);
  if (ckpt.manifest.model_config_json.empty()) {
    throw ArtifactMismatchError("checkpoint carries no model config");
  }
  ModelConfig cfg = ModelConfig::from_json_text(ckpt.manifest.model_config_json);
  if (cfg.hash() != ckpt.manifest.model_config_hash) {
    throw ArtifactMismatchError("checkpoint config hash mismatch");
  }
  LoadedModel lm{cfg, GraspModel<float>::build(cfg, 0)};
  apply_checkpoint(ckpt, lm.model.params);
  return lm;
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

/// Overlay PNG plus a sidecar JSON naming exactly what was drawn.
void write_overlay(const fs::path& png_path, const ImageU8& base,
                   const std::vector<std::pair<GraspRect, bool>>& rects,
                   Rgb plate, Rgb opening) {
  ImageU8 canvas = base;
  nlohmann::json drawn = nlohmann::json::array();
  for (const auto& [rect, is_winner] : rects) {
    const Rgb p = is_winner ? Rgb{255, 40, 40} : plate;
    draw_grasp_rect(canvas, rect, p, opening, is_winner ? 3 : 2);
    nlohmann::json e = rect_to_json(rect);
    e["winner"] = is_winner;
    drawn.push_back(e);
  }
  write_png_rgb8(png_path, canvas);
  nlohmann::json meta;
  meta["schema_version"] = 1;
  meta["image"] = png_path.filename().string();
  meta["rects"] = drawn;
  write_json_file(png_path.string() + ".meta.json", meta);
}

ImageU8 crop_view(const ImageU8& raw, int crop_x, int crop_y, int size) {
  ImageU8 out;
  out.width = size;
  out.height = size;
  out.channels = 3;
  out.pixels.resize(static_cast<std::size_t>(size) * size * 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(x, y, c) = raw.at(crop_x + x, crop_y + y, c);
      }
    }
  }
  return out;
}

template <typename T>
void train_typed(const TrainConfig& config,
                 const std::vector<GraspSample>& samples,
                 const std::vector<std::string>& phases, const fs::path& out_dir,
                 std::ostream& out) {
  auto model = GraspModel<T>::build(config.model, config.seed);
  std::ofstream log_file(out_dir / "train_log.jsonl", std::ios::trunc);
  TrainLogger logger(&log_file);

  const fs::path ckpt_path = out_dir / "checkpoint.ckpt";
  CheckpointManifest manifest;
  manifest.model_config_hash = config.model.hash();
  manifest.model_config_json = config.model.to_json_text();
  manifest.precision = config.precision;

  try {
    std::vector<Component> components = {Component::Stage1, Component::Stage2,
                                         Component::Stage3,
                                         Component::Classifier};
    if (config.model.with_baseline && config.steps_baseline > 0) {
      components.push_back(Component::Baseline);
    }
    for (Component c : components) {
      AdamOptimizer<T> opt(model.params, config.optim);
      LossHistory h = pretrain_component(model, c, samples, config, opt, &logger);
      if (!h.losses.empty()) {
        out << "pretrain " << component_name(c) << ": loss "
            << h.initial() << " -> " << h.final_loss() << "\n";
      }
    }
    TrainConfig ft = config;
    ft.finetune_phases = phases;
    AdamOptimizer<T> opt(model.params, config.optim);
    LossHistory h = finetune_back_to_front(model, samples, ft, opt, &logger);
    if (!h.losses.empty()) {
      out << "finetune: loss " << h.initial() << " -> " << h.final_loss()
          << "\n";
    }
  } catch (const NumericError&) {
    // keep what we had, marked as aborted, then surface the failure
    save_checkpoint(fs::path(ckpt_path.string() + ".aborted"), model.params,
                    manifest);
    throw;
  }

  save_checkpoint(ckpt_path, model.params, manifest);
  out << "wrote " << ckpt_path.string() << "\n";
}

}  // namespace

int cmd_validate_data(const fs::path& data_dir, std::ostream& out) {
  LoadResult lr = load_cornell(data_dir);
  out << "images: " << lr.report.images_loaded << "\n";
  out << "positives: " << lr.report.positives << "\n";
  out << "negatives: " << lr.report.negatives << "\n";
  out << "items skipped: " << lr.report.items_skipped << "\n";
  out << "rectangles skipped: " << lr.report.rects_skipped << "\n";
  for (const auto& w : lr.report.warnings) out << "warning: " << w << "\n";
  if (lr.samples.empty()) {
    out << "no valid samples found\n";
    return kExitInput;
  }
  return kExitOk;
}

int cmd_train(const fs::path& data_dir, const fs::path& config_file,
              const fs::path& out_dir,
              const std::optional<std::string>& phases_csv, std::ostream& out) {
  const std::string started = iso8601_now();
  TrainConfig config = TrainConfig::load_file(config_file);
  fs::create_directories(out_dir);

  std::vector<GraspSample> samples =
      load_samples(data_dir, out_dir / "cache", out);
  if (samples.empty()) throw IoError("no training samples in " + data_dir.string());

  std::vector<std::string> phases = config.finetune_phases;
  if (phases_csv.has_value()) {
    phases.clear();
    std::string token;
    for (char ch : *phases_csv) {
      if (ch == ',') {
        if (!token.empty()) phases.push_back(token);
        token.clear();
      } else if (!std::isspace(static_cast<unsigned char>(ch))) {
        token.push_back(ch);
      }
    }
    if (!token.empty()) phases.push_back(token);
  }

  if (config.precision == "float64") {
    train_typed<double>(config, samples, phases, out_dir, out);
  } else {
    train_typed<float>(config, samples, phases, out_dir, out);
  }

  RunManifest manifest;
  manifest.command = "train";
  manifest.config_hash = config.hash();
  manifest.dataset_hash = hash_dataset_dir(data_dir);
  manifest.seed = config.seed;
  manifest.outputs = {"checkpoint.ckpt", "train_log.jsonl"};
  manifest.started_at = started;
  manifest.finished_at = iso8601_now();
  write_run_manifest(out_dir, manifest);
  return kExitOk;
}

int cmd_eval(const fs::path& data_dir, const fs::path& checkpoint_file,
             std::uint64_t split_seed, const fs::path& out_dir,
             std::ostream& out) {
  const std::string started = iso8601_now();
  fs::create_directories(out_dir);
  LoadedModel lm = load_model_from_checkpoint(checkpoint_file);

  std::vector<GraspSample> samples = load_samples(data_dir, {}, out);
  if (samples.size() < 2) throw IoError("need at least 2 samples to split");

  DatasetSplit split = split_imagewise(samples, 0.8, split_seed);
  std::vector<GraspSample> test;
  for (std::size_t i : select_samples(samples, split.test_ids)) {
    test.push_back(samples[i]);
  }
  out << "split " << split.train_ids.size() << " train / " << test.size()
      << " test (seed " << split_seed << ")\n";

  EvalReport report = evaluate(lm.model, test);
  const std::string method = "Multi-Stage STN (this artifact)";
  write_json_file(out_dir / "report.json", eval_report_to_json(report, method));
  std::ofstream table(out_dir / "report.txt", std::ios::trunc);
  table << eval_report_table(report, method);
  out << eval_report_table(report, method);

  RunManifest manifest;
  manifest.command = "eval";
  manifest.config_hash = lm.cfg.hash();
  manifest.dataset_hash = hash_dataset_dir(data_dir);
  manifest.seed = split_seed;
  manifest.outputs = {"report.json", "report.txt"};
  manifest.started_at = started;
  manifest.finished_at = iso8601_now();
  write_run_manifest(out_dir, manifest);
  return kExitOk;
}

int cmd_detect(const DetectOptions& options, std::ostream& out) {
  const std::string started = iso8601_now();
  fs::create_directories(options.out_dir);
  LoadedModel lm = load_model_from_checkpoint(options.checkpoint);

  ImageU8 raw = read_png_rgb8(options.image);
  MultiModalImage image = preprocess_inputs(options.image, options.depth);
  NoGradGuard ng;
  DetectResult det = detect(lm.model, image);
  const auto& winner =
      det.trace.candidates[static_cast<std::size_t>(det.trace.winner)];

  write_json_file(options.out_dir / "grasp.json",
                  grasp_to_json(det.rect, winner.score));

  ImageU8 view = crop_view(raw, image.crop_x, image.crop_y,
                           MultiModalImage::kSize);
  write_overlay(options.out_dir / "overlay.png", view, {{det.rect, true}},
                parse_hex_color(options.plate_color),
                parse_hex_color(options.opening_color));
  out << "grasp: x=" << det.rect.x << " y=" << det.rect.y
      << " theta=" << det.rect.theta_deg << " w=" << det.rect.w
      << " h=" << det.rect.h << " score=" << winner.score << "\n";

  RunManifest manifest;
  manifest.command = "detect";
  manifest.config_hash = lm.cfg.hash();
  manifest.dataset_hash = fnv1a_hex(options.image.filename().string());
  manifest.seed = 0;
  manifest.outputs = {"grasp.json", "overlay.png", "overlay.png.meta.json"};
  manifest.started_at = started;
  manifest.finished_at = iso8601_now();
  write_run_manifest(options.out_dir, manifest);
  return kExitOk;
}

int cmd_trace(const DetectOptions& options, std::ostream& out) {
  const std::string started = iso8601_now();
  fs::create_directories(options.out_dir);
  LoadedModel lm = load_model_from_checkpoint(options.checkpoint);

  ImageU8 raw = read_png_rgb8(options.image);
  MultiModalImage image = preprocess_inputs(options.image, options.depth);
  NoGradGuard ng;
  DetectResult det = detect(lm.model, image);

  write_json_file(options.out_dir / "trace.json", trace_to_json(det.trace));

  const Rgb plate = parse_hex_color(options.plate_color);
  const Rgb opening = parse_hex_color(options.opening_color);
  ImageU8 view = crop_view(raw, image.crop_x, image.crop_y,
                           MultiModalImage::kSize);

  // the four panels of the per-stage candidate progression
  std::vector<std::pair<GraspRect, bool>> s1, s2, s3, win;
  for (int k = 0; k < static_cast<int>(det.trace.candidates.size()); ++k) {
    const auto& c = det.trace.candidates[static_cast<std::size_t>(k)];
    s1.emplace_back(c.rect_stage1, false);
    s2.emplace_back(c.rect_stage2, false);
    s3.emplace_back(c.rect_final, false);
  }
  win.emplace_back(det.rect, true);
  write_overlay(options.out_dir / "stage1_locations.png", view, s1, plate,
                opening);
  write_overlay(options.out_dir / "stage2_rotations.png", view, s2, plate,
                opening);
  write_overlay(options.out_dir / "stage3_refined.png", view, s3, plate,
                opening);
  write_overlay(options.out_dir / "winner.png", view, win, plate, opening);
  out << "trace written: 4 candidates, winner " << det.trace.winner << "\n";

  RunManifest manifest;
  manifest.command = "trace";
  manifest.config_hash = lm.cfg.hash();
  manifest.dataset_hash = fnv1a_hex(options.image.filename().string());
  manifest.seed = 0;
  manifest.outputs = {"trace.json", "stage1_locations.png",
                      "stage2_rotations.png", "stage3_refined.png",
                      "winner.png"};
  manifest.started_at = started;
  manifest.finished_at = iso8601_now();
  write_run_manifest(options.out_dir, manifest);
  return kExitOk;
}

int cmd_fixture(const fs::path& out_dir, int items, std::uint64_t seed,
                std::ostream& out) {
  FixtureOptions opt;
  opt.items = items;
  opt.seed = seed;
  auto written = write_fixture_dataset(out_dir, opt);
  out << "wrote " << written.size() << " fixture items to " << out_dir.string()
      << "\n";
  return kExitOk;
}

int run_command_catching(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ArtifactMismatchError& e) {
    err << "error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
}

}  // namespace graspstn
