#include "CLI11.hpp"

#include <iostream>

#include "graspstn/commands.hpp"
#include "graspstn/serialize.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Classification-based robotic grasp detection with a "
               "multi-stage spatial transformer pipeline"};
  app.set_version_flag("--version", graspstn::kArtifactVersion);
  app.require_subcommand(1);

  std::string data_dir, config_file, out_dir, checkpoint, image, depth;
  std::string phases;
  bool phases_set = false;
  std::uint64_t split_seed = 42;
  std::uint64_t fixture_seed = 7;
  int fixture_items = 8;
  graspstn::DetectOptions detect_opt;

  auto* validate = app.add_subcommand(
      "validate-data", "Scan a Cornell-format directory and report counts");
  validate->add_option("--data", data_dir, "dataset directory")->required();

  auto* train = app.add_subcommand(
      "train", "Pretrain all pipeline blocks, then fine-tune back to front");
  train->add_option("--data", data_dir, "dataset or cache directory")
      ->required();
  train->add_option("--config", config_file, "training config JSON")
      ->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train
      ->add_option("--phases", phases,
                   "comma-separated fine-tune phases (empty = pretrain only)")
      ->trigger_on_parse()
      ->each([&](const std::string&) { phases_set = true; });

  auto* eval = app.add_subcommand(
      "eval", "Evaluate a checkpoint on the seeded 4:1 image-wise test split");
  eval->add_option("--data", data_dir, "dataset or cache directory")
      ->required();
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--split", split_seed, "split seed");
  eval->add_option("--out", out_dir, "output directory")->required();

  auto add_detect_flags = [&](CLI::App* cmd) {
    cmd->add_option("--image", image, "RGB PNG (at least 400x400)")
        ->required();
    cmd->add_option("--depth", depth,
                    "point-cloud .txt or 16-bit depth .png")
        ->required();
    cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    cmd->add_option("--out", out_dir, "output directory")->required();
    cmd->add_option("--plate-color", detect_opt.plate_color,
                    "hex RGB for plate edges");
    cmd->add_option("--opening-color", detect_opt.opening_color,
                    "hex RGB for opening edges");
  };
  auto* detect = app.add_subcommand(
      "detect", "Detect the best grasp in one image, write JSON + overlay");
  add_detect_flags(detect);
  auto* trace = app.add_subcommand(
      "trace", "Per-stage candidate trace: JSON plus 4 overlay panels");
  add_detect_flags(trace);

  auto* fixture = app.add_subcommand(
      "fixture", "Write a synthetic Cornell-format fixture dataset");
  fixture->add_option("--out", out_dir, "output directory")->required();
  fixture->add_option("--items", fixture_items, "number of items");
  fixture->add_option("--seed", fixture_seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  return graspstn::run_command_catching(
      [&]() -> int {
        if (validate->parsed()) {
          return graspstn::cmd_validate_data(data_dir, std::cout);
        }
        if (train->parsed()) {
          std::optional<std::string> phases_opt;
          if (phases_set) phases_opt = phases;
          return graspstn::cmd_train(data_dir, config_file, out_dir,
                                     phases_opt, std::cout);
        }
        if (eval->parsed()) {
          return graspstn::cmd_eval(data_dir, checkpoint, split_seed, out_dir,
                                    std::cout);
        }
        if (detect->parsed() || trace->parsed()) {
          detect_opt.image = image;
          detect_opt.depth = depth;
          detect_opt.checkpoint = checkpoint;
          detect_opt.out_dir = out_dir;
          return detect->parsed() ? graspstn::cmd_detect(detect_opt, std::cout)
                                  : graspstn::cmd_trace(detect_opt, std::cout);
        }
        if (fixture->parsed()) {
          return graspstn::cmd_fixture(out_dir, fixture_items, fixture_seed,
                                       std::cout);
        }
        return graspstn::kExitInput;
      },
      std::cerr);
}
