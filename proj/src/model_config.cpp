#include <fstream>

#include "graspstn/checkpoint.hpp"
#include "graspstn/model.hpp"
#include "json.hpp"

namespace graspstn {

namespace {

nlohmann::json backbone_to_json(const nn::BackboneConfig& b) {
  nlohmann::json j;
  j["stem_channels"] = b.stem_channels;
  j["stem_kernel"] = b.stem_kernel;
  j["stem_stride"] = b.stem_stride;
  j["stem_pool"] = b.stem_pool;
  j["block_channels"] = b.block_channels;
  j["block_strides"] = b.block_strides;
  j["blocks_per_stage"] = b.blocks_per_stage;
  j["hidden"] = b.hidden;
  return j;
}

nn::BackboneConfig backbone_from_json(const nlohmann::json& j,
                                      nn::BackboneConfig base) {
  if (j.contains("stem_channels")) base.stem_channels = j["stem_channels"];
  if (j.contains("stem_kernel")) base.stem_kernel = j["stem_kernel"];
  if (j.contains("stem_stride")) base.stem_stride = j["stem_stride"];
  if (j.contains("stem_pool")) base.stem_pool = j["stem_pool"];
  if (j.contains("block_channels")) {
    base.block_channels = j["block_channels"].get<std::vector<Index>>();
  }
  if (j.contains("block_strides")) {
    base.block_strides = j["block_strides"].get<std::vector<Index>>();
  }
  if (j.contains("blocks_per_stage")) {
    base.blocks_per_stage = j["blocks_per_stage"].get<std::vector<Index>>();
  }
  if (j.contains("hidden")) base.hidden = j["hidden"];
  return base;
}

}  // namespace

void ModelConfig::validate() const {
  if (image_size < 1 || input_channels < 1) {
    throw ContractError("ModelConfig: bad input dimensions");
  }
  if (candidates < 1) throw ContractError("ModelConfig: candidates must be >=1");
  if (!(stage1_fov > 0) || stage1_fov > image_size) {
    throw ContractError("ModelConfig: stage1_fov out of range");
  }
  if (!(classifier_fov > 0) || classifier_fov > stage1_fov) {
    throw ContractError("ModelConfig: classifier_fov out of range");
  }
  if (!(scale_min > 0) || !(scale_max > scale_min)) {
    throw ContractError("ModelConfig: bad scale range");
  }
  if (!(max_shift >= 0) || max_shift > 0.5) {
    throw ContractError("ModelConfig: max_shift out of [0, 0.5]");
  }
  if (stage1_net.block_channels.size() != stage1_net.block_strides.size() ||
      stage2_net.block_channels.size() != stage2_net.block_strides.size() ||
      stage3_net.block_channels.size() != stage3_net.block_strides.size() ||
      classifier_net.block_channels.size() !=
          classifier_net.block_strides.size() ||
      baseline_net.block_channels.size() != baseline_net.block_strides.size()) {
    throw ContractError("ModelConfig: block channel/stride lists differ");
  }
  if (loc_scale() <= 0) {
    throw ContractError("ModelConfig: stage-1 location range collapsed");
  }
}

std::string ModelConfig::to_json_text() const {
  nlohmann::json j;
  j["image_size"] = image_size;
  j["input_channels"] = input_channels;
  j["candidates"] = candidates;
  j["stage1_fov"] = stage1_fov;
  j["stage1_patch"] = stage1_patch;
  j["classifier_patch"] = classifier_patch;
  j["classifier_fov"] = classifier_fov;
  j["scale_min"] = scale_min;
  j["scale_max"] = scale_max;
  j["max_shift"] = max_shift;
  j["stage1_net"] = backbone_to_json(stage1_net);
  j["stage2_net"] = backbone_to_json(stage2_net);
  j["stage3_net"] = backbone_to_json(stage3_net);
  j["classifier_net"] = backbone_to_json(classifier_net);
  j["baseline_net"] = backbone_to_json(baseline_net);
  j["with_baseline"] = with_baseline;
  return j.dump();
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig cfg = ModelConfig::defaults();
  if (j.contains("image_size")) cfg.image_size = j["image_size"];
  if (j.contains("input_channels")) cfg.input_channels = j["input_channels"];
  if (j.contains("candidates")) cfg.candidates = j["candidates"];
  if (j.contains("stage1_fov")) cfg.stage1_fov = j["stage1_fov"];
  if (j.contains("stage1_patch")) cfg.stage1_patch = j["stage1_patch"];
  if (j.contains("classifier_patch")) cfg.classifier_patch = j["classifier_patch"];
  if (j.contains("classifier_fov")) cfg.classifier_fov = j["classifier_fov"];
  if (j.contains("scale_min")) cfg.scale_min = j["scale_min"];
  if (j.contains("scale_max")) cfg.scale_max = j["scale_max"];
  if (j.contains("max_shift")) cfg.max_shift = j["max_shift"];
  if (j.contains("stage1_net")) {
    cfg.stage1_net = backbone_from_json(j["stage1_net"], cfg.stage1_net);
  }
  if (j.contains("stage2_net")) {
    cfg.stage2_net = backbone_from_json(j["stage2_net"], cfg.stage2_net);
  }
  if (j.contains("stage3_net")) {
    cfg.stage3_net = backbone_from_json(j["stage3_net"], cfg.stage3_net);
  }
  if (j.contains("classifier_net")) {
    cfg.classifier_net =
        backbone_from_json(j["classifier_net"], cfg.classifier_net);
  }
  if (j.contains("baseline_net")) {
    cfg.baseline_net = backbone_from_json(j["baseline_net"], cfg.baseline_net);
  }
  if (j.contains("with_baseline")) cfg.with_baseline = j["with_baseline"];
  cfg.validate();
  return cfg;
}

std::string ModelConfig::hash() const { return fnv1a_hex(to_json_text()); }

ModelConfig ModelConfig::defaults() {
  ModelConfig cfg;
  // localization nets: 3 residual blocks (16/32/64, stride 2 between)
  cfg.stage1_net = nn::BackboneConfig{};
  cfg.stage2_net = nn::BackboneConfig{};
  cfg.stage3_net = nn::BackboneConfig{};
  cfg.classifier_net = nn::BackboneConfig{};
  cfg.classifier_net.block_channels = {16, 32};
  cfg.classifier_net.block_strides = {1, 2};
  // desk-scale stand-in for the ResNet-32 regressor (2 blocks per stage);
  // blocks_per_stage {5,5,5} restores the full 15-block layout
  cfg.baseline_net = nn::BackboneConfig{};
  cfg.baseline_net.blocks_per_stage = {2, 2, 2};
  return cfg;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig cfg = defaults();
  nn::BackboneConfig slim;
  slim.stem_channels = 8;
  slim.stem_kernel = 5;
  slim.stem_stride = 4;
  slim.stem_pool = true;
  slim.block_channels = {8, 16, 24};
  slim.block_strides = {1, 2, 2};
  slim.hidden = 32;
  cfg.stage1_net = slim;

  nn::BackboneConfig patch_net;
  patch_net.stem_channels = 8;
  patch_net.stem_kernel = 3;
  patch_net.stem_stride = 2;
  patch_net.stem_pool = true;
  patch_net.block_channels = {8, 16};
  patch_net.block_strides = {1, 2};
  patch_net.hidden = 32;
  cfg.stage2_net = patch_net;
  cfg.stage3_net = patch_net;
  cfg.classifier_net = patch_net;

  nn::BackboneConfig base = slim;
  base.blocks_per_stage = {1, 1, 1};
  cfg.baseline_net = base;
  return cfg;
}

}  // namespace graspstn
