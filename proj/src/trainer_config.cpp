#include <fstream>

#include "graspstn/checkpoint.hpp"
#include "graspstn/trainer.hpp"
#include "json.hpp"

namespace graspstn {

std::string TrainConfig::to_json_text() const {
  nlohmann::json j;
  j["version"] = version;
  j["seed"] = seed;
  j["precision"] = precision;
  j["batch_size"] = batch_size;
  j["finetune_batch_size"] = finetune_batch_size;
  j["steps_stage1"] = steps_stage1;
  j["steps_stage2"] = steps_stage2;
  j["steps_stage3"] = steps_stage3;
  j["steps_classifier"] = steps_classifier;
  j["steps_baseline"] = steps_baseline;
  j["finetune_phases"] = finetune_phases;
  j["finetune_steps"] = finetune_steps;
  j["background_patches"] = background_patches;
  j["optim"] = {{"lr_pretrain", optim.lr_pretrain},
                {"lr_finetune", optim.lr_finetune},
                {"beta1", optim.beta1},
                {"beta2", optim.beta2},
                {"eps", optim.eps}};
  j["model"] = nlohmann::json::parse(model.to_json_text());
  return j.dump(2);
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TrainConfig c;
  if (j.contains("version")) c.version = j["version"];
  if (c.version != 1) {
    throw ContractError("TrainConfig: unsupported config version");
  }
  if (j.contains("seed")) c.seed = j["seed"];
  if (j.contains("precision")) c.precision = j["precision"];
  if (c.precision != "float32" && c.precision != "float64") {
    throw ContractError("TrainConfig: precision must be float32 or float64");
  }
  if (j.contains("batch_size")) c.batch_size = j["batch_size"];
  if (j.contains("finetune_batch_size")) {
    c.finetune_batch_size = j["finetune_batch_size"];
  }
  if (j.contains("steps_stage1")) c.steps_stage1 = j["steps_stage1"];
  if (j.contains("steps_stage2")) c.steps_stage2 = j["steps_stage2"];
  if (j.contains("steps_stage3")) c.steps_stage3 = j["steps_stage3"];
  if (j.contains("steps_classifier")) c.steps_classifier = j["steps_classifier"];
  if (j.contains("steps_baseline")) c.steps_baseline = j["steps_baseline"];
  if (j.contains("finetune_phases")) {
    c.finetune_phases = j["finetune_phases"].get<std::vector<std::string>>();
  }
  if (j.contains("finetune_steps")) c.finetune_steps = j["finetune_steps"];
  if (j.contains("background_patches")) {
    c.background_patches = j["background_patches"];
  }
  if (j.contains("optim")) {
    const auto& o = j["optim"];
    if (o.contains("lr_pretrain")) c.optim.lr_pretrain = o["lr_pretrain"];
    if (o.contains("lr_finetune")) c.optim.lr_finetune = o["lr_finetune"];
    if (o.contains("beta1")) c.optim.beta1 = o["beta1"];
    if (o.contains("beta2")) c.optim.beta2 = o["beta2"];
    if (o.contains("eps")) c.optim.eps = o["eps"];
  }
  if (j.contains("model")) {
    c.model = ModelConfig::from_json_text(j["model"].dump());
  }
  return c;
}

TrainConfig TrainConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("TrainConfig: cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return from_json_text(text);
}

void TrainConfig::save_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("TrainConfig: cannot write " + path.string());
  out << to_json_text() << "\n";
}

std::string TrainConfig::hash() const {
  // canonical single-line dump so the hash ignores on-disk formatting
  return fnv1a_hex(nlohmann::json::parse(to_json_text()).dump());
}

TrainConfig TrainConfig::overfit_defaults() {
  TrainConfig c;
  c.model = ModelConfig::tiny();
  c.batch_size = 8;
  c.finetune_batch_size = 4;
  c.steps_stage1 = 260;
  c.steps_stage2 = 180;
  c.steps_stage3 = 180;
  c.steps_classifier = 260;
  c.finetune_steps = 20;
  c.background_patches = 6;
  // memorization runs sit at near-zero loss when fine-tuning starts; Adam's
  // normalized steps need a small rate there or the stages walk away from
  // their pretrained geometry
  c.optim.lr_finetune = 1e-5;
  return c;
}

void TrainLogger::log(const std::string& phase, int step, double loss,
                      double lr, double wall_ms) {
  if (!out_) return;
  nlohmann::json j;
  j["phase"] = phase;
  j["step"] = step;
  j["loss"] = loss;
  j["lr"] = lr;
  j["wall_ms"] = wall_ms;
  (*out_) << j.dump() << "\n";
}

}  // namespace graspstn
