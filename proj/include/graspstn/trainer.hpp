#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "graspstn/model.hpp"

namespace graspstn {

struct OptimConfig {
  double lr_pretrain = 1e-3;
  double lr_finetune = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Versioned, file-backed training configuration (JSON on disk). Optimizer
/// choice and the whole schedule live here, nowhere else.
struct TrainConfig {
  int version = 1;
  std::uint64_t seed = 1;
  std::string precision = "float32";  // float32 | float64
  int batch_size = 16;
  int finetune_batch_size = 8;

  int steps_stage1 = 300;
  int steps_stage2 = 250;
  int steps_stage3 = 250;
  int steps_classifier = 300;
  int steps_baseline = 0;  // direct-regression head; 0 skips it
  std::vector<std::string> finetune_phases = {"classifier", "stage3", "stage2",
                                              "stage1"};
  int finetune_steps = 40;

  int background_patches = 8;

  OptimConfig optim;
  ModelConfig model;

  std::string to_json_text() const;
  static TrainConfig from_json_text(const std::string& text);
  static TrainConfig load_file(const std::filesystem::path& path);
  void save_file(const std::filesystem::path& path) const;
  std::string hash() const;

  /// Memorization-scale recipe used by the acceptance overfit run.
  static TrainConfig overfit_defaults();
};

/// One JSON line per optimizer step: {phase, step, loss, lr, wall_ms}.
class TrainLogger {
 public:
  explicit TrainLogger(std::ostream* out) : out_(out) {}
  void log(const std::string& phase, int step, double loss, double lr,
           double wall_ms);

 private:
  std::ostream* out_;
};

/// Per-sample supervision derived from the ground-truth rectangles:
/// positives sorted by distance to the top-right corner fill the K slots,
/// missing slots are masked out (zero target, zero loss).
struct SlotTarget {
  double tx = 0, ty = 0;      // normalized location
  double theta_rad = 0;       // plate angle
  double sw = 1, sh = 1;      // scale factors w.r.t. the canonical rectangle
  bool masked = true;
};

struct ClassifierExample {
  GraspRect rect;
  int label = 0;  // 1 graspable, 0 not
};

struct StageTargets {
  std::vector<SlotTarget> slots;                    // exactly K entries
  std::vector<ClassifierExample> classifier_examples;
  bool usable_for_stages = false;  // has at least one positive
};

StageTargets make_stage_targets(const GraspSample& sample,
                                const ModelConfig& cfg);

enum class Component { Stage1, Stage2, Stage3, Classifier, Baseline };

std::string component_name(Component c);

template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(ParameterSet<T>& params, const OptimConfig& cfg)
      : params_(&params), cfg_(cfg) {
    states_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Index n = params[i].tensor.size();
      states_[i].m = Eigen::Array<T, Eigen::Dynamic, 1>::Zero(n);
      states_[i].v = Eigen::Array<T, Eigen::Dynamic, 1>::Zero(n);
    }
  }

  /// Apply one Adam update to parameters selected by `trainable` (a mask
  /// over the parameter set). Frozen parameters keep value and state.
  void step(double lr, const std::vector<bool>& trainable) {
    ++step_count_;
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T bc1 = static_cast<T>(
        1.0 / (1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_))));
    const T bc2 = static_cast<T>(
        1.0 / (1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_))));
    for (std::size_t i = 0; i < params_->size(); ++i) {
      if (!trainable[i]) continue;
      auto& p = (*params_)[i].tensor;
      if (!p.grad_populated()) continue;
      const auto& g = p.grad_array();
      auto& st = states_[i];
      st.m = b1 * st.m + (1 - b1) * g;
      st.v = b2 * st.v + (1 - b2) * g * g;
      p.mutable_array() -=
          static_cast<T>(lr) * (st.m * bc1) /
          ((st.v * bc2).sqrt() + static_cast<T>(cfg_.eps));
    }
  }

  long step_count() const { return step_count_; }

 private:
  struct State {
    Eigen::Array<T, Eigen::Dynamic, 1> m, v;
  };
  ParameterSet<T>* params_;
  OptimConfig cfg_;
  std::vector<State> states_;
  long step_count_ = 0;
};

/// Mask over the parameter set selecting names under `prefix.`.
template <typename T>
std::vector<bool> params_with_prefix(const ParameterSet<T>& params,
                                     const std::string& prefix) {
  std::vector<bool> mask(params.size(), false);
  for (std::size_t i = 0; i < params.size(); ++i) {
    mask[i] = params[i].name.rfind(prefix + ".", 0) == 0;
  }
  return mask;
}

struct LossHistory {
  std::vector<double> losses;
  double initial() const { return losses.empty() ? 0 : losses.front(); }
  double final_loss() const { return losses.empty() ? 0 : losses.back(); }
};

namespace detail {

/// Stack single-sample tensors [1,C,H,W] into a leaf batch [B,C,H,W].
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
  const Index b = static_cast<Index>(items.size());
  Shape s = items.front().shape();
  s[0] = b;
  Tensor<T> out = Tensor<T>::zeros(s);
  const Index per = items.front().size();
  for (Index i = 0; i < b; ++i) {
    out.mutable_array().segment(i * per, per) =
        items[static_cast<std::size_t>(i)].array();
  }
  return out;
}

inline double wall_ms_since(
    const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace detail

/// Supervised pretraining of one component with every other block frozen.
/// Stage 2 trains on patches cropped at ground-truth locations, stage 3 on
/// ground-truth-rotated patches, the classifier on ground-truth-configured
/// patches plus labeled negatives and white background patches.
template <typename T>
LossHistory pretrain_component(GraspModel<T>& model, Component component,
                               const std::vector<GraspSample>& data,
                               const TrainConfig& config, AdamOptimizer<T>& opt,
                               TrainLogger* logger);

/// End-to-end fine-tuning, output block first: classifier -> stage3 ->
/// stage2 -> stage1, each phase unfreezing only its own block. The loss is
/// BCE of the K candidate scores against per-candidate success labels.
template <typename T>
LossHistory finetune_back_to_front(GraspModel<T>& model,
                                   const std::vector<GraspSample>& data,
                                   const TrainConfig& config,
                                   AdamOptimizer<T>& opt, TrainLogger* logger);

struct SampleOutcome {
  std::string id;
  bool success = false;
  double jaccard = 0;
  double angle_diff_deg = 0;
  double ms = 0;
  GraspRect rect;
};

struct EvalReport {
  int total = 0;
  int successes = 0;
  double accuracy_pct = 0;
  double mean_ms = 0;
  double median_ms = 0;
  std::vector<SampleOutcome> outcomes;
};

/// Single-threaded inference over a test set with the Jaccard/angle success
/// metric; the first (warm-up) inference is excluded from timing.
template <typename T>
EvalReport evaluate(const GraspModel<T>& model,
                    const std::vector<GraspSample>& test_samples);

}  // namespace graspstn
