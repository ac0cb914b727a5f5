#include "graspstn/trainer.hpp"

#include <algorithm>
#include <chrono>

#include "graspstn/rng.hpp"

namespace graspstn {

namespace {

constexpr double kDegToRad = 0.017453292519943295;

double clamp(double v, double lo, double hi) {
  return std::min(std::max(v, lo), hi);
}

std::uint64_t fnv_phase_seed(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string component_name(Component c) {
  switch (c) {
    case Component::Stage1: return "stage1";
    case Component::Stage2: return "stage2";
    case Component::Stage3: return "stage3";
    case Component::Classifier: return "classifier";
    case Component::Baseline: return "baseline";
  }
  return "?";
}

StageTargets make_stage_targets(const GraspSample& sample,
                                const ModelConfig& cfg) {
  StageTargets t;
  t.slots.resize(static_cast<std::size_t>(cfg.candidates));

  const double W = cfg.image_size, H = cfg.image_size;

  if (sample.is_background || sample.positives.empty()) {
    // background (or annotation-free) samples feed only the classifier
    GraspRect center;
    center.x = W / 2;
    center.y = H / 2;
    center.theta_deg = 0;
    center.w = cfg.classifier_fov;
    center.h = cfg.classifier_fov;
    t.classifier_examples.push_back({center, 0});
    for (const auto& r : sample.negatives) {
      t.classifier_examples.push_back({r, 0});
    }
    return t;
  }

  t.usable_for_stages = true;

  // "top right first": ascending distance to the corner (W-1, 0)
  std::vector<GraspRect> sorted = sample.positives;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [&](const GraspRect& a, const GraspRect& b) {
                     const double da = (a.x - (W - 1)) * (a.x - (W - 1)) +
                                       a.y * a.y;
                     const double db = (b.x - (W - 1)) * (b.x - (W - 1)) +
                                       b.y * b.y;
                     return da < db;
                   });

  const double loc_bound = cfg.loc_scale() * 0.995;
  const double s_lo = cfg.scale_min * 1.02, s_hi = cfg.scale_max * 0.98;
  for (std::size_t k = 0; k < t.slots.size(); ++k) {
    if (k >= sorted.size()) continue;  // stays masked with zero targets
    const GraspRect& r = sorted[k];
    SlotTarget& slot = t.slots[k];
    slot.masked = false;
    slot.tx = clamp(2.0 * r.x / W - 1.0, -loc_bound, loc_bound);
    slot.ty = clamp(2.0 * r.y / H - 1.0, -loc_bound, loc_bound);
    slot.theta_rad = r.theta_deg * kDegToRad;
    slot.sw = clamp(r.w / cfg.classifier_fov, s_lo, s_hi);
    slot.sh = clamp(r.h / cfg.classifier_fov, s_lo, s_hi);
  }

  for (const auto& r : sample.positives) {
    t.classifier_examples.push_back({r, 1});
  }
  for (const auto& r : sample.negatives) {
    t.classifier_examples.push_back({r, 0});
  }
  return t;
}

namespace {

template <typename T>
struct PretrainData {
  // stage 1
  std::vector<Tensor<T>> images;
  std::vector<std::vector<T>> loc_targets;  // [2K]
  std::vector<std::vector<T>> loc_masks;
  // stages 2/3
  std::vector<Tensor<T>> patches;
  std::vector<double> thetas;
  std::vector<double> sw_targets, sh_targets;
  // classifier
  std::vector<T> labels;
  // baseline: one top-right-first target per image
  std::vector<std::array<double, 6>> reg_targets;  // tx, ty, cos2t, sin2t, sw, sh
};

template <typename T>
PretrainData<T> collect_pretrain_data(const GraspModel<T>& model,
                                      Component component,
                                      const std::vector<GraspSample>& data,
                                      const TrainConfig& config) {
  NoGradGuard no_grad;
  const ModelConfig& cfg = model.cfg;
  PretrainData<T> out;

  std::vector<const GraspSample*> samples;
  for (const auto& s : data) samples.push_back(&s);
  std::vector<GraspSample> backgrounds;
  if (component == Component::Classifier && config.background_patches > 0) {
    backgrounds = make_background_patches(config.background_patches,
                                          config.seed ^ 0xb6a7c0ffULL);
    for (const auto& s : backgrounds) samples.push_back(&s);
  }

  for (const GraspSample* sp : samples) {
    const GraspSample& s = *sp;
    StageTargets targets = make_stage_targets(s, cfg);

    if (component == Component::Classifier) {
      if (targets.classifier_examples.empty()) continue;
      Tensor<T> x = s.image.to_tensor<T>();
      for (const auto& ex : targets.classifier_examples) {
        out.patches.push_back(model.patch_for_rect(x, ex.rect).detach());
        out.labels.push_back(static_cast<T>(ex.label));
      }
      continue;
    }

    if (!targets.usable_for_stages) continue;

    if (component == Component::Baseline) {
      const SlotTarget& slot = targets.slots.front();
      out.images.push_back(s.image.to_tensor<T>());
      out.reg_targets.push_back({slot.tx, slot.ty, std::cos(2 * slot.theta_rad),
                                 std::sin(2 * slot.theta_rad), slot.sw,
                                 slot.sh});
      continue;
    }

    if (component == Component::Stage1) {
      out.images.push_back(s.image.to_tensor<T>());
      std::vector<T> tgt, mask;
      for (const auto& slot : targets.slots) {
        tgt.push_back(static_cast<T>(slot.tx));
        tgt.push_back(static_cast<T>(slot.ty));
        const T m = slot.masked ? T(0) : T(1);
        mask.push_back(m);
        mask.push_back(m);
      }
      out.loc_targets.push_back(std::move(tgt));
      out.loc_masks.push_back(std::move(mask));
      continue;
    }

    Tensor<T> x = s.image.to_tensor<T>();
    for (const auto& slot : targets.slots) {
      if (slot.masked) continue;
      Tensor<T> patch1 = model.crop_stage1_patch(x, slot.tx, slot.ty);
      if (component == Component::Stage2) {
        out.patches.push_back(patch1.detach());
        out.thetas.push_back(slot.theta_rad);
      } else {
        out.patches.push_back(
            model.rotate_patch(patch1, slot.theta_rad).detach());
        out.sw_targets.push_back(slot.sw);
        out.sh_targets.push_back(slot.sh);
      }
    }
  }
  return out;
}

/// Deterministic minibatch index stream: reshuffles [0,n) every epoch.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::size_t batch, Rng rng)
      : n_(n), batch_(std::min(batch, n)), rng_(rng) {
    indices_.resize(n);
    for (std::size_t i = 0; i < n; ++i) indices_[i] = i;
    shuffle();
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < batch_; ++i) {
      if (pos_ == n_) {
        shuffle();
        pos_ = 0;
      }
      out.push_back(indices_[pos_++]);
    }
    return out;
  }

 private:
  void shuffle() {
    for (std::size_t i = n_; i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          rng_.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(indices_[i - 1], indices_[j]);
    }
  }

  std::size_t n_, batch_;
  Rng rng_;
  std::vector<std::size_t> indices_;
  std::size_t pos_ = 0;
};

template <typename T>
void check_loss_finite(const Tensor<T>& loss, const std::string& phase,
                       int step) {
  if (!std::isfinite(static_cast<double>(loss.value()))) {
    throw NumericError("training aborted: non-finite loss in phase " + phase +
                       " at step " + std::to_string(step));
  }
}

}  // namespace

template <typename T>
LossHistory pretrain_component(GraspModel<T>& model, Component component,
                               const std::vector<GraspSample>& data,
                               const TrainConfig& config, AdamOptimizer<T>& opt,
                               TrainLogger* logger) {
  if (data.empty()) {
    throw ContractError("pretrain_component: empty dataset");
  }
  const std::string phase = component_name(component);
  const int steps = component == Component::Stage1      ? config.steps_stage1
                    : component == Component::Stage2     ? config.steps_stage2
                    : component == Component::Stage3     ? config.steps_stage3
                    : component == Component::Baseline   ? config.steps_baseline
                                                         : config.steps_classifier;
  LossHistory history;
  if (steps <= 0) return history;
  if (component == Component::Baseline && !model.baseline_backbone) {
    throw ContractError("pretrain_component: model built without baseline");
  }

  PretrainData<T> pd = collect_pretrain_data(model, component, data, config);
  const std::size_t n = (component == Component::Stage1 ||
                         component == Component::Baseline)
                            ? pd.images.size()
                            : pd.patches.size();
  if (n == 0) {
    throw ContractError("pretrain_component: no usable training data for " +
                        phase);
  }

  const std::vector<bool> trainable =
      params_with_prefix(model.params, phase);
  BatchStream stream(
      n, static_cast<std::size_t>(config.batch_size),
      Rng(config.seed ^ (0x51ULL + static_cast<std::uint64_t>(component))));
  const int k2 = 2 * model.cfg.candidates;

  for (int step = 0; step < steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto idx = stream.next();
    const Index b = static_cast<Index>(idx.size());

    Tensor<T> loss;
    if (component == Component::Stage1) {
      std::vector<Tensor<T>> imgs;
      Tensor<T> target = Tensor<T>::zeros(Shape{b, k2});
      Tensor<T> mask = Tensor<T>::zeros(Shape{b, k2});
      T mask_sum = 0;
      for (Index i = 0; i < b; ++i) {
        imgs.push_back(pd.images[idx[static_cast<std::size_t>(i)]]);
        for (int j = 0; j < k2; ++j) {
          target.mutable_array()[i * k2 + j] =
              pd.loc_targets[idx[static_cast<std::size_t>(i)]][j];
          const T m = pd.loc_masks[idx[static_cast<std::size_t>(i)]][j];
          mask.mutable_array()[i * k2 + j] = m;
          mask_sum += m;
        }
      }
      Tensor<T> out = model.stage1_forward(detail::stack_batch(imgs));
      Tensor<T> diff = sub(out, target);
      Tensor<T> masked_sq = mul(mul(diff, diff), mask);
      loss = mul_scalar(sum_all(masked_sq),
                        T(1) / std::max(T(1), mask_sum));
    } else if (component == Component::Stage2) {
      std::vector<Tensor<T>> patches;
      Tensor<T> cos_t = Tensor<T>::zeros(Shape{b, 1});
      Tensor<T> sin_t = Tensor<T>::zeros(Shape{b, 1});
      for (Index i = 0; i < b; ++i) {
        patches.push_back(pd.patches[idx[static_cast<std::size_t>(i)]]);
        const double th2 = 2.0 * pd.thetas[idx[static_cast<std::size_t>(i)]];
        cos_t.mutable_array()[i] = static_cast<T>(std::cos(th2));
        sin_t.mutable_array()[i] = static_cast<T>(std::sin(th2));
      }
      Tensor<T> o = model.stage2_forward(detail::stack_batch(patches));
      Tensor<T> u = narrow_cols(o, 0, 1);
      Tensor<T> v = narrow_cols(o, 1, 1);
      Tensor<T> norm = sqrt_op(add(mul(u, u), mul(v, v)));
      // chordal alignment: cos(2*theta_pred - 2*theta_target)
      Tensor<T> align = div(add(mul(u, cos_t), mul(v, sin_t)), norm);
      loss = add_scalar(neg(mean_all(align)), T(1));
    } else if (component == Component::Stage3) {
      std::vector<Tensor<T>> patches;
      Tensor<T> sw_t = Tensor<T>::zeros(Shape{b, 1});
      Tensor<T> sh_t = Tensor<T>::zeros(Shape{b, 1});
      for (Index i = 0; i < b; ++i) {
        patches.push_back(pd.patches[idx[static_cast<std::size_t>(i)]]);
        sw_t.mutable_array()[i] =
            static_cast<T>(pd.sw_targets[idx[static_cast<std::size_t>(i)]]);
        sh_t.mutable_array()[i] =
            static_cast<T>(pd.sh_targets[idx[static_cast<std::size_t>(i)]]);
      }
      Tensor<T> o = model.stage3_forward(detail::stack_batch(patches));
      Tensor<T> sw = model.map_scale(narrow_cols(o, 0, 1));
      Tensor<T> sh = model.map_scale(narrow_cols(o, 1, 1));
      Tensor<T> dx = model.map_shift(narrow_cols(o, 2, 1));
      Tensor<T> dy = model.map_shift(narrow_cols(o, 3, 1));
      Tensor<T> ew = sub(sw, sw_t);
      Tensor<T> eh = sub(sh, sh_t);
      Tensor<T> err = add(add(mul(ew, ew), mul(eh, eh)),
                          add(mul(dx, dx), mul(dy, dy)));
      loss = mean_all(err);
    } else if (component == Component::Baseline) {
      std::vector<Tensor<T>> imgs;
      Tensor<T> loc_t = Tensor<T>::zeros(Shape{b, 2});
      Tensor<T> cos_t = Tensor<T>::zeros(Shape{b, 1});
      Tensor<T> sin_t = Tensor<T>::zeros(Shape{b, 1});
      Tensor<T> sw_t = Tensor<T>::zeros(Shape{b, 1});
      Tensor<T> sh_t = Tensor<T>::zeros(Shape{b, 1});
      for (Index i = 0; i < b; ++i) {
        const auto& t = pd.reg_targets[idx[static_cast<std::size_t>(i)]];
        imgs.push_back(pd.images[idx[static_cast<std::size_t>(i)]]);
        loc_t.mutable_array()[2 * i] = static_cast<T>(t[0]);
        loc_t.mutable_array()[2 * i + 1] = static_cast<T>(t[1]);
        cos_t.mutable_array()[i] = static_cast<T>(t[2]);
        sin_t.mutable_array()[i] = static_cast<T>(t[3]);
        sw_t.mutable_array()[i] = static_cast<T>(t[4]);
        sh_t.mutable_array()[i] = static_cast<T>(t[5]);
      }
      Tensor<T> o = model.baseline_head->forward(
          model.baseline_backbone->forward(detail::stack_batch(imgs)));
      Tensor<T> loc = tanh_op(narrow_cols(o, 0, 2));
      Tensor<T> u = narrow_cols(o, 2, 1);
      Tensor<T> v = narrow_cols(o, 3, 1);
      Tensor<T> sw = model.map_scale(narrow_cols(o, 4, 1));
      Tensor<T> sh = model.map_scale(narrow_cols(o, 5, 1));
      Tensor<T> dloc = sub(loc, loc_t);
      Tensor<T> norm = sqrt_op(add(mul(u, u), mul(v, v)));
      Tensor<T> align = div(add(mul(u, cos_t), mul(v, sin_t)), norm);
      Tensor<T> ew = sub(sw, sw_t);
      Tensor<T> eh = sub(sh, sh_t);
      loss = add(add(mean_all(mul(dloc, dloc)),
                     add_scalar(neg(mean_all(align)), T(1))),
                 mean_all(add(mul(ew, ew), mul(eh, eh))));
    } else {
      std::vector<Tensor<T>> patches;
      Tensor<T> labels = Tensor<T>::zeros(Shape{b, 1});
      for (Index i = 0; i < b; ++i) {
        patches.push_back(pd.patches[idx[static_cast<std::size_t>(i)]]);
        labels.mutable_array()[i] = pd.labels[idx[static_cast<std::size_t>(i)]];
      }
      Tensor<T> scores = model.classify(detail::stack_batch(patches));
      loss = binary_cross_entropy(scores, labels);
    }

    check_loss_finite(loss, phase, step);
    history.losses.push_back(static_cast<double>(loss.value()));
    model.params.zero_grad();
    loss.backward();
    opt.step(config.optim.lr_pretrain, trainable);
    if (logger) {
      logger->log(phase, step, history.losses.back(), config.optim.lr_pretrain,
                  detail::wall_ms_since(t0));
    }
  }
  return history;
}

template <typename T>
LossHistory finetune_back_to_front(GraspModel<T>& model,
                                   const std::vector<GraspSample>& data,
                                   const TrainConfig& config,
                                   AdamOptimizer<T>& opt, TrainLogger* logger) {
  LossHistory history;
  if (config.finetune_phases.empty() || config.finetune_steps <= 0) {
    return history;
  }

  std::vector<const GraspSample*> usable;
  for (const auto& s : data) {
    if (!s.positives.empty() || s.is_background) usable.push_back(&s);
  }
  if (usable.empty()) {
    throw ContractError("finetune: no samples with labels");
  }

  const int k = model.cfg.candidates;
  for (const std::string& phase : config.finetune_phases) {
    const std::vector<bool> trainable =
        params_with_prefix(model.params, phase);
    if (std::none_of(trainable.begin(), trainable.end(),
                     [](bool x) { return x; })) {
      throw ContractError("finetune: unknown block in phase list: " + phase);
    }

    // Per-candidate success labels are frozen at phase start. Recomputing
    // them every step feeds the label back through the geometry the phase
    // is changing, which oscillates and tears down pretrained stages.
    std::vector<std::vector<T>> labels(usable.size(),
                                       std::vector<T>(static_cast<std::size_t>(k),
                                                      T(0)));
    {
      NoGradGuard no_grad;
      for (std::size_t i = 0; i < usable.size(); ++i) {
        const GraspSample& s = *usable[i];
        if (s.positives.empty()) continue;
        PipelineForward<T> fw = run_pipeline(model, s.image.to_tensor<T>());
        for (int c = 0; c < k; ++c) {
          const GraspRect rect =
              decode_candidate(model.cfg,
                               fw.candidates[static_cast<std::size_t>(c)])
                  .rect_final;
          labels[i][static_cast<std::size_t>(c)] = static_cast<T>(
              is_success(rect, s.positives).success ? 1 : 0);
        }
      }
    }

    BatchStream stream(usable.size(),
                       static_cast<std::size_t>(config.finetune_batch_size),
                       Rng(config.seed ^ fnv_phase_seed(phase)));
    for (int step = 0; step < config.finetune_steps; ++step) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto idx = stream.next();

      Tensor<T> total;
      for (std::size_t bi = 0; bi < idx.size(); ++bi) {
        const GraspSample& s = *usable[idx[bi]];
        Tensor<T> x = s.image.to_tensor<T>();
        PipelineForward<T> fw = run_pipeline(model, x);

        std::vector<Tensor<T>> scores;
        Tensor<T> label_t = Tensor<T>::zeros(Shape{static_cast<Index>(k)});
        for (int c = 0; c < k; ++c) {
          scores.push_back(fw.candidates[static_cast<std::size_t>(c)].score);
          label_t.mutable_array()[c] = labels[idx[bi]][static_cast<std::size_t>(c)];
        }
        Tensor<T> sample_loss =
            binary_cross_entropy(concat1d<T>(scores), label_t);
        total = total.defined() ? add(total, sample_loss) : sample_loss;
      }
      Tensor<T> loss =
          mul_scalar(total, T(1) / static_cast<T>(idx.size()));
      check_loss_finite(loss, "finetune." + phase, step);
      history.losses.push_back(static_cast<double>(loss.value()));
      model.params.zero_grad();
      loss.backward();
      opt.step(config.optim.lr_finetune, trainable);
      if (logger) {
        logger->log("finetune." + phase, step, history.losses.back(),
                    config.optim.lr_finetune, detail::wall_ms_since(t0));
      }
    }
  }
  return history;
}

template <typename T>
EvalReport evaluate(const GraspModel<T>& model,
                    const std::vector<GraspSample>& test_samples) {
  if (test_samples.empty()) {
    throw ContractError("evaluate: empty test set");
  }
  NoGradGuard no_grad;
  EvalReport report;

  detect(model, test_samples.front().image);  // warm-up, excluded from timing

  std::vector<double> times;
  for (const auto& s : test_samples) {
    const auto t0 = std::chrono::steady_clock::now();
    DetectResult det = detect(model, s.image);
    const double ms = detail::wall_ms_since(t0);
    times.push_back(ms);

    SampleOutcome out;
    out.id = s.image.source_id;
    out.ms = ms;
    out.rect = det.rect;
    if (!s.positives.empty()) {
      SuccessResult sr = is_success(det.rect, s.positives);
      out.success = sr.success;
      out.jaccard = sr.best_jaccard;
      if (sr.best_index >= 0) {
        out.angle_diff_deg = angle_diff(
            det.rect.theta_deg,
            s.positives[static_cast<std::size_t>(sr.best_index)].theta_deg);
      }
      report.total++;
      report.successes += out.success ? 1 : 0;
    }
    report.outcomes.push_back(std::move(out));
  }

  report.accuracy_pct =
      report.total > 0 ? 100.0 * report.successes / report.total : 0.0;
  double sum = 0;
  for (double t : times) sum += t;
  report.mean_ms = sum / static_cast<double>(times.size());
  std::vector<double> sorted_times = times;
  std::sort(sorted_times.begin(), sorted_times.end());
  report.median_ms = sorted_times[sorted_times.size() / 2];
  return report;
}

template LossHistory pretrain_component<float>(GraspModel<float>&, Component,
                                               const std::vector<GraspSample>&,
                                               const TrainConfig&,
                                               AdamOptimizer<float>&,
                                               TrainLogger*);
template LossHistory pretrain_component<double>(
    GraspModel<double>&, Component, const std::vector<GraspSample>&,
    const TrainConfig&, AdamOptimizer<double>&, TrainLogger*);
template LossHistory finetune_back_to_front<float>(
    GraspModel<float>&, const std::vector<GraspSample>&, const TrainConfig&,
    AdamOptimizer<float>&, TrainLogger*);
template LossHistory finetune_back_to_front<double>(
    GraspModel<double>&, const std::vector<GraspSample>&, const TrainConfig&,
    AdamOptimizer<double>&, TrainLogger*);
template EvalReport evaluate<float>(const GraspModel<float>&,
                                    const std::vector<GraspSample>&);
template EvalReport evaluate<double>(const GraspModel<double>&,
                                     const std::vector<GraspSample>&);

}  // namespace graspstn
