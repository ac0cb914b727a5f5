#pragma once

#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "graspstn/cornell.hpp"
#include "graspstn/geometry.hpp"
#include "graspstn/nn.hpp"
#include "graspstn/stn.hpp"

// The multi-stage STN grasp detector: stage 1 proposes K candidate crop
// locations on the full image, stage 2 predicts an in-plane rotation per
// cropped patch, stage 3 refines scale and position, a small classifier
// scores each final patch, and max pooling over the scores picks the
// winner. Every stage is differentiable end to end through the samplers.

namespace graspstn {

struct ModelConfig {
  int image_size = 400;
  int input_channels = 7;
  int candidates = 4;  // K; stage-1 head emits 2K values

  double stage1_fov = 200.0;    // crop field of view in px
  int stage1_patch = 100;       // stage-1/2 patch resolution
  int classifier_patch = 64;    // final patch resolution
  double classifier_fov = 100.0;  // px at unit scale = canonical rect size

  double scale_min = 0.25;  // stage-3 scale range (sigmoid-mapped, log space)
  double scale_max = 2.0;
  double max_shift = 0.5;  // stage-3 residual translation bound

  nn::BackboneConfig stage1_net;
  nn::BackboneConfig stage2_net;
  nn::BackboneConfig stage3_net;
  nn::BackboneConfig classifier_net;
  nn::BackboneConfig baseline_net;
  bool with_baseline = false;

  double stage1_scale() const { return stage1_fov / image_size; }
  double stage3_fixed() const { return classifier_fov / stage1_fov; }

  /// Stage-1 location bound: keeps every decodable center inside the image
  /// even at the extreme stage-3 residual shift.
  double loc_scale() const {
    return 1.0 - stage1_scale() * max_shift * std::sqrt(2.0);
  }

  void validate() const;
  std::string to_json_text() const;
  static ModelConfig from_json_text(const std::string& text);
  std::string hash() const;

  /// Full-size architecture (400x400 input).
  static ModelConfig defaults();
  /// Scaled-down variant for fast desk experiments and the overfit runs.
  static ModelConfig tiny();
};

struct Stage1Output {
  std::vector<std::array<double, 2>> locations;  // K normalized (tx, ty)
};

struct Stage2Output {
  std::vector<double> thetas_rad;  // one per candidate, in [-pi/2, pi/2)
};

struct Stage3Output {
  struct Refinement {
    double sw, sh, dx, dy;
  };
  std::vector<Refinement> refinements;
};

struct CandidateTraceEntry {
  double tx = 0, ty = 0;           // stage-1 location, normalized
  double theta_rad = 0;            // stage-2 angle
  double sw = 1, sh = 1;           // stage-3 scales
  double dx = 0, dy = 0;           // stage-3 residual shift
  double score = 0;                // graspability in [0,1]
  GraspRect rect_stage1;           // decoded after stage 1 only
  GraspRect rect_stage2;           // after stages 1-2
  GraspRect rect_final;            // full chain
  std::vector<float> patch1, patch2, patch3;  // 7-channel patch dumps
};

struct CandidateTrace {
  std::vector<CandidateTraceEntry> candidates;
  int winner = 0;
};

struct DetectResult {
  GraspRect rect;
  CandidateTrace trace;
};

namespace detail {

template <typename T>
Tensor<T> scalar_of(T v) {
  return Tensor<T>::scalar(v);
}

}  // namespace detail

template <typename T>
struct GraspModel {
  ModelConfig cfg;
  nn::Backbone<T> stage1_backbone, stage2_backbone, stage3_backbone,
      classifier_backbone;
  nn::Dense<T> stage1_head, stage2_head, stage3_head, classifier_head;
  std::optional<nn::Backbone<T>> baseline_backbone;
  std::optional<nn::Dense<T>> baseline_head;
  ParameterSet<T> params;

  static GraspModel build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    GraspModel m;
    m.cfg = cfg;
    Rng rng(seed);

    m.stage1_backbone =
        nn::Backbone<T>::make(cfg.input_channels, cfg.stage1_net, rng);
    m.stage2_backbone =
        nn::Backbone<T>::make(cfg.input_channels, cfg.stage2_net, rng);
    m.stage3_backbone =
        nn::Backbone<T>::make(cfg.input_channels, cfg.stage3_net, rng);
    m.classifier_backbone =
        nn::Backbone<T>::make(cfg.input_channels, cfg.classifier_net, rng);

    // Localization heads are zero-initialized with identity-producing
    // biases: the untrained model is the identity transform chain.
    m.stage1_head = nn::Dense<T>::zeros_with_bias(
        m.stage1_backbone.out_features(),
        std::vector<T>(static_cast<std::size_t>(2 * cfg.candidates), T(0)));
    m.stage2_head = nn::Dense<T>::zeros_with_bias(
        m.stage2_backbone.out_features(), {T(1), T(0)});  // atan2(0,1) = 0
    const T scale_one_bias = static_cast<T>(sigmoid_inverse_for_unit_scale(
        cfg.scale_min, cfg.scale_max));
    m.stage3_head = nn::Dense<T>::zeros_with_bias(
        m.stage3_backbone.out_features(),
        {scale_one_bias, scale_one_bias, T(0), T(0)});
    m.classifier_head = nn::Dense<T>::zeros_with_bias(
        m.classifier_backbone.out_features(), {T(0)});

    m.stage1_backbone.register_params(m.params, "stage1.net");
    m.stage1_head.register_params(m.params, "stage1.head");
    m.stage2_backbone.register_params(m.params, "stage2.net");
    m.stage2_head.register_params(m.params, "stage2.head");
    m.stage3_backbone.register_params(m.params, "stage3.net");
    m.stage3_head.register_params(m.params, "stage3.head");
    m.classifier_backbone.register_params(m.params, "classifier.net");
    m.classifier_head.register_params(m.params, "classifier.head");

    if (cfg.with_baseline) {
      m.baseline_backbone =
          nn::Backbone<T>::make(cfg.input_channels, cfg.baseline_net, rng);
      m.baseline_head = nn::Dense<T>::zeros_with_bias(
          m.baseline_backbone->out_features(),
          {T(0), T(0), T(1), T(0), scale_one_bias, scale_one_bias});
      m.baseline_backbone->register_params(m.params, "baseline.net");
      m.baseline_head->register_params(m.params, "baseline.head");
    }
    return m;
  }

  /// Bias z with sigmoid(z) = ln(1/smin)/ln(smax/smin), i.e. mapped scale
  /// exactly 1 (for [0.25, 2] this is ln 2).
  static double sigmoid_inverse_for_unit_scale(double smin, double smax) {
    const double u = std::log(1.0 / smin) / std::log(smax / smin);
    return std::log(u / (1.0 - u));
  }

  // --- per-stage network forwards (batched) ---

  /// [N,7,H,W] -> [N,2K] bounded locations (tanh scaled by loc_scale).
  Tensor<T> stage1_forward(const Tensor<T>& x) const {
    Tensor<T> feats = stage1_backbone.forward(x);
    Tensor<T> out = mul_scalar(tanh_op(stage1_head.forward(feats)),
                               static_cast<T>(cfg.loc_scale()));
    if (!out.all_finite()) {
      throw NumericError("stage1: non-finite activations");
    }
    return out;
  }

  /// [N,7,P,P] -> [N,2] raw (u, v) orientation vector.
  Tensor<T> stage2_forward(const Tensor<T>& patch) const {
    Tensor<T> out = stage2_head.forward(stage2_backbone.forward(patch));
    if (!out.all_finite()) {
      throw NumericError("stage2: non-finite activations");
    }
    return out;
  }

  /// [N,7,P,P] -> [N,4] raw (zw, zh, zx, zy) refinement logits.
  Tensor<T> stage3_forward(const Tensor<T>& patch) const {
    Tensor<T> out = stage3_head.forward(stage3_backbone.forward(patch));
    if (!out.all_finite()) {
      throw NumericError("stage3: non-finite activations");
    }
    return out;
  }

  /// Map one raw scale logit to [scale_min, scale_max] (log-sigmoid).
  Tensor<T> map_scale(const Tensor<T>& z) const {
    const T ln_min = static_cast<T>(std::log(cfg.scale_min));
    const T ln_ratio = static_cast<T>(std::log(cfg.scale_max / cfg.scale_min));
    return exp_op(add_scalar(mul_scalar(sigmoid(z), ln_ratio), ln_min));
  }

  Tensor<T> map_shift(const Tensor<T>& z) const {
    return mul_scalar(tanh_op(z), static_cast<T>(cfg.max_shift));
  }

  /// [N,7,Pc,Pc] -> [N,1] graspability scores.
  Tensor<T> classify(const Tensor<T>& patch) const {
    return sigmoid(classifier_head.forward(classifier_backbone.forward(patch)));
  }

  // --- constant-transform patch extraction (shared by training and inference) ---

  Tensor<T> crop_stage1_patch(const Tensor<T>& image, double tx,
                              double ty) const {
    const auto t = AffineTransform2D::scale_translation(
        cfg.stage1_scale(), cfg.stage1_scale(), tx, ty);
    return bilinear_sample(
        image, affine_grid<T>(t, cfg.stage1_patch, cfg.stage1_patch));
  }

  Tensor<T> rotate_patch(const Tensor<T>& patch, double theta_rad) const {
    return bilinear_sample(
        patch, affine_grid<T>(AffineTransform2D::rotation(theta_rad),
                              cfg.stage1_patch, cfg.stage1_patch));
  }

  Tensor<T> crop_classifier_patch(const Tensor<T>& patch2, double sw, double sh,
                                  double dx, double dy) const {
    const double f3 = cfg.stage3_fixed();
    const auto t =
        AffineTransform2D::scale_translation(sh * f3, sw * f3, dx, dy);
    return bilinear_sample(
        patch2, affine_grid<T>(t, cfg.classifier_patch, cfg.classifier_patch));
  }

  /// Sample the classifier patch for an arbitrary grasp rectangle in crop
  /// pixel coordinates (used to build classifier training examples).
  Tensor<T> patch_for_rect(const Tensor<T>& image, const GraspRect& r) const {
    const double W = cfg.image_size;
    const double tx = 2.0 * r.x / W - 1.0;
    const double ty = 2.0 * r.y / W - 1.0;
    const double rad = r.theta_deg * 0.017453292519943295;
    std::array<AffineTransform2D, 3> chain = {
        AffineTransform2D::scale_translation(cfg.stage1_scale(),
                                             cfg.stage1_scale(), tx, ty),
        AffineTransform2D::rotation(rad),
        AffineTransform2D::scale_translation(
            (r.h / cfg.classifier_fov) * cfg.stage3_fixed(),
            (r.w / cfg.classifier_fov) * cfg.stage3_fixed(), 0.0, 0.0)};
    const AffineTransform2D total = compose_chain(chain);
    return bilinear_sample(
        image, affine_grid<T>(total, cfg.classifier_patch, cfg.classifier_patch));
  }
};

/// Differentiable per-candidate pipeline state.
template <typename T>
struct CandidateForward {
  Tensor<T> tx, ty;            // rank-0, bounded normalized location
  Tensor<T> theta;             // rank-0 radians in [-pi/2, pi/2)
  Tensor<T> sw, sh, dx, dy;    // rank-0 mapped refinements
  Tensor<T> patch1, patch2, patch3;
  Tensor<T> score;             // rank-0 in (0,1)
};

template <typename T>
struct PipelineForward {
  Tensor<T> stage1_out;  // [1, 2K]
  std::vector<CandidateForward<T>> candidates;
};

/// Full differentiable forward pass for one image tensor [1,7,H,W].
template <typename T>
PipelineForward<T> run_pipeline(const GraspModel<T>& model,
                                const Tensor<T>& image) {
  const ModelConfig& cfg = model.cfg;
  PipelineForward<T> fw;
  fw.stage1_out = model.stage1_forward(image);
  Tensor<T> flat = flatten(fw.stage1_out);

  const T s1 = static_cast<T>(cfg.stage1_scale());
  const T f3 = static_cast<T>(cfg.stage3_fixed());
  constexpr T kPi = static_cast<T>(3.14159265358979323846);

  for (int k = 0; k < cfg.candidates; ++k) {
    CandidateForward<T> cand;
    cand.tx = index_scalar(flat, 2 * k);
    cand.ty = index_scalar(flat, 2 * k + 1);

    Tensor<T> theta1 = theta_crop(cand.tx, cand.ty, s1);
    cand.patch1 = bilinear_sample(
        image, affine_grid(theta1, cfg.stage1_patch, cfg.stage1_patch));

    Tensor<T> o2 = model.stage2_forward(cand.patch1);
    Tensor<T> o2f = flatten(o2);
    Tensor<T> u = index_scalar(o2f, 0);
    Tensor<T> v = index_scalar(o2f, 1);
    if (u.value() == T(0) && v.value() == T(0)) {
      std::cerr << "graspstn: stage2 emitted (0,0); using theta = 0\n";
    }
    Tensor<T> full_angle = atan2_op(v, u);  // (-pi, pi]
    Tensor<T> half = mul_scalar(full_angle, T(0.5));
    // fold the single boundary case +pi/2 into [-pi/2, pi/2)
    cand.theta = half.value() >= kPi / 2 ? add_scalar(half, -kPi) : half;

    Tensor<T> theta2 = theta_rotation(cos_op(cand.theta), sin_op(cand.theta));
    cand.patch2 = bilinear_sample(
        cand.patch1, affine_grid(theta2, cfg.stage1_patch, cfg.stage1_patch));

    Tensor<T> o3 = model.stage3_forward(cand.patch2);
    Tensor<T> o3f = flatten(o3);
    cand.sw = model.map_scale(index_scalar(o3f, 0));
    cand.sh = model.map_scale(index_scalar(o3f, 1));
    cand.dx = model.map_shift(index_scalar(o3f, 2));
    cand.dy = model.map_shift(index_scalar(o3f, 3));

    Tensor<T> theta3 = theta_scale_translation(
        mul_scalar(cand.sh, f3), mul_scalar(cand.sw, f3), cand.dx, cand.dy);
    cand.patch3 = bilinear_sample(
        cand.patch2,
        affine_grid(theta3, cfg.classifier_patch, cfg.classifier_patch));

    cand.score = index_scalar(flatten(model.classify(cand.patch3)), 0);
    fw.candidates.push_back(std::move(cand));
  }
  return fw;
}

/// Decode one candidate's transform chain into image-space rectangles.
template <typename T>
CandidateTraceEntry decode_candidate(const ModelConfig& cfg,
                                     const CandidateForward<T>& cand) {
  CandidateTraceEntry e;
  e.tx = static_cast<double>(cand.tx.value());
  e.ty = static_cast<double>(cand.ty.value());
  e.theta_rad = static_cast<double>(cand.theta.value());
  e.sw = static_cast<double>(cand.sw.value());
  e.sh = static_cast<double>(cand.sh.value());
  e.dx = static_cast<double>(cand.dx.value());
  e.dy = static_cast<double>(cand.dy.value());
  e.score = static_cast<double>(cand.score.value());

  const double W = cfg.image_size, H = cfg.image_size;
  const double cw = cfg.classifier_fov, ch = cfg.classifier_fov;
  const double s1 = cfg.stage1_scale();
  const AffineTransform2D t1 = AffineTransform2D::translation(e.tx, e.ty);
  const AffineTransform2D t2 = AffineTransform2D::rotation(e.theta_rad);
  const AffineTransform2D t3 = AffineTransform2D::scale_translation(
      e.sh, e.sw, s1 * e.dx, s1 * e.dy);

  std::array<AffineTransform2D, 1> c1 = {t1};
  std::array<AffineTransform2D, 2> c2 = {t1, t2};
  std::array<AffineTransform2D, 3> c3 = {t1, t2, t3};
  e.rect_stage1 = transform_to_grasp(c1, W, H, cw, ch);
  e.rect_stage2 = transform_to_grasp(c2, W, H, cw, ch);
  e.rect_final = transform_to_grasp(c3, W, H, cw, ch);
  return e;
}

template <typename T>
void validate_decoded(const ModelConfig& cfg, const GraspRect& r) {
  const double lo = cfg.classifier_fov * cfg.scale_min - 1e-6;
  const double hi = cfg.classifier_fov * cfg.scale_max + 1e-6;
  const bool ok = r.x >= 0 && r.x <= cfg.image_size && r.y >= 0 &&
                  r.y <= cfg.image_size && r.theta_deg >= -90 &&
                  r.theta_deg < 90 && r.w >= lo && r.w <= hi && r.h >= lo &&
                  r.h <= hi;
  if (!ok) {
    throw NumericError("detect: decoded rectangle violates bounds");
  }
}

template <typename T>
void fill_patch_dump(std::vector<float>& dst, const Tensor<T>& patch) {
  dst.resize(static_cast<std::size_t>(patch.size()));
  for (Index i = 0; i < patch.size(); ++i) {
    dst[static_cast<std::size_t>(i)] = static_cast<float>(patch[i]);
  }
}

/// Run all stages, score the K candidates, and max-pool the best (ties:
/// lowest candidate index). Deterministic for fixed params and input.
template <typename T>
DetectResult detect(const GraspModel<T>& model, const MultiModalImage& image) {
  Tensor<T> x = image.to_tensor<T>();
  PipelineForward<T> fw = run_pipeline(model, x);

  DetectResult result;
  int winner = 0;
  double best = -1.0;
  for (int k = 0; k < model.cfg.candidates; ++k) {
    CandidateTraceEntry e = decode_candidate(model.cfg, fw.candidates[k]);
    validate_decoded<T>(model.cfg, e.rect_final);
    fill_patch_dump(e.patch1, fw.candidates[static_cast<std::size_t>(k)].patch1);
    fill_patch_dump(e.patch2, fw.candidates[static_cast<std::size_t>(k)].patch2);
    fill_patch_dump(e.patch3, fw.candidates[static_cast<std::size_t>(k)].patch3);
    if (e.score > best) {
      best = e.score;
      winner = k;
    }
    result.trace.candidates.push_back(std::move(e));
  }
  result.trace.winner = winner;
  result.rect = result.trace.candidates[static_cast<std::size_t>(winner)].rect_final;
  return result;
}

// --- spec-level per-stage operations (plain outputs) ---

template <typename T>
Stage1Output stage1_locate(const GraspModel<T>& model,
                           const MultiModalImage& image) {
  NoGradGuard ng;
  Tensor<T> out = model.stage1_forward(image.to_tensor<T>());
  Stage1Output s;
  for (int k = 0; k < model.cfg.candidates; ++k) {
    s.locations.push_back({static_cast<double>(out[2 * k]),
                           static_cast<double>(out[2 * k + 1])});
  }
  return s;
}

template <typename T>
double stage2_orient(const GraspModel<T>& model, const Tensor<T>& patch) {
  NoGradGuard ng;
  Tensor<T> o = model.stage2_forward(patch);
  const double u = o[0], v = o[1];
  if (u == 0.0 && v == 0.0) {
    std::cerr << "graspstn: stage2 emitted (0,0); using theta = 0\n";
    return 0.0;
  }
  double theta = 0.5 * std::atan2(v, u);
  if (theta >= 1.5707963267948966) theta -= 3.141592653589793;
  return theta;
}

template <typename T>
Stage3Output::Refinement stage3_refine(const GraspModel<T>& model,
                                       const Tensor<T>& patch) {
  NoGradGuard ng;
  Tensor<T> o = flatten(model.stage3_forward(patch));
  Stage3Output::Refinement r;
  r.sw = model.map_scale(index_scalar(o, 0)).value();
  r.sh = model.map_scale(index_scalar(o, 1)).value();
  r.dx = model.map_shift(index_scalar(o, 2)).value();
  r.dy = model.map_shift(index_scalar(o, 3)).value();
  return r;
}

template <typename T>
double classify_patch(const GraspModel<T>& model, const Tensor<T>& patch) {
  NoGradGuard ng;
  return static_cast<double>(model.classify(patch)[0]);
}

template <typename T>
Stage2Output stage2_orient_all(const GraspModel<T>& model,
                               const std::vector<Tensor<T>>& patches) {
  Stage2Output out;
  for (const auto& p : patches) out.thetas_rad.push_back(stage2_orient(model, p));
  return out;
}

template <typename T>
Stage3Output stage3_refine_all(const GraspModel<T>& model,
                               const std::vector<Tensor<T>>& patches) {
  Stage3Output out;
  for (const auto& p : patches) {
    out.refinements.push_back(stage3_refine(model, p));
  }
  return out;
}

/// Direct-regression baseline: one residual network emitting the full grasp
/// configuration, decoded through the same bounded mappings as the stages.
template <typename T>
GraspRect regress_baseline(const GraspModel<T>& model,
                           const MultiModalImage& image) {
  if (!model.baseline_backbone) {
    throw ContractError("regress_baseline: model built without baseline head");
  }
  NoGradGuard ng;
  Tensor<T> x = image.to_tensor<T>();
  Tensor<T> o = model.baseline_head->forward(
      model.baseline_backbone->forward(x));
  if (!o.all_finite()) throw NumericError("baseline: non-finite activations");

  // same bounded mappings (and precision) as the stage heads
  Tensor<T> of = flatten(o);
  const double tx = tanh_op(index_scalar(of, 0)).value();
  const double ty = tanh_op(index_scalar(of, 1)).value();
  double theta = (o[2] == T(0) && o[3] == T(0))
                     ? 0.0
                     : 0.5 * std::atan2(static_cast<double>(o[3]),
                                        static_cast<double>(o[2]));
  if (theta >= 1.5707963267948966) theta -= 3.141592653589793;
  const double sw = model.map_scale(index_scalar(of, 4)).value();
  const double sh = model.map_scale(index_scalar(of, 5)).value();

  std::array<AffineTransform2D, 3> chain = {
      AffineTransform2D::translation(tx, ty),
      AffineTransform2D::rotation(theta),
      AffineTransform2D::scale_translation(sh, sw, 0.0, 0.0)};
  GraspRect r = transform_to_grasp(chain, model.cfg.image_size,
                                   model.cfg.image_size, model.cfg.classifier_fov,
                                   model.cfg.classifier_fov);
  validate_decoded<T>(model.cfg, r);
  return r;
}

}  // namespace graspstn
