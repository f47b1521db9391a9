#pragma once
// Training loop for the joint flow/uncertainty model, dataset evaluation
// with uncertainty-quality metrics, and bidirectional-fusion evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "u2flow/augment.hpp"
#include "u2flow/checkpoint.hpp"
#include "u2flow/config.hpp"
#include "u2flow/error.hpp"
#include "u2flow/fusion.hpp"
#include "u2flow/homography.hpp"
#include "u2flow/image.hpp"
#include "u2flow/log.hpp"
#include "u2flow/losses.hpp"
#include "u2flow/metrics.hpp"
#include "u2flow/model.hpp"
#include "u2flow/optim.hpp"
#include "u2flow/params.hpp"
#include "u2flow/synth.hpp"

namespace u2flow {

// ---- model config in checkpoint metadata ----

inline std::map<std::string, std::string> model_meta(const ModelConfig& cfg) {
  return {
      {"model.input_channels", std::to_string(cfg.input_channels)},
      {"model.feature_dim", std::to_string(cfg.feature_dim)},
      {"model.hidden_dim", std::to_string(cfg.hidden_dim)},
      {"model.context_dim", std::to_string(cfg.context_dim)},
      {"model.motion_dim", std::to_string(cfg.motion_dim)},
      {"model.head_dim", std::to_string(cfg.head_dim)},
      {"model.feature_stride", std::to_string(cfg.feature_stride)},
      {"model.corr_levels", std::to_string(cfg.corr_levels)},
      {"model.corr_radius", std::to_string(cfg.corr_radius)},
      {"model.iterations", std::to_string(cfg.iterations)},
  };
}

inline ModelConfig model_config_from_meta(
    const std::map<std::string, std::string>& meta) {
  auto geti = [&](const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end())
      throw FormatError("checkpoint metadata missing " + key);
    return std::atoi(it->second.c_str());
  };
  ModelConfig cfg;
  cfg.input_channels = geti("model.input_channels");
  cfg.feature_dim = geti("model.feature_dim");
  cfg.hidden_dim = geti("model.hidden_dim");
  cfg.context_dim = geti("model.context_dim");
  cfg.motion_dim = geti("model.motion_dim");
  cfg.head_dim = geti("model.head_dim");
  cfg.feature_stride = geti("model.feature_stride");
  cfg.corr_levels = geti("model.corr_levels");
  cfg.corr_radius = geti("model.corr_radius");
  cfg.iterations = geti("model.iterations");
  cfg.validate();
  return cfg;
}

inline void save_model_checkpoint(const std::string& path,
                                  const ParamStore& params,
                                  const ModelConfig& cfg) {
  save_checkpoint(path, params, model_meta(cfg));
}

inline std::pair<ParamStore, ModelConfig> load_model_checkpoint(
    const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  ModelConfig cfg = model_config_from_meta(ck.meta);
  return {std::move(ck.params), cfg};
}

inline void save_fusion_checkpoint(const std::string& path,
                                   const ParamStore& params,
                                   const FusionNetConfig& fc) {
  save_checkpoint(path, params,
                  {{"fusion.width", std::to_string(fc.width)},
                   {"fusion.image_channels",
                    std::to_string(fc.image_channels)}});
}

inline std::pair<ParamStore, FusionNetConfig> load_fusion_checkpoint(
    const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  auto geti = [&](const std::string& key) {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end())
      throw FormatError("checkpoint metadata missing " + key);
    return std::atoi(it->second.c_str());
  };
  FusionNetConfig fc;
  fc.width = geti("fusion.width");
  fc.image_channels = geti("fusion.image_channels");
  fc.validate();
  return {std::move(ck.params), fc};
}

// ---- training configuration ----

// Default appearance/spatial jitter for training runs; config overrides.
inline AugmentBounds default_train_augment() {
  AugmentBounds b;
  b.brightness = 0.25f;
  b.contrast = 0.25f;
  b.saturation = 0.25f;
  b.hue = 0.1f;
  b.noise_sigma = 0.02f;
  b.erase_count = 2;
  b.translate_frac = 0.08;
  b.rotate_max_deg = 8.0;
  b.scale_jitter = 0.08;
  return b;
}

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  AugmentBounds aug = default_train_augment();
  int steps = 300;
  int batch_size = 4;
  double lr = 2e-4;
  double clip = 1.0;
  bool one_cycle = true;
  double a1 = 0.5;      // augmentation-consistency losses start here
  double a2 = 0.5;      // homography smoothness starts here
  double occ_from = 0;  // occlusion masking starts here (estimates are
                        // noise at init; masking too early drops pixels
                        // arbitrarily and pays a reverse pass per sample)
  bool use_hg = false;  // needs region masks in the dataset
  uint64_t seed = 1;
  int ckpt_every = 0;      // additionally checkpoint every N steps
  std::string out_dir;     // empty: no checkpoints written

  void validate() const {
    model.validate();
    weights.validate();
    aug.validate();
    detail::require(steps > 0 && batch_size > 0,
                    "TrainConfig: steps and batch_size must be positive");
    detail::require(lr > 0, "TrainConfig: lr must be positive");
    detail::require(a1 >= 0 && a1 <= 1 && a2 >= 0 && a2 <= 1,
                    "TrainConfig: activation fractions outside [0,1]");
    detail::require(ckpt_every >= 0, "TrainConfig: bad ckpt_every");
  }
};

inline ModelConfig model_config_from(const ConfigFile& cf) {
  ModelConfig m;
  m.input_channels =
      static_cast<int>(cf.get_int("model", "input_channels", m.input_channels));
  m.feature_dim =
      static_cast<int>(cf.get_int("model", "feature_dim", m.feature_dim));
  m.hidden_dim =
      static_cast<int>(cf.get_int("model", "hidden_dim", m.hidden_dim));
  m.context_dim =
      static_cast<int>(cf.get_int("model", "context_dim", m.context_dim));
  m.motion_dim =
      static_cast<int>(cf.get_int("model", "motion_dim", m.motion_dim));
  m.head_dim = static_cast<int>(cf.get_int("model", "head_dim", m.head_dim));
  m.feature_stride = static_cast<int>(
      cf.get_int("model", "feature_stride", m.feature_stride));
  m.corr_levels =
      static_cast<int>(cf.get_int("model", "corr_levels", m.corr_levels));
  m.corr_radius =
      static_cast<int>(cf.get_int("model", "corr_radius", m.corr_radius));
  m.iterations =
      static_cast<int>(cf.get_int("model", "iterations", m.iterations));
  m.validate();
  return m;
}

inline LossWeights loss_weights_from(const ConfigFile& cf) {
  LossWeights w;
  auto f = [&](const char* key, float def) {
    return static_cast<float>(cf.get_double("weights", key, def));
  };
  w.lambda_hg = f("lambda_hg", w.lambda_hg);
  w.lambda_sm = f("lambda_sm", w.lambda_sm);
  w.lambda_ar = f("lambda_ar", w.lambda_ar);
  w.lambda_unc = f("lambda_unc", w.lambda_unc);
  w.tau_hg = f("tau_hg", w.tau_hg);
  w.zeta = f("zeta", w.zeta);
  w.w_l1 = f("w_l1", w.w_l1);
  w.w_ssim = f("w_ssim", w.w_ssim);
  w.w_census = f("w_census", w.w_census);
  w.occ_alpha1 = f("occ_alpha1", w.occ_alpha1);
  w.occ_alpha2 = f("occ_alpha2", w.occ_alpha2);
  w.edge_sharpness = f("edge_sharpness", w.edge_sharpness);
  w.validate();
  return w;
}

inline AugmentBounds augment_bounds_from(const ConfigFile& cf,
                                         AugmentBounds b) {
  auto f = [&](const char* key, float def) {
    return static_cast<float>(cf.get_double("augment", key, def));
  };
  b.brightness = f("brightness", b.brightness);
  b.contrast = f("contrast", b.contrast);
  b.saturation = f("saturation", b.saturation);
  b.hue = f("hue", b.hue);
  b.noise_sigma = f("noise_sigma", b.noise_sigma);
  b.blur_sigma = f("blur_sigma", b.blur_sigma);
  b.erase_count =
      static_cast<int>(cf.get_int("augment", "erase_count", b.erase_count));
  b.erase_min_frac = f("erase_min_frac", b.erase_min_frac);
  b.erase_max_frac = f("erase_max_frac", b.erase_max_frac);
  b.translate_frac = cf.get_double("augment", "translate_frac", b.translate_frac);
  b.rotate_max_deg = cf.get_double("augment", "rotate_max_deg", b.rotate_max_deg);
  b.scale_jitter = cf.get_double("augment", "scale_jitter", b.scale_jitter);
  b.validate();
  return b;
}

inline SynthConfig synth_config_from(const ConfigFile& cf) {
  SynthConfig s;
  s.size = static_cast<int>(cf.get_int("synth", "size", s.size));
  s.channels = static_cast<int>(cf.get_int("synth", "channels", s.channels));
  s.min_objects =
      static_cast<int>(cf.get_int("synth", "min_objects", s.min_objects));
  s.max_objects =
      static_cast<int>(cf.get_int("synth", "max_objects", s.max_objects));
  s.motion_min = cf.get_double("synth", "motion_min", s.motion_min);
  s.motion_max = cf.get_double("synth", "motion_max", s.motion_max);
  s.bg_motion_scale =
      cf.get_double("synth", "bg_motion_scale", s.bg_motion_scale);
  s.object_rot_max_deg =
      cf.get_double("synth", "object_rot_max_deg", s.object_rot_max_deg);
  s.object_scale_jitter =
      cf.get_double("synth", "object_scale_jitter", s.object_scale_jitter);
  s.bg_homography = cf.get_bool("synth", "bg_homography", s.bg_homography);
  s.obj_radius_min =
      cf.get_double("synth", "obj_radius_min", s.obj_radius_min);
  s.obj_radius_max =
      cf.get_double("synth", "obj_radius_max", s.obj_radius_max);
  s.noise_sigma = cf.get_double("synth", "noise_sigma", s.noise_sigma);
  s.corrupt_next = cf.get_bool("synth", "corrupt_next", s.corrupt_next);
  s.corrupt_strength =
      cf.get_double("synth", "corrupt_strength", s.corrupt_strength);
  s.validate();
  return s;
}

inline TrainConfig train_config_from(const ConfigFile& cf) {
  TrainConfig t;
  t.model = model_config_from(cf);
  t.weights = loss_weights_from(cf);
  t.aug = augment_bounds_from(cf, t.aug);
  t.steps = static_cast<int>(cf.get_int("train", "steps", t.steps));
  t.batch_size =
      static_cast<int>(cf.get_int("train", "batch_size", t.batch_size));
  t.lr = cf.get_double("train", "lr", t.lr);
  t.clip = cf.get_double("train", "clip", t.clip);
  const std::string sched =
      cf.get_string("train", "schedule", t.one_cycle ? "one_cycle" : "constant");
  if (sched == "one_cycle")
    t.one_cycle = true;
  else if (sched == "constant")
    t.one_cycle = false;
  else
    throw FormatError("config: [train] schedule must be one_cycle|constant");
  t.a1 = cf.get_double("train", "a1", t.a1);
  t.a2 = cf.get_double("train", "a2", t.a2);
  t.use_hg = cf.get_bool("train", "use_hg", t.use_hg);
  t.seed = static_cast<uint64_t>(cf.get_int("train", "seed",
                                            static_cast<int64_t>(t.seed)));
  t.ckpt_every =
      static_cast<int>(cf.get_int("train", "ckpt_every", t.ckpt_every));
  t.validate();
  return t;
}

// ---- run log ----

struct StepLog {
  int step = 0;
  double lr = 0;
  double grad_norm = 0;
  double total = 0;
  double photo = 0;   // weighted contributions, summing to ~total
  double smooth = 0;
  double ar = 0;
  double unc = 0;
  double hg = 0;
};

namespace detail {

inline std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace detail

struct RunLog {
  std::vector<StepLog> steps;

  std::string to_csv() const {
    std::ostringstream os;
    os << "step,lr,grad_norm,total,photometric,smoothness,aug_residual,"
          "uncertainty,homography\n";
    for (const auto& s : steps)
      os << s.step << ',' << detail::fmt9(s.lr) << ','
         << detail::fmt9(s.grad_norm) << ',' << detail::fmt9(s.total) << ','
         << detail::fmt9(s.photo) << ',' << detail::fmt9(s.smooth) << ','
         << detail::fmt9(s.ar) << ',' << detail::fmt9(s.unc) << ','
         << detail::fmt9(s.hg) << '\n';
    return os.str();
  }
};

// ---- training loop ----

// Unsupervised objective over image pairs: per-iteration photometric and
// smoothness terms on the original pair, augmentation-consistency residual
// and uncertainty terms on an augmented replay (after fraction a1), and
// region homography smoothness on the final flow (after fraction a2).
// Ground-truth flow never enters the loss; synthetic gt is used only by
// evaluation. Deterministic for a fixed config and dataset.
inline RunLog train(const TrainConfig& tc,
                    const std::vector<SynthSample>& dataset,
                    ParamStore* params) {
  tc.validate();
  detail::require(!dataset.empty(), "train: empty dataset");
  for (const auto& s : dataset)
    tc.model.validate_input(s.img_cur.height, s.img_cur.width);

  Adam adam(*params);
  LrSchedule sched;
  sched.kind = tc.one_cycle ? LrSchedule::Kind::kOneCycle
                            : LrSchedule::Kind::kConstant;
  sched.base_lr = tc.lr;
  sched.total_steps = tc.steps;
  sched.validate();

  // "After fraction a" means steps with index >= a*steps; a=1 never fires.
  const int aug_from = static_cast<int>(std::ceil(tc.a1 * tc.steps));
  const int hg_from = static_cast<int>(std::ceil(tc.a2 * tc.steps));

  RunLog log;
  ParamStore prev = *params;  // params before the most recent update
  for (int step = 0; step < tc.steps; ++step) {
    const bool aug_on = step >= aug_from;
    const bool hg_on = tc.use_hg && step >= hg_from;

    Graph<float> g;
    auto bound = bind_params(g, *params, /*grads=*/true);
    std::vector<Tensor<float>> totals;
    StepLog sl;
    sl.step = step;
    sl.lr = sched.at(step);

    for (int b = 0; b < tc.batch_size; ++b) {
      const SynthSample& s =
          dataset[(static_cast<size_t>(step) * tc.batch_size + b) %
                  dataset.size()];
      const int H = s.img_cur.height, W = s.img_cur.width;
      auto i1 = tensor_from_image(g, s.img_cur);
      auto i2 = tensor_from_image(g, s.img_next);
      auto out = forward_model(g, bound, tc.model, i1, i2);
      const int K = static_cast<int>(out.flow_full.size());

      // Occlusion from the current estimates in both directions; the mask
      // itself is data, not a differentiated quantity. Early in training the
      // estimates can be mutually inconsistent everywhere; a mask that keeps
      // nothing would starve the photometric term, so it falls back to the
      // unmasked loss for that sample.
      const FlowField f_fwd = flow_from_tensor(out.flow_full.back());
      const InferenceResult rev = infer(*params, tc.model, s.img_next,
                                        s.img_cur);
      MaskImage occ = occlusion_mask(f_fwd, rev.flow, tc.weights.occ_alpha1,
                                     tc.weights.occ_alpha2);
      if (occ.count() == H * W) {
        logf(2, "step %d sample %d: estimates occluded everywhere, "
                "dropping the mask",
             step, b);
        occ = MaskImage(W, H);
      }
      auto keep = inverse_mask_tensor<float>(g, occ, H, W);

      // Augmented replay: the final flow, mapped into the augmented frame,
      // serves as a constant pseudo-ground-truth for every iterate.
      std::optional<ModelOut<float>> student;
      std::optional<Tensor<float>> aug_target, keep_aug;
      if (aug_on) {
        const uint64_t aseed = detail::splitmix64(
            tc.seed ^ detail::splitmix64(
                          static_cast<uint64_t>(step) * 131 +
                          static_cast<uint64_t>(b)));
        const AugmentSpec spec = sample_spec(aseed, tc.aug);
        const AugmentedBatch ab =
            apply_augment(spec, s.img_cur, s.img_next, f_fwd, occ);
        // An augmentation that leaves no supervisable pixels (everything
        // occluded or pushed out of frame) contributes no augmented terms.
        if (ab.occ.count() < H * W) {
          student = forward_model(g, bound, tc.model,
                                  tensor_from_image(g, ab.img1),
                                  tensor_from_image(g, ab.img2));
          aug_target = tensor_from_flow(g, ab.flow);
          keep_aug = inverse_mask_tensor<float>(g, ab.occ, H, W);
        } else {
          logf(2, "step %d sample %d: augmented mask empty, skipping "
                  "augmented terms",
               step, b);
        }
      }

      std::vector<IterationLossTerms<float>> iters;
      for (int k = 0; k < K; ++k) {
        IterationLossTerms<float> t;
        t.photometric =
            photometric_loss(i1, i2, out.flow_full[static_cast<size_t>(k)],
                             keep, tc.weights);
        t.smoothness = smoothness_loss(
            out.flow_full[static_cast<size_t>(k)], i1,
            tc.weights.edge_sharpness);
        if (student) {
          auto dhat = flow_residual_l1(
              student->flow_full[static_cast<size_t>(k)], *aug_target);
          t.aug_residual = augmentation_reg_loss(dhat, *keep_aug);
          t.uncertainty = uncertainty_nll(
              student->logvar_full[static_cast<size_t>(k)], detach(dhat),
              *keep_aug);
        }
        const double wk =
            std::pow(static_cast<double>(tc.weights.zeta), K - 1 - k);
        sl.photo += wk * t.photometric.value() / tc.batch_size;
        sl.smooth += wk * tc.weights.lambda_sm * t.smoothness->value() /
                     tc.batch_size;
        if (t.aug_residual)
          sl.ar += wk * tc.weights.lambda_ar * t.aug_residual->value() /
                   tc.batch_size;
        if (t.uncertainty)
          sl.unc += wk * tc.weights.lambda_unc * t.uncertainty->value() /
                    tc.batch_size;
        iters.push_back(std::move(t));
      }

      std::optional<Tensor<float>> hg;
      if (hg_on && !s.regions.empty()) {
        const ScalarMap alpha = scalar_map_from_tensor(out.logvar_full.back());
        RansacOptions ro;
        ro.seed = detail::splitmix64(tc.seed * 977 +
                                     static_cast<uint64_t>(step) * 31 +
                                     static_cast<uint64_t>(b));
        const auto hres = homography_smoothness_loss(
            g, out.flow_full.back(), s.regions, alpha, tc.weights.tau_hg, ro);
        if (hres.any_fitted) {
          hg = hres.loss;
          sl.hg += static_cast<double>(tc.weights.lambda_hg) *
                   hres.loss.value() / tc.batch_size;
        }
      }
      totals.push_back(total_loss(g, iters, hg, tc.weights));
    }

    Tensor<float> total = totals[0];
    for (size_t i = 1; i < totals.size(); ++i) total = add(total, totals[i]);
    total = mul_scalar(total, 1.f / static_cast<float>(tc.batch_size));
    sl.total = total.value();
    if (!std::isfinite(sl.total)) {
      if (!tc.out_dir.empty())
        save_model_checkpoint(tc.out_dir + "/last_good.ckpt", prev, tc.model);
      throw TrainingFault("non-finite loss at step " + std::to_string(step) +
                          (tc.out_dir.empty()
                               ? ""
                               : "; last-good checkpoint written to " +
                                     tc.out_dir + "/last_good.ckpt"));
    }

    g.backward(total);
    auto grads = collect_grads(g, bound, *params);
    sl.grad_norm = clip_global_norm(&grads, tc.clip);
    prev = *params;
    adam.step(params, grads, sl.lr);
    log.steps.push_back(sl);
    logf(1, "step %d/%d lr %.3g total %.5f photo %.5f", step + 1, tc.steps,
         sl.lr, sl.total, sl.photo);

    if (!tc.out_dir.empty() && tc.ckpt_every > 0 &&
        (step + 1) % tc.ckpt_every == 0)
      save_model_checkpoint(tc.out_dir + "/step_" + std::to_string(step + 1) +
                                ".ckpt",
                            *params, tc.model);
  }
  if (!tc.out_dir.empty())
    save_model_checkpoint(tc.out_dir + "/final.ckpt", *params, tc.model);
  return log;
}

// ---- evaluation ----

struct SampleEval {
  EvalReport report;
  double epe_occ = 0, epe_noc = 0;  // split by ground-truth occlusion
  long valid = 0, occ_count = 0, noc_count = 0;
};

namespace detail {

inline MaskImage valid_mask_of(const FlowField& gt) {
  MaskImage m(gt.width, gt.height, 1);
  if (!gt.valid.empty())
    for (size_t i = 0; i < m.data.size(); ++i)
      m.data[i] = gt.valid[i] ? 1 : 0;
  return m;
}

}  // namespace detail

// Scores one prediction against ground truth. Region-restricted rates fall
// back to 0 with a zero count when the region is empty.
inline SampleEval evaluate_prediction(const FlowField& pred,
                                      const ScalarMap& variance,
                                      const FlowField& gt,
                                      const MaskImage& occ_gt) {
  const MaskImage valid = detail::valid_mask_of(gt);
  MaskImage noc(gt.width, gt.height), occ(gt.width, gt.height);
  for (size_t i = 0; i < valid.data.size(); ++i) {
    noc.data[i] = static_cast<uint8_t>(valid.data[i] && !occ_gt.data[i]);
    occ.data[i] = static_cast<uint8_t>(valid.data[i] && occ_gt.data[i]);
  }
  SampleEval e;
  for (uint8_t v : valid.data) e.valid += v;
  for (uint8_t v : occ.data) e.occ_count += v;
  for (uint8_t v : noc.data) e.noc_count += v;

  e.report.epe = epe(pred, gt, valid);
  e.report.fl_all = fl_rate(pred, gt, valid);
  if (e.noc_count > 0) e.report.fl_noc = fl_rate(pred, gt, valid, &noc);
  if (e.occ_count > 0) e.report.fl_occ = fl_rate(pred, gt, valid, &occ);

  const ScalarMap em = epe_map(pred, gt);
  e.report.ause = ause(sparsification(em, variance, valid));
  e.report.spearman_cc = spearman_cc(variance, em, valid);

  double so = 0, sn = 0;
  for (size_t i = 0; i < em.data.size(); ++i) {
    if (occ.data[i]) so += em.data[i];
    if (noc.data[i]) sn += em.data[i];
  }
  if (e.occ_count > 0) e.epe_occ = so / static_cast<double>(e.occ_count);
  if (e.noc_count > 0) e.epe_noc = sn / static_cast<double>(e.noc_count);
  return e;
}

inline SampleEval evaluate_sample(const ParamStore& params,
                                  const ModelConfig& cfg,
                                  const SynthSample& s) {
  const InferenceResult r = infer(params, cfg, s.img_cur, s.img_next);
  return evaluate_prediction(r.flow, r.variance, s.flow_fwd, s.occ_fwd);
}

struct DatasetEval {
  std::vector<SampleEval> frames;
  SampleEval aggregate;  // weighted by the relevant pixel counts
};

// When `pooled` is given, all valid pixels across frames are concatenated
// and a single sparsification curve is computed over the pool. `preds`
// collects the raw per-frame inference results for export.
inline DatasetEval evaluate(const ParamStore& params, const ModelConfig& cfg,
                            const std::vector<SynthSample>& data,
                            SparsificationResult* pooled = nullptr,
                            std::vector<InferenceResult>* preds = nullptr) {
  detail::require(!data.empty(), "evaluate: empty dataset");
  DatasetEval ev;
  double cc_weight = 0;
  std::vector<double> pool_err, pool_unc;
  for (const auto& s : data) {
    const InferenceResult r = infer(params, cfg, s.img_cur, s.img_next);
    ev.frames.push_back(
        evaluate_prediction(r.flow, r.variance, s.flow_fwd, s.occ_fwd));
    if (preds) preds->push_back(r);
    if (pooled) {
      const ScalarMap em = epe_map(r.flow, s.flow_fwd);
      const MaskImage valid = detail::valid_mask_of(s.flow_fwd);
      for (size_t i = 0; i < em.data.size(); ++i)
        if (valid.data[i]) {
          pool_err.push_back(em.data[i]);
          pool_unc.push_back(r.variance.data[i]);
        }
    }
    const SampleEval& f = ev.frames.back();
    auto& a = ev.aggregate;
    a.report.epe += f.report.epe * static_cast<double>(f.valid);
    a.report.fl_all += f.report.fl_all * static_cast<double>(f.valid);
    a.report.fl_noc += f.report.fl_noc * static_cast<double>(f.noc_count);
    a.report.fl_occ += f.report.fl_occ * static_cast<double>(f.occ_count);
    a.report.ause += f.report.ause * static_cast<double>(f.valid);
    if (f.report.spearman_cc) {
      if (!a.report.spearman_cc) a.report.spearman_cc = 0.0;
      *a.report.spearman_cc +=
          *f.report.spearman_cc * static_cast<double>(f.valid);
      cc_weight += static_cast<double>(f.valid);
    }
    a.epe_occ += f.epe_occ * static_cast<double>(f.occ_count);
    a.epe_noc += f.epe_noc * static_cast<double>(f.noc_count);
    a.valid += f.valid;
    a.occ_count += f.occ_count;
    a.noc_count += f.noc_count;
  }
  auto& a = ev.aggregate;
  detail::require(a.valid > 0, "evaluate: no valid pixels in dataset");
  a.report.epe /= static_cast<double>(a.valid);
  a.report.fl_all /= static_cast<double>(a.valid);
  a.report.ause /= static_cast<double>(a.valid);
  if (a.report.spearman_cc) *a.report.spearman_cc /= cc_weight;
  if (a.noc_count > 0) {
    a.report.fl_noc /= static_cast<double>(a.noc_count);
    a.epe_noc /= static_cast<double>(a.noc_count);
  }
  if (a.occ_count > 0) {
    a.report.fl_occ /= static_cast<double>(a.occ_count);
    a.epe_occ /= static_cast<double>(a.occ_count);
  }
  if (pooled) {
    const int n = static_cast<int>(pool_err.size());
    ScalarMap err(n, 1), unc(n, 1);
    MaskImage all(n, 1, 1);
    for (int i = 0; i < n; ++i) {
      err.data[static_cast<size_t>(i)] = pool_err[static_cast<size_t>(i)];
      unc.data[static_cast<size_t>(i)] = pool_unc[static_cast<size_t>(i)];
    }
    *pooled = sparsification(err, unc, all);
  }
  return ev;
}

// ---- fusion evaluation ----

struct FusionEvalRow {
  double epe_all = 0, epe_occ = 0, epe_noc = 0;
  double fl_all = 0;
};

struct FusionEvalReport {
  FusionEvalRow unfused, fused_uncertainty, fused_occlusion;
  float theta = 0;
};

namespace detail {

struct SplitAcc {
  double e_all = 0, e_occ = 0, e_noc = 0;
  long n_all = 0, n_occ = 0, n_noc = 0, outliers = 0;

  void add(const FlowField& pred, const FlowField& gt, const MaskImage& occ) {
    const ScalarMap em = epe_map(pred, gt);
    for (int y = 0; y < gt.height; ++y)
      for (int x = 0; x < gt.width; ++x) {
        const size_t i = static_cast<size_t>(y) * gt.width + x;
        const double e = em.data[i];
        e_all += e;
        ++n_all;
        if (occ.data[i]) {
          e_occ += e;
          ++n_occ;
        } else {
          e_noc += e;
          ++n_noc;
        }
        const double mag = std::sqrt(
            static_cast<double>(gt.u(y, x)) * gt.u(y, x) +
            static_cast<double>(gt.v(y, x)) * gt.v(y, x));
        if (e > 3.0 && e > 0.05 * mag) ++outliers;
      }
  }

  FusionEvalRow row() const {
    FusionEvalRow r;
    if (n_all > 0) {
      r.epe_all = e_all / static_cast<double>(n_all);
      r.fl_all = 100.0 * static_cast<double>(outliers) /
                 static_cast<double>(n_all);
    }
    if (n_occ > 0) r.epe_occ = e_occ / static_cast<double>(n_occ);
    if (n_noc > 0) r.epe_noc = e_noc / static_cast<double>(n_noc);
    return r;
  }
};

}  // namespace detail

// Scores the forward flow as-is, with uncertainty-guided fusion, and with
// the occlusion-mask fusion baseline, split by ground-truth occlusion.
inline FusionEvalReport run_fusion_eval(const ParamStore& model_params,
                                        const ModelConfig& mcfg,
                                        const ParamStore& fusion_params,
                                        const std::vector<SynthSample>& data,
                                        float theta) {
  detail::require(!data.empty(), "run_fusion_eval: empty dataset");
  detail::SplitAcc plain, unc, occb;
  for (const auto& s : data) {
    const InferenceResult fwd = infer(model_params, mcfg, s.img_cur,
                                      s.img_next);
    const InferenceResult rev = infer(model_params, mcfg, s.img_next,
                                      s.img_cur);
    const InferenceResult back = infer(model_params, mcfg, s.img_cur,
                                       s.img_prev);
    const InferenceResult back_rev = infer(model_params, mcfg, s.img_prev,
                                           s.img_cur);
    const FlowField proposal =
        fusion_net_flow(fusion_params, back.flow, s.img_cur);

    const FusionMasks um =
        reliability_masks(fwd.variance, back.variance, theta);
    const FusionMasks om = occlusion_fusion_masks(
        occlusion_mask(fwd.flow, rev.flow),
        occlusion_mask(back.flow, back_rev.flow));

    plain.add(fwd.flow, s.flow_fwd, s.occ_fwd);
    unc.add(fuse(fwd.flow, proposal, um), s.flow_fwd, s.occ_fwd);
    occb.add(fuse(fwd.flow, proposal, om), s.flow_fwd, s.occ_fwd);
  }
  FusionEvalReport rep;
  rep.theta = theta;
  rep.unfused = plain.row();
  rep.fused_uncertainty = unc.row();
  rep.fused_occlusion = occb.row();
  return rep;
}

}  // namespace u2flow
