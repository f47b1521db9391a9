#pragma once
// Uncertainty-guided bidirectional flow fusion: reliability masks derived
// from the predicted variance, a small convolutional net mapping the
// backward flow (plus the center image) to a forward-flow proposal, and
// exact per-pixel selection between the original and proposed flow.

#include <cstdint>
#include <string>
#include <vector>

#include "u2flow/error.hpp"
#include "u2flow/image.hpp"
#include "u2flow/log.hpp"
#include "u2flow/losses.hpp"
#include "u2flow/model.hpp"
#include "u2flow/optim.hpp"
#include "u2flow/params.hpp"

namespace u2flow {

struct FusionMasks {
  MaskImage m_f;      // forward estimate is confident
  MaskImage m_b;      // backward estimate is confident
  MaskImage m_fused;  // replace: forward unreliable but backward reliable
};

// Confidence is a strict variance threshold; a pixel sitting exactly at
// theta is not confident.
inline FusionMasks reliability_masks(const ScalarMap& var_fwd,
                                     const ScalarMap& var_bwd, float theta) {
  detail::require(theta > 0, "reliability_masks: theta must be positive");
  detail::require(var_fwd.width == var_bwd.width &&
                      var_fwd.height == var_bwd.height,
                  "reliability_masks: variance map sizes differ");
  FusionMasks m;
  m.m_f = MaskImage(var_fwd.width, var_fwd.height);
  m.m_b = MaskImage(var_fwd.width, var_fwd.height);
  m.m_fused = MaskImage(var_fwd.width, var_fwd.height);
  for (size_t i = 0; i < m.m_f.data.size(); ++i) {
    m.m_f.data[i] = var_fwd.data[i] < theta ? 1 : 0;
    m.m_b.data[i] = var_bwd.data[i] < theta ? 1 : 0;
    m.m_fused.data[i] = static_cast<uint8_t>((1 - m.m_f.data[i]) *
                                             m.m_b.data[i]);
  }
  return m;
}

// Baseline mask source for ablations: confidence = "not occluded" from the
// forward-backward occlusion check instead of the learned variance.
inline FusionMasks occlusion_fusion_masks(const MaskImage& occ_fwd,
                                          const MaskImage& occ_bwd) {
  detail::require(occ_fwd.width == occ_bwd.width &&
                      occ_fwd.height == occ_bwd.height,
                  "occlusion_fusion_masks: mask sizes differ");
  FusionMasks m;
  m.m_f = MaskImage(occ_fwd.width, occ_fwd.height);
  m.m_b = MaskImage(occ_fwd.width, occ_fwd.height);
  m.m_fused = MaskImage(occ_fwd.width, occ_fwd.height);
  for (size_t i = 0; i < m.m_f.data.size(); ++i) {
    m.m_f.data[i] = occ_fwd.data[i] ? 0 : 1;
    m.m_b.data[i] = occ_bwd.data[i] ? 0 : 1;
    m.m_fused.data[i] = static_cast<uint8_t>((1 - m.m_f.data[i]) *
                                             m.m_b.data[i]);
  }
  return m;
}

// Per-pixel selection: the proposal wherever the fused mask is set, the
// original forward flow elsewhere. Pure selection, so idempotent.
inline FlowField fuse(const FlowField& f_fwd, const FlowField& f_bar,
                      const FusionMasks& m) {
  detail::require(f_fwd.width == f_bar.width && f_fwd.height == f_bar.height,
                  "fuse: flow sizes differ");
  detail::require(m.m_fused.width == f_fwd.width &&
                      m.m_fused.height == f_fwd.height,
                  "fuse: mask size differs from flow size");
  FlowField out(f_fwd.width, f_fwd.height);
  for (size_t i = 0; i < m.m_fused.data.size(); ++i) {
    const FlowField& src = m.m_fused.data[i] ? f_bar : f_fwd;
    out.data[2 * i] = src.data[2 * i];
    out.data[2 * i + 1] = src.data[2 * i + 1];
  }
  return out;
}

struct FusionNetConfig {
  int width = 32;
  int image_channels = 3;

  void validate() const {
    detail::require(width > 0, "FusionNetConfig: width must be positive");
    detail::require(image_channels == 1 || image_channels == 3,
                    "FusionNetConfig: channels must be 1 or 3");
  }
};

inline ParamStore init_fusion_params(const FusionNetConfig& cfg,
                                     uint64_t seed) {
  cfg.validate();
  ParamStore store;
  detail::add_conv_param(&store, "fuse.c1", cfg.width, 3, 3,
                         2 + cfg.image_channels, seed);
  detail::add_conv_param(&store, "fuse.c2", cfg.width, 3, 3, cfg.width, seed);
  detail::add_conv_param(&store, "fuse.c3", cfg.width, 3, 3, cfg.width, seed);
  detail::add_conv_param(&store, "fuse.c4", 2, 3, 3, cfg.width, seed);
  return store;
}

template <typename T>
Tensor<T> fusion_forward(const BoundParams<T>& p, const Tensor<T>& flow_bwd,
                         const Tensor<T>& img) {
  detail::require(flow_bwd.rank() == 3 && flow_bwd.dim(2) == 2,
                  "fusion_forward: (H,W,2) backward flow required");
  detail::require(img.rank() == 3 && img.dim(0) == flow_bwd.dim(0) &&
                      img.dim(1) == flow_bwd.dim(1),
                  "fusion_forward: image size differs from flow size");
  Tensor<T> x = concat<T>({flow_bwd, img}, 2);
  x = relu(detail::conv_named(p, "fuse.c1", x, 1, 1));
  x = relu(detail::conv_named(p, "fuse.c2", x, 1, 1));
  x = relu(detail::conv_named(p, "fuse.c3", x, 1, 1));
  return detail::conv_named(p, "fuse.c4", x, 1, 1);
}

inline FlowField fusion_net_flow(const ParamStore& params,
                                 const FlowField& flow_bwd,
                                 const RasterImage& img) {
  Graph<float> g;
  auto bound = bind_params(g, params, /*grads=*/false);
  auto out = fusion_forward(bound, tensor_from_flow(g, flow_bwd),
                            tensor_from_image(g, img));
  return flow_from_tensor(out);
}

// One supervision item: predict `target` (the model's forward flow) from
// the backward flow and center image, scored only where `keep` is set.
struct FusionSample {
  FlowField flow_bwd;
  RasterImage img;
  FlowField target;
  MaskImage keep;
};

inline FusionSample make_fusion_sample(const ParamStore& model_params,
                                       const ModelConfig& mcfg,
                                       const RasterImage& prev,
                                       const RasterImage& cur,
                                       const RasterImage& next, float theta) {
  const InferenceResult fwd = infer(model_params, mcfg, cur, next);
  const InferenceResult bwd = infer(model_params, mcfg, cur, prev);
  const FusionMasks masks =
      reliability_masks(fwd.variance, bwd.variance, theta);
  FusionSample s;
  s.flow_bwd = bwd.flow;
  s.img = cur;
  s.target = fwd.flow;
  s.keep = MaskImage(cur.width, cur.height);
  for (size_t i = 0; i < s.keep.data.size(); ++i)
    s.keep.data[i] = static_cast<uint8_t>(masks.m_f.data[i] *
                                          masks.m_b.data[i]);
  return s;
}

namespace detail {

template <typename T>
Tensor<T> keep_tensor(Graph<T>& g, const MaskImage& mask) {
  std::vector<T> v(mask.data.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = mask.data[i] ? T(1) : T(0);
  return g.constant(Shape{mask.height, mask.width, 1}, std::move(v));
}

inline bool mask_empty(const MaskImage& m) {
  for (uint8_t v : m.data)
    if (v) return false;
  return true;
}

}  // namespace detail

struct FusionTrainOptions {
  int steps = 400;
  double lr = 2e-3;  // peak rate when annealed, constant rate otherwise
  double clip = 1.0;
  bool one_cycle = true;
};

struct FusionTrainStats {
  int steps_run = 0;
  int skipped = 0;
  double first_loss = 0;
  double final_loss = 0;
};

// Cycles through the samples in order, one Adam step per non-empty sample.
// Samples whose supervision mask keeps nothing are skipped with a
// diagnostic and consume a schedule slot but no optimizer step.
inline FusionTrainStats train_fusion_net(ParamStore* params,
                                         const std::vector<FusionSample>& data,
                                         const FusionTrainOptions& opt) {
  detail::require(!data.empty(), "train_fusion_net: empty dataset");
  detail::require(opt.steps > 0 && opt.lr > 0,
                  "train_fusion_net: steps and lr must be positive");
  Adam adam(*params);
  LrSchedule sched;
  sched.kind = opt.one_cycle ? LrSchedule::Kind::kOneCycle
                             : LrSchedule::Kind::kConstant;
  sched.base_lr = opt.lr;
  sched.total_steps = opt.steps;
  sched.validate();
  FusionTrainStats stats;
  bool first_recorded = false;
  for (int step = 0; step < opt.steps; ++step) {
    const FusionSample& s = data[static_cast<size_t>(step) % data.size()];
    if (detail::mask_empty(s.keep)) {
      ++stats.skipped;
      logf(2, "fusion step %d: empty supervision mask, skipped", step);
      continue;
    }
    Graph<float> g;
    auto bound = bind_params(g, *params, /*grads=*/true);
    auto pred = fusion_forward(bound, tensor_from_flow(g, s.flow_bwd),
                               tensor_from_image(g, s.img));
    auto loss = detail::masked_mean_map(
        flow_residual_l1(pred, tensor_from_flow(g, s.target)),
        detail::keep_tensor(g, s.keep));
    const double lv = loss.value();
    if (!std::isfinite(lv))
      throw TrainingFault("fusion training produced a non-finite loss");
    if (!first_recorded) {
      stats.first_loss = lv;
      first_recorded = true;
    }
    stats.final_loss = lv;
    g.backward(loss);
    auto grads = collect_grads(g, bound, *params);
    clip_global_norm(&grads, opt.clip);
    adam.step(params, grads, sched.at(step));
    ++stats.steps_run;
  }
  return stats;
}

// Mean supervised l1 over the non-empty samples, without gradients.
inline double fusion_eval_loss(const ParamStore& params,
                               const std::vector<FusionSample>& data) {
  double sum = 0;
  int counted = 0;
  for (const auto& s : data) {
    if (detail::mask_empty(s.keep)) continue;
    Graph<float> g;
    auto bound = bind_params(g, params, /*grads=*/false);
    auto pred = fusion_forward(bound, tensor_from_flow(g, s.flow_bwd),
                               tensor_from_image(g, s.img));
    auto loss = detail::masked_mean_map(
        flow_residual_l1(pred, tensor_from_flow(g, s.target)),
        detail::keep_tensor(g, s.keep));
    sum += loss.value();
    ++counted;
  }
  if (counted == 0)
    throw DegenerateMaskError("fusion_eval_loss: every sample is empty");
  return sum / counted;
}

}  // namespace u2flow
