#pragma once
// Adam with decoupled per-step learning rate, global gradient-norm
// clipping, and learning-rate schedules (constant and one-cycle).

#include <cmath>
#include <cstdint>
#include <vector>

#include "u2flow/error.hpp"
#include "u2flow/params.hpp"

namespace u2flow {

// Scales all gradients so their joint l2 norm is at most `max_norm`
// (disabled when max_norm <= 0). Returns the pre-clip norm.
inline double clip_global_norm(std::vector<std::vector<float>>* grads,
                               double max_norm) {
  double sq = 0;
  for (const auto& g : *grads)
    for (float v : g) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : *grads)
      for (float& v : g) v = static_cast<float>(v * s);
  }
  return norm;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment buffers are laid out in ParamStore entry order and kept in double
// so long runs stay deterministic and well-conditioned.
struct Adam {
  AdamConfig cfg;
  long t = 0;
  std::vector<std::vector<double>> m, v;

  explicit Adam(const ParamStore& store, AdamConfig c = {}) : cfg(c) {
    m.reserve(store.entries.size());
    v.reserve(store.entries.size());
    for (const auto& e : store.entries) {
      m.emplace_back(e.data.size(), 0.0);
      v.emplace_back(e.data.size(), 0.0);
    }
  }

  void step(ParamStore* store, const std::vector<std::vector<float>>& grads,
            double lr) {
    detail::require(grads.size() == store->entries.size() &&
                        grads.size() == m.size(),
                    "Adam: gradient layout does not match the store");
    ++t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (size_t i = 0; i < grads.size(); ++i) {
      auto& p = store->entries[i].data;
      detail::require(grads[i].size() == p.size(),
                      "Adam: gradient size mismatch at entry " +
                          store->entries[i].name);
      for (size_t j = 0; j < p.size(); ++j) {
        const double g = grads[i][j];
        m[i][j] = cfg.beta1 * m[i][j] + (1.0 - cfg.beta1) * g;
        v[i][j] = cfg.beta2 * v[i][j] + (1.0 - cfg.beta2) * g * g;
        const double mh = m[i][j] / bc1;
        const double vh = v[i][j] / bc2;
        p[j] = static_cast<float>(p[j] - lr * mh / (std::sqrt(vh) + cfg.eps));
      }
    }
  }
};

// Learning-rate schedule over a fixed horizon. The one-cycle form ramps
// linearly from base/div_factor up to base at pct_start of the run, then
// linearly down to base/final_div; the peak is hit at exactly one step and
// the final rate sits below the starting rate.
struct LrSchedule {
  enum class Kind { kConstant, kOneCycle };

  Kind kind = Kind::kConstant;
  double base_lr = 1e-3;  // constant rate, or the one-cycle peak
  int total_steps = 1;
  double pct_start = 0.3;
  double div_factor = 10.0;
  double final_div = 100.0;

  void validate() const {
    detail::require(total_steps > 0 && base_lr > 0,
                    "LrSchedule: steps and base_lr must be positive");
    detail::require(pct_start >= 0 && pct_start <= 1,
                    "LrSchedule: pct_start outside [0,1]");
    detail::require(div_factor > 1 && final_div > div_factor,
                    "LrSchedule: need final_div > div_factor > 1");
  }

  double at(int step) const {
    detail::require(step >= 0 && step < total_steps,
                    "LrSchedule: step outside the horizon");
    if (kind == Kind::kConstant) return base_lr;
    if (total_steps == 1) return base_lr;
    const int last = total_steps - 1;
    const int peak = static_cast<int>(std::lround(pct_start * last));
    const double lo = base_lr / div_factor;
    const double fin = base_lr / final_div;
    // (1-f)*a + f*b is exact at both endpoints, so the peak value is hit
    // precisely once and the last step lands exactly on base_lr/final_div.
    if (step <= peak) {
      if (peak == 0) return base_lr;
      const double f = static_cast<double>(step) / peak;
      return (1.0 - f) * lo + f * base_lr;
    }
    const double f = static_cast<double>(step - peak) / (last - peak);
    return (1.0 - f) * base_lr + f * fin;
  }
};

}  // namespace u2flow
