#pragma once

#include <cstdio>
#include <vector>

#include "omnigf/core/autodiff.hpp"
#include "omnigf/scene/scene.hpp"

namespace omnigf {

struct LossWeights {
  double lm = 1.0;
  double hm = 10.0;
  double inout = 0.1;
  double soc = 1.0;
};

struct LossReport {
  double l_lm = 0, l_hm = 0, l_inout = 0, l_soc = 0, l_total = 0;
  // per-component sample counts
  std::int64_t lm_tokens = 0;
  int hm_persons = 0;
  int inout_persons = 0;
  int soc_pairs = 0;
};

// Ground-truth heatmap: peak-normalized 2D Gaussian at the target, evaluated
// at cell centers. sigma is in cells; value 1 where a center coincides with
// the target exactly.
template <class T>
Tensor<T> render_gaussian(Point target, int h, int w, double sigma) {
  Tensor<T> m({h, w});
  const double cx = target.x * w;
  const double cy = target.y * h;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double dx = (c + 0.5) - cx;
      const double dy = (r + 0.5) - cy;
      m.at(r, c) = static_cast<T>(std::exp(-(dx * dx + dy * dy) * inv));
    }
  return m;
}

// Mask-weighted mean cross-entropy. Positions with weight zero contribute
// neither value nor gradient; an all-zero mask yields a hard zero.
template <class T>
Var<T> loss_lm(const Var<T>& logits, const std::vector<int>& targets,
               const std::vector<T>& mask) {
  T wsum = 0;
  for (T w : mask) wsum += w;
  if (wsum == T(0)) {
    std::fprintf(stderr, "[omnigf] warning: all-zero loss mask, lm loss defined as 0\n");
    return constant_scalar(T(0));
  }
  return scale(masked_ce_sum(logits, targets, mask), T(1) / wsum);
}

// MSE against the rendered ground truth; only inside persons carry a target,
// so outside/unknown persons contribute exactly zero (no gradient either).
template <class T>
Var<T> loss_hm(const Var<T>& pred, const Tensor<T>& gt, bool inside) {
  if (!inside) return constant_scalar(T(0));
  if (!pred->value.same_shape(gt)) throw std::invalid_argument("loss_hm: shape mismatch");
  return scale(mse_sum(pred, gt), T(1) / static_cast<T>(gt.size()));
}

template <class T>
Var<T> loss_inout(const Var<T>& logits, const Tensor<T>& labels) {
  if (logits->value.size() == 0) return constant_scalar(T(0));
  return scale(bce_logits_sum(logits, labels), T(1) / static_cast<T>(labels.size()));
}

// BCE averaged over ordered pairs and the three categories.
template <class T>
Var<T> loss_social(const Var<T>& logits, const Tensor<T>& labels) {
  if (logits->value.size() == 0) return constant_scalar(T(0));
  return scale(bce_logits_sum(logits, labels), T(1) / static_cast<T>(labels.size()));
}

// L_total = lm*L_lm + hm*L_hm + inout*L_inout + soc*L_soc, exactly.
template <class T>
Var<T> total_loss(const Var<T>& lm, const Var<T>& hm, const Var<T>& inout, const Var<T>& soc,
                  const LossWeights& w) {
  return weighted_sum<T>({lm, hm, inout, soc},
                         {static_cast<T>(w.lm), static_cast<T>(w.hm), static_cast<T>(w.inout),
                          static_cast<T>(w.soc)});
}

}  // namespace omnigf
