#pragma once

#include <torch/torch.h>

namespace fdcnet {

struct KdLossWeights {
  double alpha4 = 1.0;  // class-score distillation
  double alpha5 = 1.0;  // localization-map distillation (exemplars only)
  double alpha6 = 0.5;  // classifier feature distillation
  double alpha7 = 0.5;  // localizer feature distillation
};

/// KL(softmax(GAP(old)) || softmax(GAP(new[:, :n_old]))). Slicing happens before pooling and softmax.
torch::Tensor loss_kd_cls(const torch::Tensor& cls_map_new, const torch::Tensor& cls_map_old, int64_t n_old);

/// Per-image RMS between sigmoid(new)_y and sigmoid(old)_y, averaged over the batch.
/// Every label must index an old class (cam_old's channel count).
torch::Tensor loss_kd_loc(const torch::Tensor& cam_new, const torch::Tensor& cam_old, const torch::Tensor& labels);

/// 1 - mean cosine similarity between per-location channel vectors, over batch and space.
torch::Tensor loss_kd_feat(const torch::Tensor& tap_new, const torch::Tensor& tap_old);

torch::Tensor loss_ci_total(const torch::Tensor& wsol, const torch::Tensor& kd_cls, const torch::Tensor& kd_loc,
                            const torch::Tensor& kd_feat_cls, const torch::Tensor& kd_feat_loc,
                            const KdLossWeights& w);
double loss_ci_total(double wsol, double kd_cls, double kd_loc, double kd_feat_cls, double kd_feat_loc,
                     const KdLossWeights& w);

}  // namespace fdcnet
