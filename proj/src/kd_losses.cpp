#include "fdcnet/kd_losses.hpp"

#include "fdcnet/common.hpp"
#include "fdcnet/tensor_ops.hpp"

namespace fdcnet {

torch::Tensor loss_kd_cls(const torch::Tensor& cls_map_new, const torch::Tensor& cls_map_old, int64_t n_old) {
  if (cls_map_old.size(1) != n_old || cls_map_new.size(1) < n_old || cls_map_new.size(0) != cls_map_old.size(0)) {
    throw ConfigError("loss_kd_cls: channel mismatch, old " + c10::str(cls_map_old.sizes()) + ", new " +
                      c10::str(cls_map_new.sizes()) + ", n_old " + std::to_string(n_old));
  }
  auto log_p = torch::log_softmax(ops::gap(cls_map_old), 1);
  auto log_q = torch::log_softmax(ops::gap(cls_map_new.narrow(1, 0, n_old)), 1);
  return (log_p.exp() * (log_p - log_q)).sum(1).mean();
}

torch::Tensor loss_kd_loc(const torch::Tensor& cam_new, const torch::Tensor& cam_old, const torch::Tensor& labels) {
  const int64_t n_old = cam_old.size(1);
  if (labels.numel() > 0 && labels.max().item<int64_t>() >= n_old) {
    throw ContractError("loss_kd_loc applies to exemplar samples only; got a label >= " + std::to_string(n_old));
  }
  if (cam_new.size(2) != cam_old.size(2) || cam_new.size(3) != cam_old.size(3)) {
    throw ConfigError("loss_kd_loc: spatial mismatch");
  }
  auto diff = torch::sigmoid(ops::select_label_channel(cam_new, labels)) -
              torch::sigmoid(ops::select_label_channel(cam_old, labels));
  return ops::per_image_rms(diff).mean();
}

torch::Tensor loss_kd_feat(const torch::Tensor& tap_new, const torch::Tensor& tap_old) {
  if (tap_new.sizes() != tap_old.sizes()) throw ConfigError("loss_kd_feat: tap shapes differ");
  auto cos = (ops::l2_normalize(tap_new, 1, kNormEps) * ops::l2_normalize(tap_old, 1, kNormEps)).sum(1);
  return 1.0 - cos.mean();
}

torch::Tensor loss_ci_total(const torch::Tensor& wsol, const torch::Tensor& kd_cls, const torch::Tensor& kd_loc,
                            const torch::Tensor& kd_feat_cls, const torch::Tensor& kd_feat_loc,
                            const KdLossWeights& w) {
  return w.alpha4 * kd_cls + w.alpha5 * kd_loc + w.alpha6 * kd_feat_cls + w.alpha7 * kd_feat_loc + wsol;
}

double loss_ci_total(double wsol, double kd_cls, double kd_loc, double kd_feat_cls, double kd_feat_loc,
                     const KdLossWeights& w) {
  return w.alpha4 * kd_cls + w.alpha5 * kd_loc + w.alpha6 * kd_feat_cls + w.alpha7 * kd_feat_loc + wsol;
}

}  // namespace fdcnet
