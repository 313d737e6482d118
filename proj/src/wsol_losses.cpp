#include "fdcnet/wsol_losses.hpp"

#include "fdcnet/common.hpp"
#include "fdcnet/tensor_ops.hpp"

namespace fdcnet {

namespace {

torch::Tensor nll_of_pooled(const torch::Tensor& map, const torch::Tensor& labels) {
  auto log_probs = torch::log_softmax(ops::gap(map), 1);
  return -log_probs.gather(1, labels.to(torch::kLong).view({-1, 1})).squeeze(1).mean();
}

void check_same_spatial(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.dim() != 4 || b.dim() != 4 || a.size(0) != b.size(0) || a.size(2) != b.size(2) || a.size(3) != b.size(3)) {
    throw ConfigError(std::string(what) + ": spatial mismatch " + c10::str(a.sizes()) + " vs " +
                      c10::str(b.sizes()));
  }
}

}  // namespace

torch::Tensor loss_cls(const torch::Tensor& cls_map, const torch::Tensor& labels) {
  return nll_of_pooled(cls_map, labels);
}

torch::Tensor loss_cls_fg(const torch::Tensor& cls_map, const torch::Tensor& cam_map, const torch::Tensor& labels) {
  check_same_spatial(cls_map, cam_map, "loss_cls_fg");
  auto fg = torch::sigmoid(ops::select_label_channel(cam_map, labels)).unsqueeze(1);
  return nll_of_pooled(cls_map * fg, labels);
}

torch::Tensor loss_bas_from_maps(const torch::Tensor& cls_map, const torch::Tensor& bg_cls_map,
                                 const torch::Tensor& labels, double epsilon, bool on_probabilities) {
  torch::Tensor s_all, s_bg;
  if (on_probabilities) {
    s_all = torch::softmax(ops::gap(cls_map), 1).gather(1, labels.to(torch::kLong).view({-1, 1})).squeeze(1);
    s_bg = torch::softmax(ops::gap(bg_cls_map), 1).gather(1, labels.to(torch::kLong).view({-1, 1})).squeeze(1);
  } else {
    s_all = ops::gap(ops::select_label_channel(cls_map, labels));
    s_bg = ops::gap(ops::select_label_channel(bg_cls_map, labels));
  }
  return (s_bg / (s_all + epsilon)).mean();
}

torch::Tensor loss_bas(WsolNetImpl& net, const ModelOutputs& outputs, const torch::Tensor& labels, double epsilon,
                       bool on_probabilities) {
  auto fg = torch::sigmoid(ops::select_label_channel(outputs.cam_map, labels));
  auto bg_scores = net.masked_background_forward(outputs.features, fg);
  return loss_bas_from_maps(outputs.cls_map, bg_scores, labels, epsilon, on_probabilities);
}

torch::Tensor loss_ac(const torch::Tensor& cam_map, const torch::Tensor& labels) {
  return torch::sigmoid(ops::select_label_channel(cam_map, labels)).mean();
}

torch::Tensor loss_wsol_total(const WsolLossParts& p, const WsolLossWeights& w) {
  return p.cls + w.alpha1 * p.cls_fg + w.alpha2 * p.bas + w.alpha3 * p.ac;
}

double loss_wsol_total(double cls, double cls_fg, double bas, double ac, const WsolLossWeights& w) {
  return cls + w.alpha1 * cls_fg + w.alpha2 * bas + w.alpha3 * ac;
}

WsolLossParts compute_wsol_losses(WsolNetImpl& net, const ModelOutputs& outputs, const torch::Tensor& labels,
                                  const WsolLossWeights& w) {
  WsolLossParts parts;
  parts.cls = loss_cls(outputs.cls_map, labels);
  parts.cls_fg = loss_cls_fg(outputs.cls_map, outputs.cam_map, labels);
  parts.bas = loss_bas(net, outputs, labels, w.epsilon, w.bas_on_probabilities);
  parts.ac = loss_ac(outputs.cam_map, labels);
  return parts;
}

}  // namespace fdcnet
