#pragma once

#include <torch/torch.h>

#include "fdcnet/model.hpp"

namespace fdcnet {

struct WsolLossWeights {
  double alpha1 = 1.0;  // foreground classification
  double alpha2 = 1.0;  // background activation suppression
  double alpha3 = 1.0;  // area constraint
  double epsilon = 1e-8;
  /// Activation values for suppression: pooled softmax probability of the label class
  /// when set, the raw pooled label score otherwise.
  bool bas_on_probabilities = true;
};

struct WsolLossParts {
  torch::Tensor cls;
  torch::Tensor cls_fg;
  torch::Tensor bas;
  torch::Tensor ac;
};

// All losses reduce over the batch with an arithmetic mean and return 0-dim tensors.

/// -ln softmax(GAP(cls_map))_y
torch::Tensor loss_cls(const torch::Tensor& cls_map, const torch::Tensor& labels);

/// -ln softmax(GAP(cls_map * sigmoid(cam_map_y)))_y, with the mask broadcast over all K channels.
torch::Tensor loss_cls_fg(const torch::Tensor& cls_map, const torch::Tensor& cam_map, const torch::Tensor& labels);

/// s_bg / (s_all + eps) from the primary class map and the background-masked class map.
/// s = softmax(GAP(map))_y, or GAP(map_y) with on_probabilities unset.
torch::Tensor loss_bas_from_maps(const torch::Tensor& cls_map, const torch::Tensor& bg_cls_map,
                                 const torch::Tensor& labels, double epsilon, bool on_probabilities = true);

/// Runs the extra classifier pass on background-masked features, then loss_bas_from_maps.
torch::Tensor loss_bas(WsolNetImpl& net, const ModelOutputs& outputs, const torch::Tensor& labels, double epsilon,
                       bool on_probabilities = true);

/// Mean foreground-mask activation of the label channel.
torch::Tensor loss_ac(const torch::Tensor& cam_map, const torch::Tensor& labels);

torch::Tensor loss_wsol_total(const WsolLossParts& parts, const WsolLossWeights& w);
double loss_wsol_total(double cls, double cls_fg, double bas, double ac, const WsolLossWeights& w);

WsolLossParts compute_wsol_losses(WsolNetImpl& net, const ModelOutputs& outputs, const torch::Tensor& labels,
                                  const WsolLossWeights& w);

}  // namespace fdcnet
