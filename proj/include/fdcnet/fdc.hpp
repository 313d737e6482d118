#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "fdcnet/model.hpp"
#include "fdcnet/samples.hpp"

namespace fdcnet {

inline constexpr int kFdcLayers = 3;

/// Three convolutions (1x1, 3x3, 1x1) mapping a feature map to n_old compensation
/// channels. The final layer starts at zero, so a fresh module compensates nothing.
class FdcModuleImpl : public torch::nn::Module {
 public:
  FdcModuleImpl(int64_t in_channels, int64_t n_old, int64_t hidden);
  torch::Tensor forward(const torch::Tensor& x);

  int64_t in_channels() const { return in_channels_; }
  int64_t out_channels() const { return n_old_; }

 private:
  int64_t in_channels_;
  int64_t n_old_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
};
TORCH_MODULE(FdcModule);

/// Score compensation (reads the classifier tap before its last three layers) and
/// localization compensation (reads the shared feature map) for the first n_old classes.
class FdcPairImpl : public torch::nn::Module {
 public:
  FdcPairImpl(int64_t cls_in_channels, int64_t loc_in_channels, int64_t n_old, int64_t hidden = 128);

  torch::Tensor compensate_cls(const torch::Tensor& cls_tap_pre_last3) { return cls_->forward(cls_tap_pre_last3); }
  torch::Tensor compensate_loc(const torch::Tensor& features) { return loc_->forward(features); }

  int64_t n_old() const { return n_old_; }
  int64_t hidden() const { return hidden_; }
  int64_t cls_in_channels() const { return cls_->in_channels(); }
  int64_t loc_in_channels() const { return loc_->in_channels(); }

 private:
  int64_t n_old_;
  int64_t hidden_;
  FdcModule cls_{nullptr};
  FdcModule loc_{nullptr};
};
TORCH_MODULE(FdcPair);

/// Raw pointer to the pair, null for an empty holder.
inline FdcPairImpl* pair_or_null(const FdcPair& pair) { return pair ? pair.ptr().get() : nullptr; }

FdcPair make_fdc_pair(const WsolNetImpl& net, int64_t n_old, int64_t hidden = 128);
FdcPair clone_fdc(const FdcPair& pair);

struct CompensatedMaps {
  torch::Tensor cls;  // B×K×N×N
  torch::Tensor cam;  // B×K×N×N
};

/// [cls[:, :n] + g_c(tap); cls[:, n:]] and the same for cam with g_l(features).
/// With a null pair the raw maps come back unchanged.
CompensatedMaps compensate(const ModelOutputs& outputs, FdcPairImpl* fdc);

struct FdcTrainTargets {
  torch::Tensor target_cls;  // B×n_old×N×N
  torch::Tensor target_cam;  // B×n_old×N×N
};

/// Outputs the previous task would have produced for the batch: the frozen previous
/// network's maps, with its own compensation applied when a previous pair exists.
FdcTrainTargets fdc_targets(WsolNetImpl& prev_net, FdcPairImpl* prev_fdc, const torch::Tensor& pixels);
FdcTrainTargets fdc_targets(const ModelOutputs& prev_outputs, FdcPairImpl* prev_fdc);

struct DcLossParts {
  torch::Tensor dc_c;
  torch::Tensor dc_l;
  torch::Tensor total;
};

/// RMS(cur_old + comp - target) per image, batch-averaged, for scores and maps;
/// total = dc_c + beta * dc_l.
DcLossParts loss_dc_from_maps(const torch::Tensor& cur_cls_old, const torch::Tensor& comp_cls,
                              const torch::Tensor& target_cls, const torch::Tensor& cur_cam_old,
                              const torch::Tensor& comp_cam, const torch::Tensor& target_cam, double beta);

/// Loss of the current pair against the targets. cur_net must be frozen.
DcLossParts loss_dc(WsolNetImpl& cur_net, FdcPairImpl& cur_fdc, const FdcTrainTargets& targets,
                    const torch::Tensor& pixels, double beta);

struct FusedOutputs {
  torch::Tensor class_probs;  // B×K
  torch::Tensor loc_map;      // B×K×N×N, or B×N×N when labels were given
};

/// softmax(GAP(compensated scores)) and sigmoid(compensated localization logits).
/// New-class channels pass through untouched. A null pair gives plain inference.
FusedOutputs fuse_outputs(const ModelOutputs& outputs, FdcPairImpl* fdc,
                          const std::optional<torch::Tensor>& loc_labels = std::nullopt);

struct FdcTrainOptions {
  int64_t epochs = 3;
  int64_t batch_size = 32;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta = 1.0;
  int64_t hidden = 128;
  uint64_t seed = 0;
};

struct FdcTrainResult {
  FdcPair pair{nullptr};
  double initial_loss = 0.0;  // compensation loss with zero compensation
  std::vector<double> epoch_losses;
};

/// Trains a fresh (zero-compensation) pair for the current task. Both networks must be
/// frozen and are never modified.
FdcTrainResult train_fdc(WsolNetImpl& cur_net, WsolNetImpl& prev_net, FdcPairImpl* prev_fdc, const SampleSet& data,
                         const FdcTrainOptions& options);

}  // namespace fdcnet
