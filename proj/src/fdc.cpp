#include "fdcnet/fdc.hpp"

#include <cmath>

#include "fdcnet/common.hpp"
#include "fdcnet/tensor_ops.hpp"

namespace fdcnet {

FdcModuleImpl::FdcModuleImpl(int64_t in_channels, int64_t n_old, int64_t hidden)
    : in_channels_(in_channels), n_old_(n_old) {
  if (n_old < 1) throw ConfigError("compensation module needs at least one old class");
  conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, hidden, 1)));
  conv2_ = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, hidden, 3).padding(1)));
  conv3_ = register_module("conv3", torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, n_old, 1)));
  torch::NoGradGuard no_grad;
  conv3_->weight.zero_();
  conv3_->bias.zero_();
}

torch::Tensor FdcModuleImpl::forward(const torch::Tensor& x) {
  auto h = torch::relu(conv1_->forward(x));
  h = torch::relu(conv2_->forward(h));
  return conv3_->forward(h);
}

FdcPairImpl::FdcPairImpl(int64_t cls_in_channels, int64_t loc_in_channels, int64_t n_old, int64_t hidden)
    : n_old_(n_old), hidden_(hidden) {
  cls_ = register_module("cls", FdcModule(cls_in_channels, n_old, hidden));
  loc_ = register_module("loc", FdcModule(loc_in_channels, n_old, hidden));
}

FdcPair make_fdc_pair(const WsolNetImpl& net, int64_t n_old, int64_t hidden) {
  FdcPair pair(net.options().classifier_width, net.options().feature_channels(), n_old, hidden);
  pair->to(net.last_weight().scalar_type());
  return pair;
}

FdcPair clone_fdc(const FdcPair& pair) {
  FdcPair copy(pair->cls_in_channels(), pair->loc_in_channels(), pair->n_old(), pair->hidden());
  copy->to(pair->parameters().front().scalar_type());
  copy_parameters(*pair, *copy);
  return copy;
}

CompensatedMaps compensate(const ModelOutputs& outputs, FdcPairImpl* fdc) {
  if (fdc == nullptr) return {outputs.cls_map, outputs.cam_map};
  const int64_t k = outputs.cls_map.size(1);
  const int64_t n = fdc->n_old();
  if (n > k || outputs.cam_map.size(1) != k) {
    throw ConfigError("compensation covers " + std::to_string(n) + " classes but the maps have " +
                      std::to_string(k));
  }
  auto cls_old = outputs.cls_map.narrow(1, 0, n) + fdc->compensate_cls(outputs.cls_tap_pre_last3);
  auto cam_old = outputs.cam_map.narrow(1, 0, n) + fdc->compensate_loc(outputs.features);
  if (n == k) return {cls_old, cam_old};
  return {torch::cat({cls_old, outputs.cls_map.narrow(1, n, k - n)}, 1),
          torch::cat({cam_old, outputs.cam_map.narrow(1, n, k - n)}, 1)};
}

FdcTrainTargets fdc_targets(const ModelOutputs& prev_outputs, FdcPairImpl* prev_fdc) {
  auto maps = compensate(prev_outputs, prev_fdc);
  return {maps.cls, maps.cam};
}

FdcTrainTargets fdc_targets(WsolNetImpl& prev_net, FdcPairImpl* prev_fdc, const torch::Tensor& pixels) {
  torch::NoGradGuard no_grad;
  if (prev_fdc != nullptr && prev_fdc->n_old() >= prev_net.num_classes()) {
    throw ConfigError("previous compensation must cover fewer classes than the previous network");
  }
  return fdc_targets(prev_net.forward_full(pixels), prev_fdc);
}

DcLossParts loss_dc_from_maps(const torch::Tensor& cur_cls_old, const torch::Tensor& comp_cls,
                              const torch::Tensor& target_cls, const torch::Tensor& cur_cam_old,
                              const torch::Tensor& comp_cam, const torch::Tensor& target_cam, double beta) {
  if (cur_cls_old.sizes() != target_cls.sizes() || cur_cam_old.sizes() != target_cam.sizes()) {
    throw ConfigError("loss_dc: current old-class slice " + c10::str(cur_cls_old.sizes()) +
                      " does not match target " + c10::str(target_cls.sizes()));
  }
  DcLossParts parts;
  parts.dc_c = ops::per_image_rms(cur_cls_old + comp_cls - target_cls).mean();
  parts.dc_l = ops::per_image_rms(cur_cam_old + comp_cam - target_cam).mean();
  parts.total = parts.dc_c + beta * parts.dc_l;
  return parts;
}

DcLossParts loss_dc(WsolNetImpl& cur_net, FdcPairImpl& cur_fdc, const FdcTrainTargets& targets,
                    const torch::Tensor& pixels, double beta) {
  if (!is_frozen(cur_net)) throw ContractError("loss_dc: the current network must be frozen");
  const int64_t n = cur_fdc.n_old();
  if (targets.target_cls.size(1) != n || targets.target_cam.size(1) != n) {
    throw ConfigError("loss_dc: targets have " + std::to_string(targets.target_cls.size(1)) +
                      " channels, compensation covers " + std::to_string(n));
  }
  auto out = cur_net.forward_full(pixels);
  return loss_dc_from_maps(out.cls_map.narrow(1, 0, n), cur_fdc.compensate_cls(out.cls_tap_pre_last3),
                           targets.target_cls, out.cam_map.narrow(1, 0, n), cur_fdc.compensate_loc(out.features),
                           targets.target_cam, beta);
}

FusedOutputs fuse_outputs(const ModelOutputs& outputs, FdcPairImpl* fdc,
                          const std::optional<torch::Tensor>& loc_labels) {
  if (fdc != nullptr && fdc->n_old() >= outputs.cls_map.size(1)) {
    throw ConfigError("fuse_outputs: compensation must cover fewer classes than the network");
  }
  auto maps = compensate(outputs, fdc);
  FusedOutputs fused;
  fused.class_probs = torch::softmax(ops::gap(maps.cls), 1);
  fused.loc_map = loc_labels ? torch::sigmoid(ops::select_label_channel(maps.cam, *loc_labels))
                             : torch::sigmoid(maps.cam);
  return fused;
}

FdcTrainResult train_fdc(WsolNetImpl& cur_net, WsolNetImpl& prev_net, FdcPairImpl* prev_fdc, const SampleSet& data,
                         const FdcTrainOptions& options) {
  if (!is_frozen(cur_net) || !is_frozen(prev_net)) {
    throw ContractError("train_fdc: current and previous networks must both be frozen");
  }
  const int64_t n_old = prev_net.num_classes();
  if (n_old >= cur_net.num_classes()) throw ConfigError("train_fdc: current network has no new classes");

  torch::manual_seed(options.seed);
  FdcTrainResult result;
  result.pair = make_fdc_pair(cur_net, n_old, options.hidden);
  if (options.epochs <= 0 || data.size() == 0) return result;

  // inputs and targets are fixed; precompute them
  torch::Tensor cls_tap, features, cur_cls_old, cur_cam_old, target_cls, target_cam;
  {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> taps, feats, clss, cams, tcls, tcam;
    for (const auto& idx : make_batches(data.size(), options.batch_size, nullptr)) {
      auto pixels = data.pixels.index_select(0, idx);
      auto cur = cur_net.forward_full(pixels);
      auto targets = fdc_targets(prev_net, prev_fdc, pixels);
      taps.push_back(cur.cls_tap_pre_last3);
      feats.push_back(cur.features);
      clss.push_back(cur.cls_map.narrow(1, 0, n_old));
      cams.push_back(cur.cam_map.narrow(1, 0, n_old));
      tcls.push_back(targets.target_cls);
      tcam.push_back(targets.target_cam);
    }
    cls_tap = torch::cat(taps);
    features = torch::cat(feats);
    cur_cls_old = torch::cat(clss);
    cur_cam_old = torch::cat(cams);
    target_cls = torch::cat(tcls);
    target_cam = torch::cat(tcam);
  }

  {
    torch::NoGradGuard no_grad;
    result.initial_loss = loss_dc_from_maps(cur_cls_old, torch::zeros_like(cur_cls_old), target_cls, cur_cam_old,
                                            torch::zeros_like(cur_cam_old), target_cam, options.beta)
                              .total.item<double>();
  }

  auto& pair = *result.pair;
  torch::optim::SGD optimizer(pair.parameters(), torch::optim::SGDOptions(options.lr)
                                                     .momentum(options.momentum)
                                                     .weight_decay(options.weight_decay));
  auto gen = make_generator(options.seed);
  const auto decay_epoch = static_cast<int64_t>(std::ceil(0.7 * static_cast<double>(options.epochs)));
  for (int64_t epoch = 0; epoch < options.epochs; ++epoch) {
    if (epoch == decay_epoch && epoch > 0) {
      for (auto& group : optimizer.param_groups()) {
        auto& o = static_cast<torch::optim::SGDOptions&>(group.options());
        o.lr(o.lr() * 0.1);
      }
    }
    double total = 0.0;
    int64_t seen = 0;
    for (const auto& idx : make_batches(data.size(), options.batch_size, &gen)) {
      optimizer.zero_grad();
      auto parts = loss_dc_from_maps(cur_cls_old.index_select(0, idx), pair.compensate_cls(cls_tap.index_select(0, idx)),
                                     target_cls.index_select(0, idx), cur_cam_old.index_select(0, idx),
                                     pair.compensate_loc(features.index_select(0, idx)),
                                     target_cam.index_select(0, idx), options.beta);
      parts.total.backward();
      optimizer.step();
      total += parts.total.item<double>() * static_cast<double>(idx.size(0));
      seen += idx.size(0);
    }
    result.epoch_losses.push_back(total / static_cast<double>(seen));
  }
  return result;
}

}  // namespace fdcnet
