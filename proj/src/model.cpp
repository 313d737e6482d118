#include "fdcnet/model.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <cstring>

#include "fdcnet/common.hpp"
#include "fdcnet/tensor_ops.hpp"

namespace fdcnet {

namespace F = torch::nn::functional;

int64_t NetOptions::pool_count() const {
  if (backbone_channels.empty()) throw ConfigError("backbone needs at least one block");
  const auto blocks = static_cast<int64_t>(backbone_channels.size());
  if (downsample < -1 || downsample >= blocks) {
    throw ConfigError("downsample must be -1 or in [0, " + std::to_string(blocks - 1) + "]");
  }
  return downsample < 0 ? blocks - 1 : downsample;
}

int64_t NetOptions::output_stride() const { return int64_t{1} << pool_count(); }

int64_t NetOptions::feature_size() const {
  auto stride = output_stride();
  if (input_size % stride != 0) {
    throw ConfigError("input size " + std::to_string(input_size) + " is not divisible by backbone stride " +
                      std::to_string(stride));
  }
  return input_size / stride;
}

torch::Tensor cosine_class_scores(const torch::Tensor& features, const torch::Tensor& class_weights,
                                  const torch::Tensor& scale) {
  const bool unbatched = features.dim() == 3;
  auto f = unbatched ? features.unsqueeze(0) : features;
  if (f.dim() != 4 || class_weights.dim() != 2 || class_weights.size(1) != f.size(1)) {
    throw ConfigError("cosine_class_scores: expected features (B×)C×N×N and weights K×C");
  }
  auto f_unit = ops::l2_normalize(f, 1, kNormEps);
  auto w_unit = ops::l2_normalize(class_weights, 1, kNormEps);
  auto scores = torch::einsum("bchw,kc->bkhw", {f_unit, w_unit}) * scale;
  return unbatched ? scores.squeeze(0) : scores;
}

WsolNetImpl::WsolNetImpl(NetOptions options) : options_(std::move(options)) {
  if (options_.num_classes < 1) throw ConfigError("network needs at least one class");
  options_.feature_size();  // validates divisibility

  backbone_ = torch::nn::Sequential();
  int64_t in = 3;
  for (size_t i = 0; i < options_.backbone_channels.size(); ++i) {
    const int64_t out = options_.backbone_channels[i];
    backbone_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
    backbone_->push_back(torch::nn::ReLU());
    if (static_cast<int64_t>(i) < options_.pool_count()) backbone_->push_back(torch::nn::MaxPool2d(2));
    in = out;
  }
  register_module("backbone", backbone_);

  hidden_ = torch::nn::ModuleList();
  for (int i = 0; i < kClassifierLayers - 1; ++i) {
    hidden_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(i == 0 ? in : options_.classifier_width,
                                                                  options_.classifier_width, 3)
                                             .padding(1)));
  }
  register_module("classifier", hidden_);
  {
    torch::NoGradGuard no_grad;
    for (auto& m : modules(false)) {
      if (auto* conv = m->as<torch::nn::Conv2d>()) {
        torch::nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanIn, torch::kReLU);
        conv->bias.zero_();
      }
    }
  }

  const int64_t width = options_.classifier_width;
  const int64_t k = options_.num_classes;
  if (options_.cosine) {
    last_weight_ = register_parameter("classifier_last_weight", ops::l2_normalize(torch::randn({k, width}), 1));
    scale_ = register_parameter("classifier_last_scale", torch::full({}, options_.init_scale));
  } else {
    last_weight_ = register_parameter("classifier_last_weight", torch::randn({k, width}) / std::sqrt(double(width)));
    last_bias_ = register_parameter("classifier_last_bias", torch::zeros({k}));
  }

  const int64_t ks = options_.localizer_kernel;
  const double loc_std = 1.0 / std::sqrt(double(in * ks * ks));
  loc_weight_ = register_parameter("localizer_weight", torch::randn({k, in, ks, ks}) * loc_std);
  loc_bias_ = register_parameter("localizer_bias", torch::zeros({k}));
}

torch::Tensor WsolNetImpl::backbone_forward(const torch::Tensor& pixels) {
  if (pixels.dim() != 4 || pixels.size(1) != 3 || pixels.size(2) != options_.input_size ||
      pixels.size(3) != options_.input_size) {
    throw ConfigError("expected a B×3×" + std::to_string(options_.input_size) + "×" +
                      std::to_string(options_.input_size) + " batch, got " + c10::str(pixels.sizes()));
  }
  return backbone_->forward(pixels);
}

ClassifierOutputs WsolNetImpl::classifier_forward(const torch::Tensor& features) {
  ClassifierOutputs out;
  auto x = features;
  for (size_t i = 0; i < hidden_->size(); ++i) {
    x = torch::relu(hidden_[i]->as<torch::nn::Conv2d>()->forward(x));
    if (i == 1) out.tap_pre_last3 = x;
  }
  out.tap_pre_last = x;
  if (options_.cosine) {
    out.scores = cosine_class_scores(x, last_weight_, scale_);
  } else {
    out.scores = F::conv2d(x, last_weight_.view({last_weight_.size(0), last_weight_.size(1), 1, 1}),
                           F::Conv2dFuncOptions().bias(last_bias_));
  }
  return out;
}

torch::Tensor WsolNetImpl::localizer_forward(const torch::Tensor& features) {
  return F::conv2d(features, loc_weight_,
                   F::Conv2dFuncOptions().bias(loc_bias_).padding(options_.localizer_kernel / 2));
}

ModelOutputs WsolNetImpl::forward_full(const torch::Tensor& pixels) {
  ModelOutputs out;
  out.features = backbone_forward(pixels);
  auto cls = classifier_forward(out.features);
  out.cls_map = cls.scores;
  out.cls_tap_pre_last = cls.tap_pre_last;
  out.cls_tap_pre_last3 = cls.tap_pre_last3;
  out.cam_map = localizer_forward(out.features);
  out.loc_tap_pre_last = out.features;
  return out;
}

torch::Tensor WsolNetImpl::masked_background_forward(const torch::Tensor& features, const torch::Tensor& fg_mask) {
  if (fg_mask.dim() != 3 || fg_mask.size(0) != features.size(0) || fg_mask.size(1) != features.size(2) ||
      fg_mask.size(2) != features.size(3)) {
    throw ConfigError("foreground mask " + c10::str(fg_mask.sizes()) + " does not match features " +
                      c10::str(features.sizes()));
  }
  return classifier_scores(features * (1.0 - fg_mask.unsqueeze(1)));
}

void WsolNetImpl::expand_heads(int64_t n_new, uint64_t rng_seed) {
  if (n_new < 1) throw ConfigError("expand_heads needs n_new >= 1");
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(rng_seed);
  const auto wopts = last_weight_.options();
  const int64_t width = last_weight_.size(1);

  auto rows = torch::randn({n_new, width}, gen, torch::kDouble);
  if (options_.cosine) {
    rows = ops::l2_normalize(rows, 1);
  } else {
    rows = rows / std::sqrt(double(width));
    last_bias_.set_data(torch::cat({last_bias_.detach(), torch::zeros({n_new}, wopts)}));
  }
  last_weight_.set_data(torch::cat({last_weight_.detach(), rows.to(wopts)}));

  const auto lopts = loc_weight_.options();
  const int64_t fan_in = loc_weight_.size(1) * loc_weight_.size(2) * loc_weight_.size(3);
  auto filters = torch::randn({n_new, loc_weight_.size(1), loc_weight_.size(2), loc_weight_.size(3)}, gen,
                              torch::kDouble) /
                 std::sqrt(double(fan_in));
  loc_weight_.set_data(torch::cat({loc_weight_.detach(), filters.to(lopts)}));
  loc_bias_.set_data(torch::cat({loc_bias_.detach(), torch::zeros({n_new}, lopts)}));

  options_.num_classes += n_new;
}

WsolNet clone_network(const WsolNet& net) {
  WsolNet copy(net->options());
  auto dtype = net->parameters().front().scalar_type();
  copy->to(dtype);
  copy_parameters(*net, *copy);
  return copy;
}

void set_frozen(torch::nn::Module& module, bool frozen) {
  for (auto& p : module.parameters()) p.set_requires_grad(!frozen);
}

bool is_frozen(const torch::nn::Module& module) {
  for (const auto& p : module.parameters()) {
    if (p.requires_grad()) return false;
  }
  return true;
}

uint64_t parameter_hash(const torch::nn::Module& module) {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& item : module.named_parameters()) {
    auto t = item.value().detach().contiguous().cpu();
    const auto* bytes = static_cast<const unsigned char*>(t.data_ptr());
    const size_t n = t.numel() * t.element_size();
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void copy_parameters(const torch::nn::Module& from, torch::nn::Module& to) {
  torch::NoGradGuard no_grad;
  auto dst = to.named_parameters();
  for (const auto& item : from.named_parameters()) {
    auto* target = dst.find(item.key());
    if (target == nullptr) throw ConfigError("parameter " + item.key() + " missing in copy target");
    if (target->sizes() != item.value().sizes()) target->set_data(torch::empty_like(item.value()));
    target->copy_(item.value());
  }
}

}  // namespace fdcnet
