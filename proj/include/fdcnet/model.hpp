#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace fdcnet {

/// Architecture knobs of the WSOL network. The classifier always has four hidden
/// 3x3 layers plus the final score layer; the localizer is always one layer.
struct NetOptions {
  int64_t input_size = 64;
  /// One conv block per entry. The first `downsample` blocks end in a 2x2 max pool;
  /// -1 pools after every block but the last.
  std::vector<int64_t> backbone_channels{64, 128, 256, 256};
  int64_t downsample = -1;
  int64_t classifier_width = 256;
  int64_t localizer_kernel = 3;
  /// Cosine-normalized last classifier layer; a plain 1x1 conv with bias otherwise.
  bool cosine = true;
  double init_scale = 10.0;
  int64_t num_classes = 2;

  int64_t pool_count() const;
  int64_t output_stride() const;
  int64_t feature_size() const;
  int64_t feature_channels() const { return backbone_channels.back(); }
};

inline constexpr int kClassifierLayers = 5;
inline constexpr int kLocalizerLayers = 1;

struct ImageBatch {
  torch::Tensor pixels;  // B×3×H×W, channel-normalized
  torch::Tensor labels;  // B, int64 channel indices
  std::vector<std::string> image_ids;

  int64_t size() const { return pixels.defined() ? pixels.size(0) : 0; }
};

/// Everything one forward pass produces. The taps come from the same pass as the maps.
struct ModelOutputs {
  torch::Tensor features;           // B×Cb×N×N, output of the backbone
  torch::Tensor cls_map;            // B×K×N×N, pre-softmax class scores
  torch::Tensor cam_map;            // B×K×N×N, pre-sigmoid localization logits
  torch::Tensor cls_tap_pre_last;   // classifier minus its final layer
  torch::Tensor cls_tap_pre_last3;  // classifier minus its final three layers
  torch::Tensor loc_tap_pre_last;   // localizer minus its final layer (== features)
};

struct ClassifierOutputs {
  torch::Tensor tap_pre_last3;
  torch::Tensor tap_pre_last;
  torch::Tensor scores;
};

/// score(k,i,j) = scale * <w_k/|w_k|, f_ij/|f_ij|>. Accepts C×N×N or B×C×N×N features.
torch::Tensor cosine_class_scores(const torch::Tensor& features, const torch::Tensor& class_weights,
                                  const torch::Tensor& scale);

class WsolNetImpl : public torch::nn::Module {
 public:
  explicit WsolNetImpl(NetOptions options);

  ModelOutputs forward_full(const torch::Tensor& pixels);
  ModelOutputs forward_full(const ImageBatch& batch) { return forward_full(batch.pixels); }

  torch::Tensor backbone_forward(const torch::Tensor& pixels);
  ClassifierOutputs classifier_forward(const torch::Tensor& features);
  torch::Tensor classifier_scores(const torch::Tensor& features) { return classifier_forward(features).scores; }
  torch::Tensor localizer_forward(const torch::Tensor& features);

  /// Classifier output on features channel-wise multiplied by (1 - fg_mask).
  /// fg_mask is B×N×N and already sigmoid-activated.
  torch::Tensor masked_background_forward(const torch::Tensor& features, const torch::Tensor& fg_mask);

  /// Appends n_new class rows to the classifier's last layer and n_new filters to
  /// the localizer. Existing rows and every other parameter are left untouched.
  void expand_heads(int64_t n_new, uint64_t rng_seed);

  int64_t num_classes() const { return options_.num_classes; }
  const NetOptions& options() const { return options_; }

  torch::Tensor scale() const { return scale_; }
  torch::Tensor last_weight() const { return last_weight_; }
  torch::Tensor last_bias() const { return last_bias_; }
  torch::Tensor localizer_weight() const { return loc_weight_; }
  torch::Tensor localizer_bias() const { return loc_bias_; }

 private:
  NetOptions options_;
  torch::nn::Sequential backbone_{nullptr};
  torch::nn::ModuleList hidden_{nullptr};
  torch::Tensor last_weight_;  // K×width
  torch::Tensor last_bias_;    // K, plain head only
  torch::Tensor scale_;        // scalar, cosine head only
  torch::Tensor loc_weight_;   // K×Cb×k×k
  torch::Tensor loc_bias_;     // K
};
TORCH_MODULE(WsolNet);

/// Deep copy with identical parameter values (and dtype).
WsolNet clone_network(const WsolNet& net);

void set_frozen(torch::nn::Module& module, bool frozen);
bool is_frozen(const torch::nn::Module& module);

/// FNV-1a over every parameter's bytes, in registration order.
uint64_t parameter_hash(const torch::nn::Module& module);

/// Copies parameter values by name; shapes must already match.
void copy_parameters(const torch::nn::Module& from, torch::nn::Module& to);

}  // namespace fdcnet
