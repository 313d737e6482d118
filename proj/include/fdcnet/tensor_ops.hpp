#pragma once

#include <torch/torch.h>

namespace fdcnet::ops {

// sqrt with a zero (not NaN) gradient at x == 0.
torch::Tensor safe_sqrt(const torch::Tensor& x);

// Global average pooling over the two trailing spatial dims: B×K×H×W -> B×K.
torch::Tensor gap(const torch::Tensor& map);

/// l2-normalizes along `dim` using x / (||x|| + eps).
torch::Tensor l2_normalize(const torch::Tensor& x, int64_t dim, double eps = 1e-8);

/// Per-image root-mean-square of a B×... tensor, reduced over all non-batch dims. Returns B.
torch::Tensor per_image_rms(const torch::Tensor& diff);

// Picks channel labels[b] of map b: B×K×H×W -> B×H×W.
torch::Tensor select_label_channel(const torch::Tensor& map, const torch::Tensor& labels);

}  // namespace fdcnet::ops
