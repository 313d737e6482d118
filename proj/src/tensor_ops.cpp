#include "fdcnet/tensor_ops.hpp"

namespace fdcnet::ops {

torch::Tensor safe_sqrt(const torch::Tensor& x) {
  auto positive = x > 0;
  auto guarded = torch::where(positive, x, torch::ones_like(x));
  return torch::where(positive, guarded.sqrt(), torch::zeros_like(x));
}

torch::Tensor gap(const torch::Tensor& map) { return map.mean({-2, -1}); }

torch::Tensor l2_normalize(const torch::Tensor& x, int64_t dim, double eps) {
  auto norm = safe_sqrt(x.pow(2).sum(dim, /*keepdim=*/true));
  return x / (norm + eps);
}

torch::Tensor per_image_rms(const torch::Tensor& diff) {
  auto flat = diff.reshape({diff.size(0), -1});
  return safe_sqrt(flat.pow(2).mean(1));
}

torch::Tensor select_label_channel(const torch::Tensor& map, const torch::Tensor& labels) {
  auto idx = labels.to(torch::kLong).view({-1, 1, 1, 1}).expand({map.size(0), 1, map.size(2), map.size(3)});
  return map.gather(1, idx).squeeze(1);
}

}  // namespace fdcnet::ops
