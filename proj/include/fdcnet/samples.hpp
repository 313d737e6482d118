#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "fdcnet/model.hpp"

namespace fdcnet {

/// In-memory training or test samples: normalized pixels, channel labels and ids.
struct SampleSet {
  torch::Tensor pixels;  // N×3×H×W float
  torch::Tensor labels;  // N int64 network channel indices
  std::vector<std::string> ids;

  int64_t size() const { return pixels.defined() ? pixels.size(0) : 0; }
  SampleSet subset(const std::vector<int64_t>& indices) const;
  ImageBatch batch(const torch::Tensor& indices) const;
  static SampleSet concat(const SampleSet& a, const SampleSet& b);
};

/// Index batches over [0, n) in a seeded shuffled order (or sequential when gen is null).
std::vector<torch::Tensor> make_batches(int64_t n, int64_t batch_size, torch::Generator* gen);

torch::Generator make_generator(uint64_t seed);

}  // namespace fdcnet
