#include "fdcnet/samples.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include "fdcnet/common.hpp"

namespace fdcnet {

SampleSet SampleSet::subset(const std::vector<int64_t>& indices) const {
  auto idx = torch::tensor(indices, torch::kLong);
  SampleSet out;
  out.pixels = pixels.index_select(0, idx);
  out.labels = labels.index_select(0, idx);
  for (auto i : indices) out.ids.push_back(ids.at(i));
  return out;
}

ImageBatch SampleSet::batch(const torch::Tensor& indices) const {
  ImageBatch b;
  b.pixels = pixels.index_select(0, indices);
  b.labels = labels.index_select(0, indices);
  auto acc = indices.accessor<int64_t, 1>();
  for (int64_t i = 0; i < acc.size(0); ++i) b.image_ids.push_back(ids.at(acc[i]));
  return b;
}

SampleSet SampleSet::concat(const SampleSet& a, const SampleSet& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  SampleSet out;
  out.pixels = torch::cat({a.pixels, b.pixels});
  out.labels = torch::cat({a.labels, b.labels});
  out.ids = a.ids;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  return out;
}

std::vector<torch::Tensor> make_batches(int64_t n, int64_t batch_size, torch::Generator* gen) {
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  auto order = gen ? torch::randperm(n, *gen, torch::kLong) : torch::arange(n, torch::kLong);
  std::vector<torch::Tensor> batches;
  for (int64_t start = 0; start < n; start += batch_size) {
    batches.push_back(order.narrow(0, start, std::min(batch_size, n - start)).contiguous());
  }
  return batches;
}

torch::Generator make_generator(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

}  // namespace fdcnet
