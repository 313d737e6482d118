#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "fdcnet/model.hpp"

namespace fdcnet {

/// GAP of the shared feature map, l2-normalized.
using Embedding = std::vector<float>;

struct ExemplarCandidate {
  std::string image_id;
  Embedding embedding;
};

/// Embeds N×3×H×W pixels in chunks of batch_size. Runs without autograd.
std::vector<ExemplarCandidate> compute_embeddings(WsolNetImpl& net, const torch::Tensor& pixels,
                                                  const std::vector<std::string>& image_ids, int64_t batch_size = 64);

/// Embeddings for an already computed B×C×h×w feature map (one row per image).
std::vector<Embedding> embed_features(const torch::Tensor& features);

/// Greedy herding without replacement. Returns candidate indices in selection order:
/// step j picks the unused x minimizing |mu - (phi(x) + sum of earlier picks) / j|,
/// ties going to the lowest index.
std::vector<size_t> herding_order(const std::vector<ExemplarCandidate>& candidates, size_t m);

std::vector<std::string> herding_select(const std::vector<ExemplarCandidate>& candidates, size_t m);

struct ExemplarEntry {
  std::string image_id;
  Embedding embedding;
};

/// Budgeted exemplar set. Each class list is kept in herding order, so trimming a
/// list to its first m entries keeps the m most representative images.
class ExemplarStore {
 public:
  explicit ExemplarStore(int64_t budget);

  /// Recomputes the quota as floor(budget / k_acc), trims old classes to their
  /// herding prefix, then herds each new class to the quota.
  void rebalance(const std::map<int64_t, std::vector<ExemplarCandidate>>& new_classes, int64_t k_acc);

  int64_t budget() const { return budget_; }
  int64_t quota() const { return quota_; }
  size_t total_size() const;
  bool empty() const { return per_class_.empty(); }
  const std::map<int64_t, std::vector<ExemplarEntry>>& per_class() const { return per_class_; }

  /// Lines of `class_id<TAB>image_path<TAB>selection_rank`.
  void write_manifest(const std::filesystem::path& path) const;
  /// Restores class lists from a manifest; embeddings are left empty.
  static ExemplarStore read_manifest(const std::filesystem::path& path, int64_t budget, int64_t k_acc);

 private:
  int64_t budget_;
  int64_t quota_ = 0;
  std::map<int64_t, std::vector<ExemplarEntry>> per_class_;
};

}  // namespace fdcnet
