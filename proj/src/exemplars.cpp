#include "fdcnet/exemplars.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include "fdcnet/common.hpp"
#include "fdcnet/tensor_ops.hpp"

namespace fdcnet {

std::vector<Embedding> embed_features(const torch::Tensor& features) {
  auto pooled = ops::l2_normalize(ops::gap(features).to(torch::kFloat), 1, kNormEps).contiguous();
  std::vector<Embedding> out(pooled.size(0));
  const auto* data = pooled.data_ptr<float>();
  const int64_t dim = pooled.size(1);
  for (int64_t i = 0; i < pooled.size(0); ++i) out[i].assign(data + i * dim, data + (i + 1) * dim);
  return out;
}

std::vector<ExemplarCandidate> compute_embeddings(WsolNetImpl& net, const torch::Tensor& pixels,
                                                  const std::vector<std::string>& image_ids, int64_t batch_size) {
  if (pixels.size(0) != static_cast<int64_t>(image_ids.size())) {
    throw ConfigError("compute_embeddings: pixel and id counts differ");
  }
  torch::NoGradGuard no_grad;
  std::vector<ExemplarCandidate> out;
  out.reserve(image_ids.size());
  for (int64_t start = 0; start < pixels.size(0); start += batch_size) {
    const int64_t n = std::min(batch_size, pixels.size(0) - start);
    auto embeddings = embed_features(net.backbone_forward(pixels.narrow(0, start, n)));
    for (int64_t i = 0; i < n; ++i) out.push_back({image_ids[start + i], std::move(embeddings[i])});
  }
  return out;
}

std::vector<size_t> herding_order(const std::vector<ExemplarCandidate>& candidates, size_t m) {
  if (m > candidates.size()) {
    throw ConfigError("herding: asked for " + std::to_string(m) + " exemplars from " +
                      std::to_string(candidates.size()) + " candidates");
  }
  if (candidates.empty()) return {};
  const size_t dim = candidates.front().embedding.size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& c : candidates) {
    if (c.embedding.size() != dim) throw ConfigError("herding: embeddings differ in length");
    for (size_t d = 0; d < dim; ++d) mean[d] += c.embedding[d];
  }
  for (auto& v : mean) v /= static_cast<double>(candidates.size());

  std::vector<double> running(dim, 0.0);
  std::vector<bool> used(candidates.size(), false);
  std::vector<size_t> order;
  order.reserve(m);
  for (size_t step = 1; step <= m; ++step) {
    size_t best = candidates.size();
    double best_dist = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < candidates.size(); ++i) {
      if (used[i]) continue;
      double dist = 0.0;
      for (size_t d = 0; d < dim; ++d) {
        const double diff = mean[d] - (running[d] + candidates[i].embedding[d]) / static_cast<double>(step);
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    used[best] = true;
    order.push_back(best);
    for (size_t d = 0; d < dim; ++d) running[d] += candidates[best].embedding[d];
  }
  return order;
}

std::vector<std::string> herding_select(const std::vector<ExemplarCandidate>& candidates, size_t m) {
  std::vector<std::string> ids;
  for (size_t i : herding_order(candidates, m)) ids.push_back(candidates[i].image_id);
  return ids;
}

ExemplarStore::ExemplarStore(int64_t budget) : budget_(budget) {
  if (budget < 1) throw ConfigError("exemplar budget must be positive");
}

size_t ExemplarStore::total_size() const {
  size_t n = 0;
  for (const auto& [cls, list] : per_class_) n += list.size();
  return n;
}

void ExemplarStore::rebalance(const std::map<int64_t, std::vector<ExemplarCandidate>>& new_classes,
                              int64_t k_acc) {
  if (k_acc < 1 || budget_ < k_acc) {
    throw ConfigError("exemplar budget " + std::to_string(budget_) + " is smaller than the class count " +
                      std::to_string(k_acc));
  }
  for (const auto& [cls, cands] : new_classes) {
    if (per_class_.count(cls)) throw ConfigError("class " + std::to_string(cls) + " is already stored");
  }
  if (static_cast<int64_t>(per_class_.size() + new_classes.size()) > k_acc) {
    throw ConfigError("more stored classes than k_acc");
  }
  quota_ = budget_ / k_acc;
  const auto quota = static_cast<size_t>(quota_);
  for (auto& [cls, list] : per_class_) {
    if (list.size() > quota) list.resize(quota);
  }
  for (const auto& [cls, cands] : new_classes) {
    auto& list = per_class_[cls];
    for (size_t i : herding_order(cands, std::min(quota, cands.size()))) {
      list.push_back({cands[i].image_id, cands[i].embedding});
    }
  }
}

void ExemplarStore::write_manifest(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write exemplar manifest " + path.string());
  for (const auto& [cls, list] : per_class_) {
    for (size_t rank = 0; rank < list.size(); ++rank) out << cls << '\t' << list[rank].image_id << '\t' << rank << '\n';
  }
}

ExemplarStore ExemplarStore::read_manifest(const std::filesystem::path& path, int64_t budget, int64_t k_acc) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read exemplar manifest " + path.string());
  ExemplarStore store(budget);
  store.quota_ = k_acc > 0 ? budget / k_acc : 0;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cls, id, rank;
    if (!std::getline(fields, cls, '\t') || !std::getline(fields, id, '\t') || !std::getline(fields, rank)) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    auto& list = store.per_class_[std::stoll(cls)];
    if (static_cast<size_t>(std::stoll(rank)) != list.size()) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": selection ranks out of order");
    }
    list.push_back({id, {}});
  }
  return store;
}

}  // namespace fdcnet
