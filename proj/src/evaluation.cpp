#include "fdcnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "fdcnet/common.hpp"

namespace fdcnet {

namespace F = torch::nn::functional;

double iou(const LocBox& a, const LocBox& b) {
  const int64_t iw = std::max(0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const int64_t ih = std::max(0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const int64_t inter = iw * ih;
  const int64_t uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

std::optional<LocBox> largest_component_box(const std::vector<uint8_t>& binary, int height, int width) {
  if (binary.size() != static_cast<size_t>(height) * static_cast<size_t>(width)) {
    throw ConfigError("largest_component_box: buffer size does not match dimensions");
  }
  std::vector<uint8_t> seen(binary.size(), 0);
  std::vector<int> stack;
  std::optional<LocBox> best;
  int64_t best_count = 0;
  for (int y0 = 0; y0 < height; ++y0) {
    for (int x0 = 0; x0 < width; ++x0) {
      const size_t start = static_cast<size_t>(y0) * width + x0;
      if (!binary[start] || seen[start]) continue;
      LocBox box{x0, y0, x0 + 1, y0 + 1};
      int64_t count = 0;
      seen[start] = 1;
      stack.assign(1, static_cast<int>(start));
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int y = p / width, x = p % width;
        ++count;
        box.x1 = std::min(box.x1, x);
        box.y1 = std::min(box.y1, y);
        box.x2 = std::max(box.x2, x + 1);
        box.y2 = std::max(box.y2, y + 1);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= height || nx < 0 || nx >= width) continue;
            const size_t q = static_cast<size_t>(ny) * width + nx;
            if (binary[q] && !seen[q]) {
              seen[q] = 1;
              stack.push_back(static_cast<int>(q));
            }
          }
        }
      }
      if (count > best_count) {
        best_count = count;
        best = box;
      }
    }
  }
  return best;
}

LocBox mask_to_box(const torch::Tensor& loc_map, int height, int width, double tau) {
  if (loc_map.dim() != 2) throw ConfigError("mask_to_box expects an N×N map");
  torch::NoGradGuard no_grad;
  auto up = F::interpolate(loc_map.to(torch::kFloat).view({1, 1, loc_map.size(0), loc_map.size(1)}),
                           F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{height, width})
                               .mode(torch::kBilinear)
                               .align_corners(false))
                .view({height, width});
  auto binary_t = (up >= tau).to(torch::kUInt8).contiguous();
  const auto* data = binary_t.data_ptr<uint8_t>();
  std::vector<uint8_t> binary(data, data + binary_t.numel());
  auto box = largest_component_box(binary, height, width);
  return box ? *box : LocBox{0, 0, width, height};
}

LocAccuracy score_predictions(const torch::Tensor& class_probs, const torch::Tensor& loc_maps,
                              const torch::Tensor& labels, const std::vector<EvalTarget>& targets,
                              const EvalOptions& options) {
  const int64_t b = class_probs.size(0);
  if (static_cast<int64_t>(targets.size()) != b || loc_maps.size(0) != b || labels.size(0) != b) {
    throw ConfigError("score_predictions: batch sizes differ");
  }
  auto probs = class_probs.to(torch::kDouble).contiguous();
  auto maps = loc_maps.to(torch::kFloat);
  auto label_acc = labels.to(torch::kLong).contiguous();
  const int64_t k = probs.size(1);
  LocAccuracy acc;
  for (int64_t i = 0; i < b; ++i) {
    const auto& target = targets[i];
    if (!target.box) {
      ++acc.skipped;
      continue;
    }
    ++acc.evaluated;
    const int64_t gt = label_acc[i].item<int64_t>();
    const double* p = probs[i].data_ptr<double>();
    // Rank of the GT class; ties resolve to the lower class index.
    int64_t better = 0;
    for (int64_t c = 0; c < k; ++c) {
      if (p[c] > p[gt] || (p[c] == p[gt] && c < gt)) ++better;
    }
    const LocBox box = mask_to_box(maps[i][gt], target.height, target.width, options.tau);
    const bool loc_ok = iou(box, *target.box) >= options.iou_thresh;
    if (loc_ok) ++acc.gtk_hits;
    if (loc_ok && better < 5) ++acc.top5_hits;
    // With the GT class ranked first, the top-1 channel is the GT channel.
    if (loc_ok && better == 0) ++acc.top1_hits;
  }
  acc.add(LocAccuracy{});
  return acc;
}

void LocAccuracy::add(const LocAccuracy& other) {
  evaluated += other.evaluated;
  skipped += other.skipped;
  top1_hits += other.top1_hits;
  top5_hits += other.top5_hits;
  gtk_hits += other.gtk_hits;
  const double n = evaluated > 0 ? static_cast<double>(evaluated) : 1.0;
  top1 = static_cast<double>(top1_hits) / n;
  top5 = static_cast<double>(top5_hits) / n;
  gtk = static_cast<double>(gtk_hits) / n;
}

LocAccuracy eval_task(WsolNetImpl& net, FdcPairImpl* fdc, const SampleSet& test,
                      const std::vector<EvalTarget>& targets, const EvalOptions& options) {
  if (static_cast<int64_t>(targets.size()) != test.size()) throw ConfigError("eval_task: target count mismatch");
  torch::NoGradGuard no_grad;
  LocAccuracy total;
  for (const auto& idx : make_batches(test.size(), options.batch_size, nullptr)) {
    auto batch = test.batch(idx);
    auto fused = fuse_outputs(net.forward_full(batch.pixels), fdc);
    std::vector<EvalTarget> batch_targets;
    auto acc = idx.accessor<int64_t, 1>();
    for (int64_t i = 0; i < acc.size(0); ++i) batch_targets.push_back(targets[acc[i]]);
    total.add(score_predictions(fused.class_probs, fused.loc_map, batch.labels, batch_targets, options));
  }
  return total;
}

std::pair<double, double> aggregate(const std::vector<double>& per_task) {
  if (per_task.empty()) throw ConfigError("aggregate needs at least one task");
  const double sum = std::accumulate(per_task.begin(), per_task.end(), 0.0);
  return {sum / static_cast<double>(per_task.size()), per_task.back()};
}

void IncrementalReport::finalize() {
  if (per_task.empty()) return;
  std::vector<double> top1, top5, gtk;
  for (const auto& r : per_task) {
    top1.push_back(r.acc.top1);
    top5.push_back(r.acc.top5);
    gtk.push_back(r.acc.gtk);
  }
  std::tie(acc_avg.top1, acc_last.top1) = aggregate(top1);
  std::tie(acc_avg.top5, acc_last.top5) = aggregate(top5);
  std::tie(acc_avg.gtk, acc_last.gtk) = aggregate(gtk);
}

std::string IncrementalReport::metrics_csv() const {
  std::string out = "task,classes,top1_loc,top5_loc,gtk_loc\n";
  char line[128];
  for (const auto& r : per_task) {
    std::snprintf(line, sizeof(line), "%lld,%lld,%.6f,%.6f,%.6f\n", static_cast<long long>(r.task),
                  static_cast<long long>(r.classes), r.acc.top1, r.acc.top5, r.acc.gtk);
    out += line;
  }
  return out;
}

namespace {

nlohmann::json accuracy_json(const LocAccuracy& a) {
  return {{"top1_loc", a.top1}, {"top5_loc", a.top5}, {"gtk_loc", a.gtk}, {"evaluated", a.evaluated},
          {"skipped", a.skipped}};
}

LocAccuracy accuracy_from_json(const nlohmann::json& j) {
  LocAccuracy a;
  a.top1 = j.at("top1_loc").get<double>();
  a.top5 = j.at("top5_loc").get<double>();
  a.gtk = j.at("gtk_loc").get<double>();
  a.evaluated = j.value("evaluated", int64_t{0});
  a.skipped = j.value("skipped", int64_t{0});
  a.top1_hits = std::llround(a.top1 * static_cast<double>(a.evaluated));
  a.top5_hits = std::llround(a.top5 * static_cast<double>(a.evaluated));
  a.gtk_hits = std::llround(a.gtk * static_cast<double>(a.evaluated));
  return a;
}

nlohmann::json summary_json(const MetricSummary& s) {
  return {{"top1_loc", s.top1}, {"top5_loc", s.top5}, {"gtk_loc", s.gtk}};
}

MetricSummary summary_from_json(const nlohmann::json& j) {
  return {j.at("top1_loc").get<double>(), j.at("top5_loc").get<double>(), j.at("gtk_loc").get<double>()};
}

}  // namespace

std::string IncrementalReport::to_json() const {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& r : per_task) {
    nlohmann::json t = accuracy_json(r.acc);
    t["task"] = r.task;
    t["classes"] = r.classes;
    t["plain"] = accuracy_json(r.plain);
    if (r.old_acc) t["old_classes"] = accuracy_json(*r.old_acc);
    if (r.old_plain) t["old_classes_plain"] = accuracy_json(*r.old_plain);
    tasks.push_back(std::move(t));
  }
  nlohmann::json j = {{"format", "fdcnet-report"},
                      {"version", 1},
                      {"name", name},
                      {"per_task", tasks},
                      {"acc_avg", summary_json(acc_avg)},
                      {"acc_last", summary_json(acc_last)}};
  return j.dump(2) + "\n";
}

IncrementalReport IncrementalReport::from_json(const std::string& text) {
  IncrementalReport report;
  try {
    auto j = nlohmann::json::parse(text);
    report.name = j.value("name", std::string{});
    for (const auto& t : j.at("per_task")) {
      TaskRecord r;
      r.task = t.at("task").get<int64_t>();
      r.classes = t.at("classes").get<int64_t>();
      r.acc = accuracy_from_json(t);
      r.plain = t.contains("plain") ? accuracy_from_json(t.at("plain")) : r.acc;
      if (t.contains("old_classes")) r.old_acc = accuracy_from_json(t.at("old_classes"));
      if (t.contains("old_classes_plain")) r.old_plain = accuracy_from_json(t.at("old_classes_plain"));
      report.per_task.push_back(r);
    }
    report.acc_avg = summary_from_json(j.at("acc_avg"));
    report.acc_last = summary_from_json(j.at("acc_last"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
  return report;
}

}  // namespace fdcnet
