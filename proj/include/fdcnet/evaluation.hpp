#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "fdcnet/fdc.hpp"
#include "fdcnet/model.hpp"
#include "fdcnet/samples.hpp"

namespace fdcnet {

/// Half-open pixel box [x1,x2)×[y1,y2) in original image coordinates.
struct LocBox {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  int64_t area() const { return int64_t{x2 - x1} * (y2 - y1); }
  bool valid() const { return x1 < x2 && y1 < y2; }
  bool operator==(const LocBox&) const = default;
};

double iou(const LocBox& a, const LocBox& b);

/// Tight box of the largest 8-connected foreground component of a row-major
/// binary image. Equal-sized components resolve to the one met first in raster
/// order. Empty foreground gives nullopt.
std::optional<LocBox> largest_component_box(const std::vector<uint8_t>& binary, int height, int width);

/// Bilinearly upsamples an N×N sigmoid map to height×width, keeps pixels >= tau and
/// boxes the largest component. An empty foreground falls back to the full image.
LocBox mask_to_box(const torch::Tensor& loc_map, int height, int width, double tau);

/// Ground truth for one test image.
struct EvalTarget {
  std::optional<LocBox> box;
  int height = 0;
  int width = 0;
};

struct LocAccuracy {
  double top1 = 0.0;
  double top5 = 0.0;
  double gtk = 0.0;
  int64_t evaluated = 0;
  int64_t skipped = 0;  // images without a ground-truth box
  int64_t top1_hits = 0;
  int64_t top5_hits = 0;
  int64_t gtk_hits = 0;

  void add(const LocAccuracy& other);  // merges hit counts and recomputes the fractions
};

struct EvalOptions {
  double iou_thresh = 0.5;
  double tau = 0.5;
  int64_t batch_size = 64;
};

/// Scores already computed predictions: class_probs B×K, loc_maps B×K×N×N (sigmoid).
/// GT-known boxes the GT channel; Top-5 also needs GT among the five best classes;
/// Top-1 needs the best class to be GT and boxes that (same) channel.
LocAccuracy score_predictions(const torch::Tensor& class_probs, const torch::Tensor& loc_maps,
                              const torch::Tensor& labels, const std::vector<EvalTarget>& targets,
                              const EvalOptions& options);

/// Runs the network (fused with fdc when given) over the test samples.
LocAccuracy eval_task(WsolNetImpl& net, FdcPairImpl* fdc, const SampleSet& test,
                      const std::vector<EvalTarget>& targets, const EvalOptions& options);

/// (mean, last) of per-task accuracies.
std::pair<double, double> aggregate(const std::vector<double>& per_task);

struct TaskRecord {
  int64_t task = 0;
  int64_t classes = 0;
  LocAccuracy acc;                      // reported metrics (fused when compensation exists)
  LocAccuracy plain;                    // same test set without compensation
  std::optional<LocAccuracy> old_acc;   // previously learned classes only, fused
  std::optional<LocAccuracy> old_plain; // previously learned classes only, plain
};

struct MetricSummary {
  double top1 = 0.0;
  double top5 = 0.0;
  double gtk = 0.0;
};

struct IncrementalReport {
  std::string name;
  std::vector<TaskRecord> per_task;
  MetricSummary acc_avg;
  MetricSummary acc_last;

  void finalize();  // recomputes acc_avg / acc_last from per_task
  std::string metrics_csv() const;
  std::string to_json() const;
  static IncrementalReport from_json(const std::string& text);
};

}  // namespace fdcnet
