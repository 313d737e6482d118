#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "fdcnet/evaluation.hpp"

namespace fdcnet {

enum class Metric { kTop1, kTop5, kGtk };

const char* metric_name(Metric m);  // "top1_loc", "top5_loc", "gtk_loc"
double metric_value(const LocAccuracy& acc, Metric m);

/// Accuracy-vs-task line chart, one series per report.
cv::Mat plot_accuracy(const std::vector<IncrementalReport>& reports, Metric metric, int width = 640,
                      int height = 420);

/// Writes <metric>.png for each metric into out_dir and returns the paths.
std::vector<std::filesystem::path> write_plots(const std::vector<IncrementalReport>& reports,
                                               const std::filesystem::path& out_dir);

}  // namespace fdcnet
