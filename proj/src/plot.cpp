#include "fdcnet/plot.hpp"

#include <algorithm>
#include <cstdio>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fdcnet/common.hpp"

namespace fdcnet {

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::kTop1: return "top1_loc";
    case Metric::kTop5: return "top5_loc";
    default: return "gtk_loc";
  }
}

double metric_value(const LocAccuracy& acc, Metric m) {
  switch (m) {
    case Metric::kTop1: return acc.top1;
    case Metric::kTop5: return acc.top5;
    default: return acc.gtk;
  }
}

namespace {

const cv::Scalar kSeriesColors[] = {{200, 80, 30}, {40, 40, 210}, {40, 150, 40}, {160, 40, 160}, {20, 150, 200},
                                    {90, 90, 90}};

}  // namespace

cv::Mat plot_accuracy(const std::vector<IncrementalReport>& reports, Metric metric, int width, int height) {
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int left = 60, right = 20, top = 36, bottom = 50;
  const int pw = width - left - right, ph = height - top - bottom;
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  const cv::Scalar ink(40, 40, 40), grid(225, 225, 225);

  size_t max_tasks = 1;
  for (const auto& r : reports) max_tasks = std::max(max_tasks, r.per_task.size());
  auto xpos = [&](size_t i) {
    return left + (max_tasks == 1 ? pw / 2 : static_cast<int>(i * pw / (max_tasks - 1)));
  };
  auto ypos = [&](double v) { return top + static_cast<int>((1.0 - std::clamp(v, 0.0, 1.0)) * ph); };

  for (int k = 0; k <= 10; k += 2) {
    const int y = ypos(k / 10.0);
    cv::line(img, {left, y}, {left + pw, y}, grid, 1);
    char label[16];
    std::snprintf(label, sizeof(label), "%d", k * 10);
    cv::putText(img, label, {left - 34, y + 5}, font, 0.4, ink, 1, cv::LINE_AA);
  }
  for (size_t i = 0; i < max_tasks; ++i) {
    cv::putText(img, std::to_string(i + 1), {xpos(i) - 4, top + ph + 18}, font, 0.4, ink, 1, cv::LINE_AA);
  }
  cv::rectangle(img, {left, top}, {left + pw, top + ph}, ink, 1);
  cv::putText(img, "task", {left + pw / 2 - 14, height - 12}, font, 0.45, ink, 1, cv::LINE_AA);
  cv::putText(img, std::string("incremental ") + metric_name(metric) + " (%)", {left, 22}, font, 0.55, ink, 1,
              cv::LINE_AA);

  for (size_t s = 0; s < reports.size(); ++s) {
    const auto color = kSeriesColors[s % std::size(kSeriesColors)];
    const auto& rows = reports[s].per_task;
    for (size_t i = 0; i < rows.size(); ++i) {
      const cv::Point p(xpos(i), ypos(metric_value(rows[i].acc, metric)));
      if (i > 0) {
        cv::line(img, {xpos(i - 1), ypos(metric_value(rows[i - 1].acc, metric))}, p, color, 2, cv::LINE_AA);
      }
      cv::circle(img, p, 4, color, cv::FILLED, cv::LINE_AA);
    }
    const int ly = top + 16 + static_cast<int>(s) * 18;
    cv::line(img, {left + pw - 150, ly - 4}, {left + pw - 130, ly - 4}, color, 2, cv::LINE_AA);
    cv::putText(img, reports[s].name, {left + pw - 124, ly}, font, 0.42, ink, 1, cv::LINE_AA);
  }
  return img;
}

std::vector<std::filesystem::path> write_plots(const std::vector<IncrementalReport>& reports,
                                               const std::filesystem::path& out_dir) {
  std::vector<std::filesystem::path> paths;
  for (Metric m : {Metric::kTop1, Metric::kTop5, Metric::kGtk}) {
    auto path = out_dir / (std::string(metric_name(m)) + ".png");
    if (!cv::imwrite(path.string(), plot_accuracy(reports, m))) throw Error("cannot write " + path.string());
    paths.push_back(path);
  }
  return paths;
}

}  // namespace fdcnet
