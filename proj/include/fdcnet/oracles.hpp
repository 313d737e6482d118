#pragma once

// Naive loop-by-loop reference implementations over plain arrays.

#include <cstdint>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "fdcnet/evaluation.hpp"
#include "fdcnet/exemplars.hpp"
#include "fdcnet/model.hpp"

namespace fdcnet::oracle {

/// Dense row-major array of doubles.
struct Array {
  std::vector<int64_t> shape;
  std::vector<double> v;

  Array() = default;
  explicit Array(std::vector<int64_t> s);
  int64_t dim(size_t i) const { return shape.at(i); }
  double& at(int64_t a, int64_t b, int64_t c, int64_t d);
  double at(int64_t a, int64_t b, int64_t c, int64_t d) const;
  double& at(int64_t a, int64_t b);
  double at(int64_t a, int64_t b) const;
};

Array from_tensor(const torch::Tensor& t);
std::vector<int64_t> labels_of(const torch::Tensor& t);

// class score and localization maps are B×K×N×N
double loss_cls(const Array& cls, const std::vector<int64_t>& y);
double loss_cls_fg(const Array& cls, const Array& cam, const std::vector<int64_t>& y);
double loss_bas_from_maps(const Array& cls, const Array& bg, const std::vector<int64_t>& y, double eps,
                          bool on_probabilities);
double loss_ac(const Array& cam, const std::vector<int64_t>& y);
double loss_kd_cls(const Array& cls_new, const Array& cls_old, int64_t n_old);
double loss_kd_loc(const Array& cam_new, const Array& cam_old, const std::vector<int64_t>& y);
double loss_kd_feat(const Array& tap_new, const Array& tap_old);
/// total = dc_c + beta * dc_l
double loss_dc(const Array& cur_cls_old, const Array& comp_cls, const Array& target_cls, const Array& cur_cam_old,
               const Array& comp_cam, const Array& target_cam, double beta);

/// Classifier scores of the network on B×C×N×N features, by direct convolution loops.
Array classifier_scores(WsolNetImpl& net, const Array& features);
/// features * (1 - mask) with mask B×N×N
Array mask_background(const Array& features, const Array& fg_mask);
/// sigmoid of the label channel of a B×K×N×N map, as B×N×N
Array label_sigmoid(const Array& cam, const std::vector<int64_t>& y);

/// [prev[:, :n] + g ; prev[:, n:]] channel concatenation; g may be empty (n = 0).
Array assemble(const Array& prev, const Array& g);
/// softmax over K of the pooled map, B×K
Array pooled_softmax(const Array& map);
Array sigmoid(const Array& a);

std::vector<size_t> herding(const std::vector<std::vector<double>>& embeddings, size_t m);

/// Intersection over union by counting pixels of the half-open boxes.
double iou_by_pixels(const LocBox& a, const LocBox& b);
/// Largest 8-connected component by union-find; ties go to the component whose
/// first pixel comes first in raster order.
std::optional<LocBox> largest_component(const std::vector<uint8_t>& binary, int height, int width);

}  // namespace fdcnet::oracle
