#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fdcnet/fdc.hpp"
#include "fdcnet/kd_losses.hpp"
#include "fdcnet/model.hpp"
#include "fdcnet/wsol_losses.hpp"

namespace fdcnet {

struct DatasetConfig {
  std::string root = "data/synthetic";
  std::string manifest = "manifest.tsv";  // relative to root unless absolute
  int64_t input_size = 64;
  std::vector<double> mean{0.485, 0.456, 0.406};
  std::vector<double> std{0.229, 0.224, 0.225};

  std::filesystem::path manifest_path() const;
};

struct ScheduleConfig {
  int64_t base = 2;
  int64_t increment = 2;
  int64_t seed = 0;
  bool shuffle = true;
};

struct ModelConfig {
  std::vector<int64_t> backbone_channels{64, 128, 256, 256};
  int64_t downsample = -1;
  int64_t classifier_width = 256;
  int64_t localizer_kernel = 3;
  bool cosine = true;
  double init_scale = 10.0;
  int64_t fdc_hidden = 128;
};

/// Which class-incremental components are active. Turning all of them off (plus a
/// plain classifier head) gives naive fine-tuning.
struct MethodConfig {
  bool kd = true;
  bool exemplars = true;
  bool fdc = true;
};

struct MemoryConfig {
  int64_t budget = 200;
};

struct LossConfig {
  WsolLossWeights wsol;
  KdLossWeights kd;
  double beta = 1.0;
};

struct TrainConfig {
  int64_t epochs_base = 30;
  int64_t epochs_incr = 30;
  int64_t fdc_epochs = 3;
  int64_t batch_size = 32;
  double lr = 0.01;
  double fdc_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_decay_fraction = 0.7;  // step decay point as a fraction of the task's epochs
  double lr_gamma = 0.1;
  double grad_clip = 0.0;          // global gradient-norm clip; 0 disables
  bool hflip = true;
  int64_t threads = 1;
};

struct EvalConfig {
  double iou_thresh = 0.5;
  double tau = 0.5;
};

struct RunConfig {
  std::string name = "fdcnet";
  std::string out_dir = "run";
  int64_t seed = 0;
  bool checkpoints = true;

  std::filesystem::path run_dir() const { return std::filesystem::path(out_dir) / name; }
};

/// Experiment configuration. The text form is one `dotted.key = value` per line;
/// `#` starts a comment. Every key has a default, so an empty file is valid.
struct Config {
  DatasetConfig dataset;
  ScheduleConfig schedule;
  ModelConfig model;
  MethodConfig method;
  MemoryConfig memory;
  LossConfig loss;
  TrainConfig train;
  EvalConfig eval;
  RunConfig run;

  /// Applies one key. Unknown keys and unparsable values raise ValidationError.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  void validate() const;

  std::string to_text() const;
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  NetOptions net_options(int64_t num_classes) const;
  FdcTrainOptions fdc_options(uint64_t seed) const;
};

bool operator==(const Config& a, const Config& b);

}  // namespace fdcnet
