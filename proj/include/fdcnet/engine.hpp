#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "fdcnet/config.hpp"
#include "fdcnet/dataset.hpp"
#include "fdcnet/evaluation.hpp"
#include "fdcnet/exemplars.hpp"
#include "fdcnet/fdc.hpp"
#include "fdcnet/model.hpp"

namespace fdcnet {

struct TaskSchedule {
  int64_t base = 0;
  int64_t increment = 0;
  int64_t num_tasks = 0;
  std::vector<int64_t> class_order;         // dataset class id of each network channel
  std::vector<std::vector<int64_t>> tasks;  // dataset class ids introduced by each task

  int64_t total_classes() const { return static_cast<int64_t>(class_order.size()); }
  /// Classes learned after task t (1-based).
  int64_t accumulated(int64_t t) const;
  /// channel_of_class()[class_id] = network channel.
  std::vector<int64_t> channel_of_class() const;
};

/// base + (T-1) * increment must equal total for an integer T >= 1.
TaskSchedule build_schedule(int64_t total, int64_t base, int64_t increment, uint64_t seed, bool shuffle = true);

/// Deterministic 64-bit mixing of a seed with a stream tag.
uint64_t derive_seed(uint64_t seed, uint64_t tag);

/// Column names of the per-step loss record; distillation terms are 0 without a previous task.
const std::vector<std::string>& loss_term_names();

struct StepLog {
  int64_t task = 0;
  int64_t epoch = 0;
  int64_t step = 0;
  double lr = 0.0;
  std::vector<double> terms;  // in loss_term_names() order
};

struct EpochLog {
  int64_t task = 0;
  int64_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::vector<double> terms;  // sample-weighted means over the epoch
};

/// CSV with one row per optimizer step.
std::string step_log_csv(const std::vector<StepLog>& steps);

struct RunState {
  int64_t task = 0;  // last completed task, 0 before the first
  WsolNet cur{nullptr};
  WsolNet prev{nullptr};  // frozen snapshot taken at the start of the current task
  FdcPair cur_fdc{nullptr};
  FdcPair prev_fdc{nullptr};
  ExemplarStore store{1};
};

/// Runs the class-incremental protocol task by task over one dataset.
class IncrementalEngine {
 public:
  IncrementalEngine(Config config, const DatasetManifest& manifest, std::ostream* log = nullptr);

  const Config& config() const { return config_; }
  const TaskSchedule& schedule() const { return schedule_; }
  RunState& state() { return state_; }
  const std::vector<EpochLog>& epoch_log() const { return epoch_log_; }
  const std::vector<StepLog>& step_log() const { return step_log_; }

  /// Snapshot, expand, train, compensate, rebalance and checkpoint the next task.
  void run_task();
  /// Steps 1-2 of the next task only (snapshot and head expansion); used by tests.
  void begin_task();
  void finish_task();  // training and the remaining steps for a task begun with begin_task

  /// Evaluates the current state on the test images of all learned classes.
  TaskRecord evaluate();

  /// Every remaining task, with an evaluation after each; writes the run directory.
  IncrementalReport run_all();

  /// Training images of the given task plus the current exemplars, and which rows are exemplars.
  SampleSet task_training_set(int64_t t, torch::Tensor* is_exemplar = nullptr) const;
  const LoadedSamples& train_data() const { return train_; }
  const LoadedSamples& test_data() const { return test_; }

  std::filesystem::path task_dir(int64_t t) const;

 private:
  void train_network(const SampleSet& data, const torch::Tensor& is_exemplar);
  void log(const std::string& line) const;

  Config config_;
  TaskSchedule schedule_;
  LoadedSamples train_;
  LoadedSamples test_;
  std::map<std::string, int64_t> train_index_;
  RunState state_;
  std::vector<EpochLog> epoch_log_;
  std::vector<StepLog> step_log_;
  bool task_open_ = false;
  std::ostream* log_;
};

/// Loads the manifest, runs every task and returns the report.
IncrementalReport run_experiment(const Config& config, std::ostream* log = nullptr);

/// Re-evaluates a saved task checkpoint of a run directory.
/// Reloads a task checkpoint and evaluates it; tau overrides the run's eval.tau.
TaskRecord evaluate_checkpoint(const std::filesystem::path& run_dir, int64_t task,
                               std::optional<double> tau = std::nullopt);

/// Configuration presets for the comparison runs.
Config finetune_preset(Config config);  // no distillation, exemplars, cosine head or compensation
Config joint_preset(Config config, int64_t total_classes);  // every class in a single task

}  // namespace fdcnet
