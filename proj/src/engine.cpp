#include "fdcnet/engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "fdcnet/checkpoint.hpp"
#include "fdcnet/common.hpp"
#include "fdcnet/kd_losses.hpp"
#include "fdcnet/wsol_losses.hpp"

namespace fdcnet {

namespace fs = std::filesystem;

int64_t TaskSchedule::accumulated(int64_t t) const {
  if (t < 1 || t > num_tasks) throw ConfigError("task index " + std::to_string(t) + " out of range");
  return base + (t - 1) * increment;
}

std::vector<int64_t> TaskSchedule::channel_of_class() const {
  std::vector<int64_t> out(class_order.size(), -1);
  for (size_t ch = 0; ch < class_order.size(); ++ch) out.at(class_order[ch]) = static_cast<int64_t>(ch);
  return out;
}

TaskSchedule build_schedule(int64_t total, int64_t base, int64_t increment, uint64_t seed, bool shuffle) {
  if (total < 1 || base < 1 || increment < 1) throw ConfigError("schedule sizes must be positive");
  if (base > total) throw ConfigError("base classes exceed total classes");
  if ((total - base) % increment != 0) {
    throw ConfigError("schedule: " + std::to_string(total) + " classes do not split into a base of " +
                      std::to_string(base) + " plus increments of " + std::to_string(increment));
  }
  TaskSchedule s;
  s.base = base;
  s.increment = increment;
  s.num_tasks = 1 + (total - base) / increment;
  s.class_order.resize(total);
  std::iota(s.class_order.begin(), s.class_order.end(), 0);
  if (shuffle) {
    std::mt19937_64 rng(seed);
    for (int64_t i = total - 1; i > 0; --i) {
      const auto j = static_cast<int64_t>(rng() % static_cast<uint64_t>(i + 1));
      std::swap(s.class_order[i], s.class_order[j]);
    }
  }
  int64_t start = 0;
  for (int64_t t = 1; t <= s.num_tasks; ++t) {
    const int64_t n = t == 1 ? base : increment;
    s.tasks.emplace_back(s.class_order.begin() + start, s.class_order.begin() + start + n);
    start += n;
  }
  return s;
}

uint64_t derive_seed(uint64_t seed, uint64_t tag) {
  uint64_t x = seed * 0x9e3779b97f4a7c15ULL + tag;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return (x ^ (x >> 31)) & 0x7fffffffffffffffULL;
}

namespace {

enum SeedTag : uint64_t { kInitTag = 1, kScheduleTag = 2, kTrainTag = 100, kExpandTag = 200, kFdcTag = 300 };

PixelNormalization normalization(const Config& c) { return {c.dataset.mean, c.dataset.std}; }

void write_text(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void scale_lr(torch::optim::Optimizer& opt, double factor) {
  for (auto& group : opt.param_groups()) {
    auto& o = static_cast<torch::optim::SGDOptions&>(group.options());
    o.lr(o.lr() * factor);
  }
}

double current_lr(torch::optim::Optimizer& opt) {
  return static_cast<torch::optim::SGDOptions&>(opt.param_groups().front().options()).lr();
}

}  // namespace

IncrementalEngine::IncrementalEngine(Config config, const DatasetManifest& manifest, std::ostream* log)
    : config_(std::move(config)), log_(log) {
  config_.validate();
  torch::set_num_threads(static_cast<int>(config_.train.threads));
  const uint64_t seed = static_cast<uint64_t>(config_.run.seed);
  schedule_ = build_schedule(manifest.num_classes(), config_.schedule.base, config_.schedule.increment,
                             static_cast<uint64_t>(config_.schedule.seed), config_.schedule.shuffle);
  if (config_.method.exemplars && config_.memory.budget < schedule_.total_classes()) {
    throw ValidationError("memory.budget " + std::to_string(config_.memory.budget) + " is below the " +
                          std::to_string(schedule_.total_classes()) + " classes to store");
  }

  std::vector<size_t> train_idx, test_idx;
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    (manifest.entries[i].split == Split::kTrain ? train_idx : test_idx).push_back(i);
  }
  const auto channels = schedule_.channel_of_class();
  train_ = load_samples(manifest, train_idx, config_.dataset.input_size, normalization(config_), channels);
  test_ = load_samples(manifest, test_idx, config_.dataset.input_size, normalization(config_), channels);
  for (size_t i = 0; i < train_.samples.ids.size(); ++i) train_index_[train_.samples.ids[i]] = static_cast<int64_t>(i);

  torch::manual_seed(derive_seed(seed, kInitTag));
  state_.cur = WsolNet(config_.net_options(schedule_.base));
  state_.store = ExemplarStore(config_.memory.budget);
}

fs::path IncrementalEngine::task_dir(int64_t t) const {
  return config_.run.run_dir() / ("task_" + std::to_string(t));
}

void IncrementalEngine::log(const std::string& line) const {
  if (log_ != nullptr) *log_ << line << std::endl;
}

SampleSet IncrementalEngine::task_training_set(int64_t t, torch::Tensor* is_exemplar) const {
  const auto& classes = schedule_.tasks.at(t - 1);
  std::vector<int64_t> rows;
  for (size_t i = 0; i < train_.class_ids.size(); ++i) {
    if (std::find(classes.begin(), classes.end(), train_.class_ids[i]) != classes.end()) {
      rows.push_back(static_cast<int64_t>(i));
    }
  }
  const size_t n_new = rows.size();
  if (config_.method.exemplars && t > 1) {
    for (const auto& [cls, entries] : state_.store.per_class()) {
      for (const auto& e : entries) {
        auto it = train_index_.find(e.image_id);
        if (it == train_index_.end()) throw ValidationError("exemplar " + e.image_id + " is not a training image");
        rows.push_back(it->second);
      }
    }
  }
  if (is_exemplar != nullptr) {
    *is_exemplar = torch::zeros({static_cast<int64_t>(rows.size())}, torch::kBool);
    if (rows.size() > n_new) is_exemplar->narrow(0, static_cast<int64_t>(n_new), rows.size() - n_new).fill_(true);
  }
  return train_.samples.subset(rows);
}

void IncrementalEngine::begin_task() {
  if (task_open_) throw ContractError("begin_task: previous task still open");
  const int64_t t = state_.task + 1;
  if (t > schedule_.num_tasks) throw ContractError("all tasks are already done");
  if (t > 1) {
    state_.prev = clone_network(state_.cur);
    set_frozen(*state_.prev, true);
    state_.prev->eval();
    state_.prev_fdc = state_.cur_fdc;
    state_.cur->expand_heads(schedule_.increment, derive_seed(config_.run.seed, kExpandTag + t));
  }
  task_open_ = true;
}

void IncrementalEngine::train_network(const SampleSet& data, const torch::Tensor& is_exemplar) {
  const int64_t t = state_.task + 1;
  const auto& tc = config_.train;
  const int64_t epochs = t == 1 ? tc.epochs_base : tc.epochs_incr;
  auto& net = *state_.cur;
  net.train();
  torch::optim::SGD opt(net.parameters(),
                        torch::optim::SGDOptions(tc.lr).momentum(tc.momentum).weight_decay(tc.weight_decay));
  auto gen = make_generator(derive_seed(config_.run.seed, kTrainTag + t));
  const bool distill = t > 1 && config_.method.kd && state_.prev;
  const int64_t n_old = distill ? state_.prev->num_classes() : 0;
  const auto decay_epoch = static_cast<int64_t>(std::ceil(tc.lr_decay_fraction * static_cast<double>(epochs)));

  const size_t n_terms = loss_term_names().size();
  for (int64_t epoch = 0; epoch < epochs; ++epoch) {
    if (epoch == decay_epoch && epoch > 0) scale_lr(opt, tc.lr_gamma);
    std::vector<double> sums(n_terms, 0.0);
    int64_t seen = 0, step = 0;
    for (const auto& idx : make_batches(data.size(), tc.batch_size, &gen)) {
      auto pixels = data.pixels.index_select(0, idx);
      auto labels = data.labels.index_select(0, idx);
      const int64_t b = idx.size(0);
      if (tc.hflip) {
        auto flip = torch::rand({b}, gen) < 0.5;
        pixels = torch::where(flip.view({-1, 1, 1, 1}), pixels.flip({3}), pixels);
      }
      opt.zero_grad();
      auto out = net.forward_full(pixels);
      const auto parts = compute_wsol_losses(net, out, labels, config_.loss.wsol);
      auto loss = loss_wsol_total(parts, config_.loss.wsol);
      std::vector<torch::Tensor> terms = {loss, parts.cls, parts.cls_fg, parts.bas, parts.ac};
      if (distill) {
        ModelOutputs old;
        {
          torch::NoGradGuard no_grad;
          old = state_.prev->forward_full(pixels);
        }
        auto kd_cls = loss_kd_cls(out.cls_map, old.cls_map, n_old);
        auto kd_feat_cls = loss_kd_feat(out.cls_tap_pre_last, old.cls_tap_pre_last);
        auto kd_feat_loc = loss_kd_feat(out.loc_tap_pre_last, old.loc_tap_pre_last);
        auto ex = is_exemplar.index_select(0, idx).nonzero().view({-1});
        auto kd_loc = torch::zeros({}, loss.options());
        if (ex.numel() > 0) {
          // new-data rows count as zero in the batch mean
          kd_loc = loss_kd_loc(out.cam_map.index_select(0, ex), old.cam_map.index_select(0, ex),
                               labels.index_select(0, ex)) *
                   (static_cast<double>(ex.numel()) / static_cast<double>(b));
        }
        loss = loss_ci_total(loss, kd_cls, kd_loc, kd_feat_cls, kd_feat_loc, config_.loss.kd);
        terms[0] = loss;
        terms.insert(terms.end(), {kd_cls, kd_loc, kd_feat_cls, kd_feat_loc});
      }
      loss.backward();
      if (tc.grad_clip > 0) torch::nn::utils::clip_grad_norm_(net.parameters(), tc.grad_clip);
      opt.step();
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw Error("task " + std::to_string(t) + " epoch " + std::to_string(epoch + 1) + ": loss is not finite");
      }
      StepLog record{t, epoch + 1, ++step, current_lr(opt), std::vector<double>(n_terms, 0.0)};
      for (size_t i = 0; i < terms.size(); ++i) {
        record.terms[i] = terms[i].item<double>();
        sums[i] += record.terms[i] * static_cast<double>(b);
      }
      step_log_.push_back(std::move(record));
      seen += b;
    }
    EpochLog entry{t, epoch + 1, 0.0, current_lr(opt), sums};
    for (auto& v : entry.terms) v = seen > 0 ? v / static_cast<double>(seen) : 0.0;
    entry.loss = entry.terms[0];
    epoch_log_.push_back(entry);
    std::ostringstream line;
    line << "task " << t << " epoch " << entry.epoch << "/" << epochs << " loss " << entry.loss << " (";
    for (size_t i = 1; i < n_terms; ++i) {
      if (!distill && i >= 5) break;
      line << (i > 1 ? " " : "") << loss_term_names()[i] << " " << entry.terms[i];
    }
    log(line.str() + ")");
  }
  net.eval();
}

void IncrementalEngine::finish_task() {
  if (!task_open_) throw ContractError("finish_task: no task begun");
  const int64_t t = state_.task + 1;
  const uint64_t seed = static_cast<uint64_t>(config_.run.seed);

  torch::Tensor is_exemplar;
  auto data = task_training_set(t, &is_exemplar);
  log("task " + std::to_string(t) + ": " + std::to_string(data.size()) + " training images (" +
      std::to_string(is_exemplar.sum().item<int64_t>()) + " exemplars), " +
      std::to_string(state_.cur->num_classes()) + " classes");
  const uint64_t prev_hash = state_.prev ? parameter_hash(*state_.prev) : 0;
  train_network(data, is_exemplar);

  state_.cur_fdc = nullptr;
  if (t > 1 && config_.method.fdc) {
    set_frozen(*state_.cur, true);
    auto result = train_fdc(*state_.cur, *state_.prev, pair_or_null(state_.prev_fdc), data,
                            config_.fdc_options(derive_seed(seed, kFdcTag + t)));
    set_frozen(*state_.cur, false);
    state_.cur_fdc = result.pair;
    state_.cur_fdc->eval();
    if (!result.epoch_losses.empty()) {
      log("task " + std::to_string(t) + ": compensation loss " + std::to_string(result.initial_loss) + " -> " +
          std::to_string(result.epoch_losses.back()));
    }
  }
  if (state_.prev && parameter_hash(*state_.prev) != prev_hash) {
    throw ContractError("previous-task network changed during task " + std::to_string(t));
  }

  if (config_.method.exemplars) {
    std::map<int64_t, std::vector<ExemplarCandidate>> candidates;
    for (int64_t cls : schedule_.tasks.at(t - 1)) {
      std::vector<int64_t> rows;
      for (size_t i = 0; i < train_.class_ids.size(); ++i) {
        if (train_.class_ids[i] == cls) rows.push_back(static_cast<int64_t>(i));
      }
      auto subset = train_.samples.subset(rows);
      candidates[cls] = compute_embeddings(*state_.cur, subset.pixels, subset.ids);
    }
    state_.store.rebalance(candidates, schedule_.accumulated(t));
  }

  if (config_.run.checkpoints) {
    const auto dir = task_dir(t);
    fs::create_directories(dir);
    Checkpoint ck;
    ck.task = t;
    ck.net = state_.cur;
    ck.fdc = state_.cur_fdc;
    ck.class_order = schedule_.class_order;
    ck.rng_state = make_generator(derive_seed(seed, kTrainTag + t + 1)).get_state();
    save_checkpoint(ck, dir / "checkpoint.safetensors");
    state_.store.write_manifest(dir / "exemplars.tsv");
  }
  state_.task = t;
  task_open_ = false;
}

void IncrementalEngine::run_task() {
  begin_task();
  finish_task();
}

TaskRecord IncrementalEngine::evaluate() {
  if (state_.task < 1) throw ContractError("evaluate: no task has been trained");
  const int64_t k = state_.cur->num_classes();
  const int64_t n_old = state_.task > 1 ? schedule_.accumulated(state_.task - 1) : 0;
  EvalOptions opts{config_.eval.iou_thresh, config_.eval.tau, 64};

  auto pick = [&](int64_t limit) {
    std::vector<int64_t> rows;
    std::vector<EvalTarget> targets;
    auto labels = test_.samples.labels;
    for (int64_t i = 0; i < test_.samples.size(); ++i) {
      if (labels[i].item<int64_t>() < limit) {
        rows.push_back(i);
        targets.push_back(test_.targets[i]);
      }
    }
    return std::make_pair(test_.samples.subset(rows), targets);
  };

  TaskRecord rec;
  rec.task = state_.task;
  rec.classes = k;
  auto [all, all_targets] = pick(k);
  rec.plain = eval_task(*state_.cur, nullptr, all, all_targets, opts);
  rec.acc = state_.cur_fdc ? eval_task(*state_.cur, pair_or_null(state_.cur_fdc), all, all_targets, opts) : rec.plain;
  if (n_old > 0) {
    auto [old, old_targets] = pick(n_old);
    rec.old_plain = eval_task(*state_.cur, nullptr, old, old_targets, opts);
    rec.old_acc = state_.cur_fdc ? eval_task(*state_.cur, pair_or_null(state_.cur_fdc), old, old_targets, opts) : *rec.old_plain;
  }
  return rec;
}

IncrementalReport IncrementalEngine::run_all() {
  const auto dir = config_.run.run_dir();
  fs::create_directories(dir);
  Config resolved = config_;
  resolved.dataset.root = fs::absolute(config_.dataset.root).lexically_normal().string();
  write_text(dir / "config.resolved", resolved.to_text());

  IncrementalReport report;
  report.name = config_.run.name;
  while (state_.task < schedule_.num_tasks) {
    run_task();
    report.per_task.push_back(evaluate());
    report.finalize();
    const auto& r = report.per_task.back();
    log("task " + std::to_string(r.task) + ": top1 " + std::to_string(r.acc.top1) + " top5 " +
        std::to_string(r.acc.top5) + " gt-known " + std::to_string(r.acc.gtk));
    write_text(dir / "metrics.csv", report.metrics_csv());
    write_text(dir / "losses.csv", step_log_csv(step_log_));
    write_text(dir / "report.json", report.to_json());
  }
  return report;
}

const std::vector<std::string>& loss_term_names() {
  static const std::vector<std::string> names = {"total", "cls",    "cls_fg",      "bas",        "ac",
                                                 "kd_cls", "kd_loc", "kd_feat_cls", "kd_feat_loc"};
  return names;
}

std::string step_log_csv(const std::vector<StepLog>& steps) {
  std::ostringstream os;
  os << "task,epoch,step,lr";
  for (const auto& n : loss_term_names()) os << "," << n;
  os << "\n";
  os.precision(9);
  for (const auto& s : steps) {
    os << s.task << "," << s.epoch << "," << s.step << "," << s.lr;
    for (double v : s.terms) os << "," << v;
    os << "\n";
  }
  return os.str();
}

IncrementalReport run_experiment(const Config& config, std::ostream* log) {
  config.validate();
  auto manifest = load_manifest(config.dataset.manifest_path());
  IncrementalEngine engine(config, manifest, log);
  return engine.run_all();
}

TaskRecord evaluate_checkpoint(const fs::path& run_dir, int64_t task, std::optional<double> tau) {
  auto config = Config::load(run_dir / "config.resolved");
  auto ck = load_checkpoint(run_dir / ("task_" + std::to_string(task)) / "checkpoint.safetensors");
  ck.net->eval();
  if (ck.fdc) ck.fdc->eval();
  auto manifest = load_manifest(config.dataset.manifest_path());
  if (static_cast<int64_t>(ck.class_order.size()) != manifest.num_classes()) {
    throw ValidationError("checkpoint class order does not match the dataset");
  }
  std::vector<int64_t> channels(ck.class_order.size());
  for (size_t ch = 0; ch < ck.class_order.size(); ++ch) channels.at(ck.class_order[ch]) = static_cast<int64_t>(ch);

  const int64_t k = ck.net->num_classes();
  const int64_t n_old = ck.fdc ? ck.fdc->n_old() : 0;
  std::vector<size_t> rows;
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (e.split == Split::kTest && channels[e.class_id] < k) rows.push_back(i);
  }
  auto test = load_samples(manifest, rows, config.dataset.input_size, {config.dataset.mean, config.dataset.std},
                           channels);
  EvalOptions opts{config.eval.iou_thresh, tau.value_or(config.eval.tau), 64};
  TaskRecord rec;
  rec.task = task;
  rec.classes = k;
  rec.plain = eval_task(*ck.net, nullptr, test.samples, test.targets, opts);
  rec.acc = ck.fdc ? eval_task(*ck.net, pair_or_null(ck.fdc), test.samples, test.targets, opts) : rec.plain;
  if (n_old > 0) {
    std::vector<int64_t> old_rows;
    std::vector<EvalTarget> old_targets;
    for (int64_t i = 0; i < test.samples.size(); ++i) {
      if (test.samples.labels[i].item<int64_t>() < n_old) {
        old_rows.push_back(i);
        old_targets.push_back(test.targets[i]);
      }
    }
    auto old = test.samples.subset(old_rows);
    rec.old_plain = eval_task(*ck.net, nullptr, old, old_targets, opts);
    rec.old_acc = eval_task(*ck.net, pair_or_null(ck.fdc), old, old_targets, opts);
  }
  return rec;
}

Config finetune_preset(Config config) {
  config.method.kd = false;
  config.method.exemplars = false;
  config.method.fdc = false;
  config.model.cosine = false;
  config.run.name += "-finetune";
  return config;
}

Config joint_preset(Config config, int64_t total_classes) {
  config.schedule.base = total_classes;
  config.run.name += "-joint";
  return config;
}

}  // namespace fdcnet
