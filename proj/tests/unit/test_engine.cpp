#include "testing.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fdcnet/checkpoint.hpp"
#include "fdcnet/common.hpp"
#include "fdcnet/dataset.hpp"
#include "fdcnet/engine.hpp"
#include "fdcnet/kd_losses.hpp"

using namespace fdcnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fdcnet_engine_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const fs::path& tiny_dataset() {
  static const fs::path dir = [] {
    auto d = scratch("data");
    SyntheticOptions o;
    o.n_classes = 6;
    o.per_class_train = 6;
    o.per_class_test = 2;
    o.image_size = 32;
    o.seed = 5;
    synth_generate(d, o);
    return d;
  }();
  return dir;
}

Config tiny_config(const std::string& name) {
  Config c;
  c.dataset.root = tiny_dataset().string();
  c.dataset.input_size = 16;
  c.model.backbone_channels = {8, 16};
  c.model.classifier_width = 8;
  c.model.fdc_hidden = 8;
  c.train.epochs_base = 2;
  c.train.epochs_incr = 1;
  c.train.fdc_epochs = 1;
  c.train.batch_size = 8;
  c.memory.budget = 12;
  c.run.out_dir = scratch(name).string();
  c.run.name = name;
  c.run.seed = 3;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("incremental-engine") {
  TEST_CASE("schedules") {
    CHECK(build_schedule(100, 50, 10, 0).num_tasks == 6);
    CHECK(build_schedule(200, 100, 20, 0).num_tasks == 6);
    auto s = build_schedule(6, 2, 2, 1);
    REQUIRE(s.num_tasks == 3);
    for (const auto& t : s.tasks) CHECK(t.size() == 2);
    CHECK(s.accumulated(2) == 4);
    auto ch = s.channel_of_class();
    for (int64_t c = 0; c < 6; ++c) CHECK(s.class_order[ch[c]] == c);
    CHECK_THROWS_AS(build_schedule(7, 2, 2, 0), ConfigError);
    CHECK_THROWS_AS(build_schedule(4, 6, 2, 0), ConfigError);
    auto plain = build_schedule(4, 2, 2, 9, false);
    CHECK(plain.class_order == std::vector<int64_t>{0, 1, 2, 3});
    CHECK(build_schedule(6, 2, 2, 4).class_order == build_schedule(6, 2, 2, 4).class_order);
  }

  TEST_CASE("derived seeds differ per stream") {
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  }

  TEST_CASE("budget must cover every class") {
    auto c = tiny_config("budget");
    c.memory.budget = 4;
    CHECK_THROWS_AS(IncrementalEngine(c, load_manifest(c.dataset.manifest_path())), ValidationError);
  }

  TEST_CASE("task steps") {
    auto c = tiny_config("steps");
    c.train.epochs_incr = 0;
    IncrementalEngine e(c, load_manifest(c.dataset.manifest_path()));
    e.run_task();
    CHECK_FALSE(e.state().prev);
    CHECK(e.state().cur->num_classes() == 2);
    CHECK(e.state().store.total_size() == 12);
    CHECK(fs::exists(e.task_dir(1) / "checkpoint.safetensors"));

    // zero training steps: the old slice equals the previous network and distillation vanishes
    e.begin_task();
    REQUIRE(e.state().prev);
    CHECK(is_frozen(*e.state().prev));
    CHECK(e.state().cur->num_classes() == 4);
    torch::Tensor is_ex;
    auto data = e.task_training_set(2, &is_ex);
    CHECK(data.size() == 12 + 12);
    CHECK(is_ex.sum().item<int64_t>() == 12);
    {
      torch::NoGradGuard no_grad;
      e.state().cur->eval();
      auto a = e.state().cur->forward_full(data.pixels);
      auto b = e.state().prev->forward_full(data.pixels);
      CHECK(torch::equal(a.cls_map.narrow(1, 0, 2), b.cls_map));
      CHECK(loss_kd_cls(a.cls_map, b.cls_map, 2).item<double>() < 1e-6);
      CHECK(loss_kd_feat(a.cls_tap_pre_last, b.cls_tap_pre_last).item<double>() < 1e-6);
    }
    e.finish_task();
    CHECK(e.state().task == 2);
    CHECK(e.state().cur_fdc);
    CHECK(e.state().store.quota() == 3);
    auto rec = e.evaluate();
    CHECK(rec.classes == 4);
    CHECK(rec.old_acc.has_value());
    CHECK(rec.acc.top1 <= rec.acc.top5);
    CHECK(rec.acc.top5 <= rec.acc.gtk);
    CHECK_THROWS_AS(e.finish_task(), ContractError);
  }

  TEST_CASE("full run, checkpoint reload and replay") {
    auto c = tiny_config("full");
    auto report = run_experiment(c, nullptr);
    REQUIRE(report.per_task.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(report.per_task[i].classes == 2 * (i + 1));
    const auto dir = c.run.run_dir();
    for (const char* f : {"config.resolved", "metrics.csv", "report.json", "losses.csv"}) CHECK(fs::exists(dir / f));
    CHECK(Config::load(dir / "config.resolved").run.seed == 3);

    auto rec = evaluate_checkpoint(dir, 3);
    CHECK(rec.acc.gtk == report.per_task[2].acc.gtk);
    CHECK(rec.plain.top1 == report.per_task[2].plain.top1);

    auto ck = load_checkpoint(dir / "task_3" / "checkpoint.safetensors");
    CHECK(ck.task == 3);
    CHECK(ck.net->num_classes() == 6);
    REQUIRE(ck.fdc);
    CHECK(ck.fdc->n_old() == 4);

    auto again = c;
    again.run.out_dir = scratch("full_again").string();
    run_experiment(again, nullptr);
    CHECK(slurp(again.run.run_dir() / "metrics.csv") == slurp(dir / "metrics.csv"));
  }

  TEST_CASE("single task report") {
    auto c = joint_preset(tiny_config("joint"), 6);
    auto report = run_experiment(c, nullptr);
    REQUIRE(report.per_task.size() == 1);
    CHECK(report.acc_avg.gtk == report.acc_last.gtk);
  }

  TEST_CASE("fine-tuning preset disables the incremental components") {
    auto c = finetune_preset(tiny_config("ft"));
    CHECK_FALSE(c.method.kd);
    CHECK_FALSE(c.method.exemplars);
    CHECK_FALSE(c.method.fdc);
    CHECK_FALSE(c.model.cosine);
    IncrementalEngine e(c, load_manifest(c.dataset.manifest_path()));
    e.run_task();
    e.run_task();
    CHECK_FALSE(e.state().cur_fdc);
    CHECK(e.state().store.empty());
  }
}

TEST_SUITE("incremental-engine") {
  TEST_CASE("checkpoint archive round trip") {
    TensorArchive a;
    a.tensors["f"] = torch::randn({2, 3});
    a.tensors["d"] = torch::randn({4}, torch::kDouble);
    a.tensors["i"] = torch::arange(5, torch::kLong);
    a.tensors["u"] = torch::tensor({1, 2, 250}, torch::kUInt8);
    a.metadata["k"] = "v";
    auto path = scratch("archive") / "a.safetensors";
    a.save(path);
    auto b = TensorArchive::load(path);
    CHECK(b.metadata.at("k") == "v");
    for (const auto& [name, t] : a.tensors) CHECK(torch::equal(b.tensors.at(name), t));
    std::ofstream(path, std::ios::binary) << "garbage";
    CHECK_THROWS(TensorArchive::load(path));
  }
}
