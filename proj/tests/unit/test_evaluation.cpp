#include "testing.hpp"

#include <random>

#include "fdcnet/evaluation.hpp"
#include "fdcnet/oracles.hpp"

using namespace fdcnet;

namespace {

torch::Tensor box_map(int n, int x1, int y1, int x2, int y2) {
  auto m = torch::zeros({n, n});
  m.narrow(0, y1, y2 - y1).narrow(1, x1, x2 - x1).fill_(1.0);
  return m;
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("iou") {
    LocBox a{2, 3, 9, 7};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, LocBox{20, 20, 30, 30}) == 0.0);
    CHECK(iou(LocBox{0, 0, 10, 10}, LocBox{5, 5, 15, 15}) == doctest::Approx(25.0 / 175.0));
    CHECK(iou(LocBox{0, 0, 10, 10}, LocBox{10, 0, 20, 10}) == 0.0);
  }

  TEST_CASE("mask to box") {
    CHECK(mask_to_box(box_map(16, 4, 2, 10, 8), 16, 16, 0.5) == LocBox{4, 2, 10, 8});
    CHECK(mask_to_box(torch::full({4, 4}, 0.2), 32, 24, 0.5) == LocBox{0, 0, 24, 32});
    // two blobs of 30 and 12 pixels
    auto m = box_map(20, 1, 1, 7, 6) + box_map(20, 12, 12, 16, 15);
    CHECK(mask_to_box(m, 20, 20, 0.5) == LocBox{1, 1, 7, 6});
  }

  TEST_CASE("largest component against the oracle") {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 50; ++t) {
      const int h = 3 + rng() % 10, w = 3 + rng() % 10;
      std::vector<uint8_t> bin(h * w);
      for (auto& b : bin) b = rng() % 3 == 0;
      CHECK(largest_component_box(bin, h, w) == oracle::largest_component(bin, h, w));
    }
    CHECK_FALSE(largest_component_box(std::vector<uint8_t>(9, 0), 3, 3).has_value());
    // diagonal neighbours join
    std::vector<uint8_t> diag{1, 0, 0, 0, 1, 0, 0, 0, 1};
    CHECK(largest_component_box(diag, 3, 3) == LocBox{0, 0, 3, 3});
  }

  TEST_CASE("raising tau never grows the chosen component") {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
    for (int t = 0; t < 20; ++t) {
      auto map = torch::rand({6, 6}, gen);
      int64_t prev_area = 64 * 64 + 1;
      for (double tau : {0.2, 0.4, 0.6, 0.8}) {
        auto box = mask_to_box(map, 64, 64, tau);
        auto area = box.area();
        if (box == LocBox{0, 0, 64, 64} && tau > 0.2) break;  // fallback once nothing survives
        CHECK(area <= prev_area);
        prev_area = area;
      }
    }
  }

  TEST_CASE("scoring decouples classification from localization") {
    const int n = 8;
    auto maps = torch::zeros({2, 3, n, n});
    maps[0][1] = box_map(n, 2, 2, 6, 6);
    maps[1][2] = box_map(n, 0, 0, 4, 4);
    std::vector<EvalTarget> targets{{LocBox{16, 16, 48, 48}, 64, 64}, {LocBox{0, 0, 32, 32}, 64, 64}};
    auto labels = torch::tensor({1, 2}, torch::kLong);
    auto right = torch::tensor({{0.1, 0.8, 0.1}, {0.1, 0.1, 0.8}});
    auto acc = score_predictions(right, maps, labels, targets, {});
    CHECK(acc.top1 == 1.0);
    CHECK(acc.top5 == 1.0);
    CHECK(acc.gtk == 1.0);
    auto wrong = torch::tensor({{0.8, 0.1, 0.1}, {0.1, 0.8, 0.1}});
    acc = score_predictions(wrong, maps, labels, targets, {});
    CHECK(acc.top1 == 0.0);
    CHECK(acc.top5 == 1.0);
    CHECK(acc.gtk == 1.0);
  }

  TEST_CASE("images without a box are skipped") {
    auto maps = torch::ones({1, 2, 4, 4});
    std::vector<EvalTarget> targets{{std::nullopt, 32, 32}};
    auto acc = score_predictions(torch::tensor({{0.3, 0.7}}), maps, torch::tensor({1}, torch::kLong), targets, {});
    CHECK(acc.evaluated == 0);
    CHECK(acc.skipped == 1);
  }

  TEST_CASE("aggregate") {
    auto [avg, last] = aggregate({0.5, 0.5, 0.5});
    CHECK(avg == 0.5);
    CHECK(last == 0.5);
    auto [a1, l1] = aggregate({0.3});
    CHECK(a1 == l1);
    CHECK_THROWS(aggregate({}));
  }

  TEST_CASE("report serialization") {
    IncrementalReport r;
    r.name = "x";
    for (int t = 1; t <= 3; ++t) {
      TaskRecord rec;
      rec.task = t;
      rec.classes = 2 * t;
      rec.acc.top1 = 0.1 * t;
      rec.acc.top5 = 0.2 * t;
      rec.acc.gtk = 0.3 * t;
      rec.plain = rec.acc;
      r.per_task.push_back(rec);
    }
    r.finalize();
    CHECK(r.acc_avg.gtk == doctest::Approx(0.6));
    CHECK(r.acc_last.top1 == doctest::Approx(0.3));
    auto back = IncrementalReport::from_json(r.to_json());
    CHECK(back.to_json() == r.to_json());
    CHECK(back.metrics_csv() == r.metrics_csv());
  }
}
