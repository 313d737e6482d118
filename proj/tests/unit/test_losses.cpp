#include "testing.hpp"

#include <cmath>

#include "fdcnet/kd_losses.hpp"
#include "fdcnet/model.hpp"
#include "fdcnet/oracles.hpp"
#include "fdcnet/wsol_losses.hpp"

using namespace fdcnet;

namespace {

torch::Tensor dbl(std::vector<int64_t> shape) {
  return torch::randn(shape, torch::kDouble);
}

WsolNet tiny_net(int64_t k) {
  torch::manual_seed(9);
  NetOptions opt;
  opt.input_size = 4;
  opt.backbone_channels = {3};
  opt.classifier_width = 4;
  opt.num_classes = k;
  WsolNet net(opt);
  net->to(torch::kDouble);
  return net;
}

}  // namespace

TEST_SUITE("wsol-losses") {
  TEST_CASE("classification loss") {
    auto y = torch::tensor({1}, torch::kLong);
    CHECK(loss_cls(torch::zeros({1, 4, 2, 2}, torch::kDouble), y).item<double>() == doctest::Approx(std::log(4.0)));
    auto sure = torch::zeros({1, 4, 2, 2}, torch::kDouble);
    sure.select(1, 1).fill_(60.0);
    CHECK(loss_cls(sure, y).item<double>() < 1e-20);
    torch::manual_seed(1);
    auto cls = dbl({2, 3, 2, 2});
    auto labels = torch::tensor({2, 0}, torch::kLong);
    CHECK(loss_cls(cls, labels).item<double>() ==
          doctest::Approx(oracle::loss_cls(oracle::from_tensor(cls), {2, 0})).epsilon(1e-6));
  }

  TEST_CASE("foreground classification loss") {
    torch::manual_seed(2);
    auto cls = dbl({2, 3, 2, 2});
    auto y = torch::tensor({0, 2}, torch::kLong);
    CHECK(loss_cls_fg(cls, torch::full({2, 3, 2, 2}, 50.0, torch::kDouble), y).item<double>() ==
          doctest::Approx(loss_cls(cls, y).item<double>()));
    CHECK(loss_cls_fg(cls, torch::zeros({2, 3, 2, 2}, torch::kDouble), y).item<double>() ==
          doctest::Approx(loss_cls(0.5 * cls, y).item<double>()));
    auto cam = dbl({2, 3, 2, 2});
    CHECK(loss_cls_fg(cls, cam, y).item<double>() ==
          doctest::Approx(oracle::loss_cls_fg(oracle::from_tensor(cls), oracle::from_tensor(cam), {0, 2}))
              .epsilon(1e-6));
  }

  TEST_CASE("suppression loss limits") {
    auto net = tiny_net(3);
    torch::manual_seed(4);
    ModelOutputs out;
    out.features = torch::rand({2, 3, 4, 4}, torch::kDouble);
    out.cls_map = net->classifier_scores(out.features);
    auto y = torch::tensor({1, 2}, torch::kLong);
    // background mask of zero keeps every feature, so s_bg = s_all
    out.cam_map = torch::full({2, 3, 4, 4}, -60.0, torch::kDouble);
    CHECK(loss_bas(*net, out, y, 1e-8, true).item<double>() == doctest::Approx(1.0).epsilon(1e-6));
    // probabilities never vanish; zero background scores do for the raw activation
    auto pos = torch::rand({2, 3, 4, 4}, torch::kDouble) + 0.1;
    CHECK(loss_bas_from_maps(pos, torch::zeros_like(pos), y, 1e-8, false).item<double>() == 0.0);
    CHECK(loss_bas_from_maps(pos, pos, y, 1e-8, false).item<double>() == doctest::Approx(1.0).epsilon(1e-6));
    out.cam_map = dbl({2, 3, 4, 4});
    const auto M = oracle::from_tensor(out.cam_map);
    const auto F = oracle::from_tensor(out.features);
    const auto bg = oracle::classifier_scores(*net, oracle::mask_background(F, oracle::label_sigmoid(M, {1, 2})));
    CHECK(loss_bas(*net, out, y, 1e-8, true).item<double>() ==
          doctest::Approx(oracle::loss_bas_from_maps(oracle::from_tensor(out.cls_map), bg, {1, 2}, 1e-8, true))
              .epsilon(1e-5));
  }

  TEST_CASE("area loss") {
    auto y = torch::tensor({0, 1}, torch::kLong);
    CHECK(loss_ac(torch::zeros({2, 2, 3, 3}, torch::kDouble), y).item<double>() == doctest::Approx(0.5));
    CHECK(loss_ac(torch::full({2, 2, 3, 3}, -80.0, torch::kDouble), y).item<double>() < 1e-30);
    torch::manual_seed(5);
    auto cam = dbl({2, 2, 3, 3});
    CHECK(loss_ac(cam, y).item<double>() ==
          doctest::Approx(oracle::loss_ac(oracle::from_tensor(cam), {0, 1})).epsilon(1e-7));
  }

  TEST_CASE("weighted total") {
    WsolLossWeights zero{0, 0, 0, 1e-8};
    CHECK(loss_wsol_total(0.7, 3, 4, 5, zero) == 0.7);
    CHECK(loss_wsol_total(1, 1, 1, 1, WsolLossWeights{}) == 4.0);
    WsolLossWeights w{0.5, 2.0, 0.25, 1e-8};
    CHECK(loss_wsol_total(1, 2, 3, 4, w) == doctest::Approx(1 + 1 + 6 + 1));
  }
}

TEST_SUITE("kd-losses") {
  TEST_CASE("class-score distillation") {
    torch::manual_seed(6);
    auto old = dbl({2, 3, 2, 2});
    auto cur = torch::cat({old, dbl({2, 2, 2, 2})}, 1);
    CHECK(std::abs(loss_kd_cls(cur, old, 3).item<double>()) < 1e-7);
    // pooled old (1, 0) against new (1/2, 1/2)
    auto sharp = torch::zeros({1, 2, 1, 1}, torch::kDouble);
    sharp[0][0] = 200.0;
    auto flat = torch::zeros({1, 3, 1, 1}, torch::kDouble);
    flat[0][2] = 5.0;
    CHECK(loss_kd_cls(flat, sharp, 2).item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    auto cur2 = dbl({2, 4, 2, 2});
    CHECK(loss_kd_cls(cur2, old, 3).item<double>() ==
          doctest::Approx(oracle::loss_kd_cls(oracle::from_tensor(cur2), oracle::from_tensor(old), 3)).epsilon(1e-6));
  }

  TEST_CASE("localization distillation") {
    auto y = torch::tensor({0, 1}, torch::kLong);
    auto old = torch::zeros({2, 2, 3, 3}, torch::kDouble);
    CHECK(loss_kd_loc(old, old, y).item<double>() == 0.0);
    // sigmoid maps differing by 0.1 everywhere
    auto shifted = torch::full({2, 2, 3, 3}, std::log(0.6 / 0.4), torch::kDouble);
    CHECK(loss_kd_loc(shifted, old, y).item<double>() == doctest::Approx(0.1).epsilon(1e-9));
    torch::manual_seed(7);
    auto a = dbl({2, 3, 3, 3}), b = dbl({2, 2, 3, 3});
    CHECK(loss_kd_loc(a, b, y).item<double>() ==
          doctest::Approx(oracle::loss_kd_loc(oracle::from_tensor(a), oracle::from_tensor(b), {0, 1})).epsilon(1e-6));
  }

  TEST_CASE("feature distillation") {
    torch::manual_seed(8);
    auto tap = dbl({2, 4, 3, 3});
    CHECK(std::abs(loss_kd_feat(tap, tap).item<double>()) < 1e-7);
    CHECK(loss_kd_feat(-tap, tap).item<double>() == doctest::Approx(2.0));
    CHECK(std::abs(loss_kd_feat(5 * tap, tap).item<double>()) < 1e-6);
  }

  TEST_CASE("combined objective") {
    KdLossWeights zero{0, 0, 0, 0};
    CHECK(loss_ci_total(2.5, 1, 1, 1, 1, zero) == 2.5);
    CHECK(loss_ci_total(1, 1, 1, 1, 1, KdLossWeights{1, 1, 1, 1}) == 5.0);
    auto t = loss_ci_total(torch::tensor(1.0), torch::tensor(2.0), torch::tensor(3.0), torch::tensor(4.0),
                           torch::tensor(5.0), KdLossWeights{});
    CHECK(t.item<double>() == doctest::Approx(1 + 2 + 3 + 0.5 * 4 + 0.5 * 5));
  }
}
