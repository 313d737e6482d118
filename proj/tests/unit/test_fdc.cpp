#include "testing.hpp"

#include "fdcnet/common.hpp"
#include "fdcnet/fdc.hpp"
#include "fdcnet/oracles.hpp"
#include "fdcnet/samples.hpp"

using namespace fdcnet;

namespace {

WsolNet make_net(int64_t k, bool cosine = true, uint64_t seed = 21) {
  torch::manual_seed(seed);
  NetOptions opt;
  opt.input_size = 16;
  opt.backbone_channels = {8, 16};
  opt.classifier_width = 16;
  opt.cosine = cosine;
  opt.num_classes = k;
  return WsolNet(opt);
}

SampleSet random_samples(int64_t n, int64_t k, uint64_t seed) {
  auto gen = make_generator(seed);
  SampleSet s;
  s.pixels = torch::randn({n, 3, 16, 16}, gen);
  s.labels = torch::randint(k, {n}, gen, torch::kLong);
  for (int64_t i = 0; i < n; ++i) s.ids.push_back(std::to_string(i));
  return s;
}

torch::Tensor to_tensor(const oracle::Array& a, const torch::Tensor& like) {
  return torch::tensor(a.v, torch::kDouble).view(like.sizes());
}

}  // namespace

TEST_SUITE("fdc") {
  TEST_CASE("fresh pair compensates nothing") {
    auto net = make_net(3);
    auto pair = make_fdc_pair(*net, 2, 8);
    CHECK(pair->n_old() == 2);
    torch::NoGradGuard no_grad;
    auto out = net->forward_full(torch::randn({2, 3, 16, 16}));
    CHECK(pair->compensate_cls(out.cls_tap_pre_last3).abs().max().item<float>() == 0.0f);
    CHECK(pair->compensate_loc(out.features).abs().max().item<float>() == 0.0f);
    auto fused = fuse_outputs(out, pair.get());
    auto plain = fuse_outputs(out, nullptr);
    CHECK((fused.class_probs - plain.class_probs).abs().max().item<float>() <= 1e-7f);
    CHECK(fused.class_probs.sizes() == torch::IntArrayRef({2, 3}));
  }

  TEST_CASE("only old channels are compensated") {
    auto net = make_net(3);
    net->eval();
    auto pair = make_fdc_pair(*net, 2, 8);
    torch::NoGradGuard no_grad;
    for (auto& p : pair->parameters()) p.normal_(0.0, 0.5);
    auto out = net->forward_full(torch::randn({2, 3, 16, 16}));
    auto maps = compensate(out, pair.get());
    CHECK(torch::equal(maps.cls.select(1, 2), out.cls_map.select(1, 2)));
    CHECK_FALSE(torch::equal(maps.cls.select(1, 0), out.cls_map.select(1, 0)));
    auto fused = fuse_outputs(out, pair.get());
    auto want_p = oracle::pooled_softmax(oracle::assemble(oracle::from_tensor(out.cls_map),
                                                          oracle::from_tensor(pair->compensate_cls(out.cls_tap_pre_last3))));
    CHECK(torch::allclose(fused.class_probs.to(torch::kDouble), to_tensor(want_p, fused.class_probs), 1e-5, 1e-6));
    auto labelled = fuse_outputs(out, pair.get(), torch::tensor({0, 2}, torch::kLong));
    CHECK(labelled.loc_map.sizes() == torch::IntArrayRef({2, 8, 8}));
    CHECK(torch::equal(labelled.loc_map[1], fused.loc_map[1][2]));
  }

  TEST_CASE("targets assemble the previous outputs") {
    auto prev = make_net(2);
    prev->eval();
    torch::NoGradGuard no_grad;
    auto x = torch::randn({2, 3, 16, 16});
    auto out = prev->forward_full(x);
    auto raw = fdc_targets(*prev, nullptr, x);
    CHECK(torch::equal(raw.target_cls, out.cls_map));
    CHECK(torch::equal(raw.target_cam, out.cam_map));
    auto zero_pair = make_fdc_pair(*prev, 1, 8);
    auto zeroed = fdc_targets(*prev, zero_pair.get(), x);
    CHECK(torch::equal(zeroed.target_cls, out.cls_map));
    for (auto& p : zero_pair->parameters()) p.normal_(0.0, 0.5);
    auto comp = fdc_targets(*prev, zero_pair.get(), x);
    auto want = oracle::assemble(oracle::from_tensor(out.cam_map),
                                 oracle::from_tensor(zero_pair->compensate_loc(out.features)));
    CHECK(torch::allclose(comp.target_cam.to(torch::kDouble), to_tensor(want, comp.target_cam), 1e-6, 1e-7));
  }

  TEST_CASE("compensation loss") {
    auto gen = make_generator(2);
    auto cur = torch::randn({2, 2, 3, 3}, gen, torch::kDouble);
    auto tgt = torch::randn({2, 2, 3, 3}, gen, torch::kDouble);
    auto zero = torch::zeros_like(cur);
    CHECK(loss_dc_from_maps(cur, zero, cur, cur, zero, cur, 1.0).total.item<double>() == 0.0);
    CHECK(loss_dc_from_maps(cur, tgt - cur, tgt, cur, tgt - cur, tgt, 1.0).total.item<double>() < 1e-12);
    auto comp = torch::randn({2, 2, 3, 3}, gen, torch::kDouble);
    auto parts = loss_dc_from_maps(cur, comp, tgt, cur, comp, tgt, 0.5);
    const double want = oracle::loss_dc(oracle::from_tensor(cur), oracle::from_tensor(comp), oracle::from_tensor(tgt),
                                        oracle::from_tensor(cur), oracle::from_tensor(comp), oracle::from_tensor(tgt), 0.5);
    CHECK(parts.total.item<double>() == doctest::Approx(want).epsilon(1e-6));
    CHECK(parts.total.item<double>() == doctest::Approx(1.5 * parts.dc_c.item<double>()));
  }

  TEST_CASE("zero epochs return the zero pair") {
    auto prev = make_net(2);
    auto cur = clone_network(prev);
    cur->expand_heads(1, 3);
    set_frozen(*prev, true);
    set_frozen(*cur, true);
    FdcTrainOptions opt;
    opt.epochs = 0;
    opt.hidden = 8;
    auto res = train_fdc(*cur, *prev, nullptr, random_samples(8, 3, 1), opt);
    for (const auto& p : res.pair->parameters()) {
      if (p.dim() == 4 && p.size(0) == 2) CHECK(p.abs().max().item<float>() == 0.0f);
    }
  }

  TEST_CASE("networks must be frozen") {
    auto prev = make_net(2);
    auto cur = clone_network(prev);
    cur->expand_heads(1, 3);
    CHECK_THROWS_AS(train_fdc(*cur, *prev, nullptr, random_samples(4, 3, 1), FdcTrainOptions{}), ContractError);
  }

  TEST_CASE("constructed drift is corrected") {
    auto prev = make_net(2, false);
    prev->eval();
    auto cur = clone_network(prev);
    cur->expand_heads(1, 5);
    {
      torch::NoGradGuard no_grad;
      for (auto& p : cur->named_parameters()) {
        if (p.key() == "classifier_last_bias") p.value().narrow(0, 0, 2).add_(0.8);
      }
    }
    cur->eval();
    set_frozen(*prev, true);
    set_frozen(*cur, true);
    auto data = random_samples(48, 3, 4);
    FdcTrainOptions opt;
    opt.epochs = 30;
    opt.batch_size = 8;
    opt.lr = 0.05;
    opt.hidden = 16;
    opt.seed = 6;
    auto res = train_fdc(*cur, *prev, nullptr, data, opt);
    CHECK(res.initial_loss == doctest::Approx(0.8).epsilon(1e-4));
    CHECK(res.epoch_losses.back() < res.epoch_losses.front());
    torch::NoGradGuard no_grad;
    auto out = cur->forward_full(data.pixels);
    auto g = res.pair->compensate_cls(out.cls_tap_pre_last3);
    CHECK(g.mean().item<double>() == doctest::Approx(-0.8).epsilon(0.05));
    auto fused = compensate(out, res.pair.get());
    auto target = prev->forward_full(data.pixels).cls_map;
    CHECK((fused.cls.narrow(1, 0, 2).mean({2, 3}) - target.mean({2, 3})).abs().max().item<double>() < 0.05);
  }
}
