#include "testing.hpp"

#include "fdcnet/common.hpp"
#include "fdcnet/model.hpp"
#include "fdcnet/samples.hpp"

using namespace fdcnet;

namespace {

WsolNet make_net(int64_t k, bool cosine = true) {
  torch::manual_seed(3);
  NetOptions opt;
  opt.input_size = 16;
  opt.backbone_channels = {8, 16};
  opt.classifier_width = 8;
  opt.cosine = cosine;
  opt.num_classes = k;
  return WsolNet(opt);
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("forward shapes and taps") {
    auto net = make_net(3);
    auto out = net->forward_full(torch::randn({2, 3, 16, 16}));
    CHECK(out.features.sizes() == torch::IntArrayRef({2, 16, 8, 8}));
    CHECK(out.cls_map.sizes() == torch::IntArrayRef({2, 3, 8, 8}));
    CHECK(out.cam_map.sizes() == torch::IntArrayRef({2, 3, 8, 8}));
    CHECK(out.cls_tap_pre_last.size(1) == 8);
    CHECK(out.cls_tap_pre_last3.size(1) == 8);
    CHECK(torch::equal(out.loc_tap_pre_last, out.features));
    CHECK(torch::isfinite(out.cls_map).all().item<bool>());
  }

  TEST_CASE("input size must divide by the backbone stride") {
    NetOptions opt;
    opt.input_size = 18;
    opt.backbone_channels = {8, 8, 8};
    CHECK_THROWS_AS(WsolNet{opt}, ConfigError);
  }

  TEST_CASE("downsample sets the number of pooled blocks") {
    NetOptions opt;
    opt.input_size = 16;
    opt.backbone_channels = {4, 4, 4};
    opt.classifier_width = 4;
    CHECK(opt.feature_size() == 4);
    opt.downsample = 1;
    CHECK(opt.feature_size() == 8);
    WsolNet net(opt);
    CHECK(net->forward_full(torch::randn({1, 3, 16, 16})).cam_map.size(2) == 8);
    opt.downsample = 0;
    CHECK(opt.feature_size() == 16);
    opt.downsample = 3;
    CHECK_THROWS_AS(opt.feature_size(), ConfigError);
  }

  TEST_CASE("cosine scores") {
    auto f = torch::ones({1, 4, 2, 2});
    auto w = torch::zeros({2, 4});
    w[0][0] = 1.0;
    w[1] = -1.0;
    auto s = cosine_class_scores(f, w, torch::tensor(10.0f));
    CHECK(s[0][0][0][0].item<float>() == doctest::Approx(5.0));
    CHECK(s[0][1][1][1].item<float>() == doctest::Approx(-10.0));
    // zero features give zero scores rather than NaN
    auto z = cosine_class_scores(torch::zeros({4, 2, 2}), w, torch::tensor(10.0f));
    CHECK(z.abs().max().item<float>() == 0.0f);
  }

  TEST_CASE("expansion keeps old channels and adds new ones") {
    for (bool cosine : {true, false}) {
      auto net = make_net(2, cosine);
      net->eval();
      torch::NoGradGuard no_grad;
      auto x = torch::randn({3, 3, 16, 16});
      auto before = net->forward_full(x);
      net->expand_heads(3, 11);
      auto after = net->forward_full(x);
      CHECK(net->num_classes() == 5);
      CHECK(after.cls_map.size(1) == 5);
      CHECK(torch::equal(after.cls_map.narrow(1, 0, 2), before.cls_map));
      CHECK(torch::equal(after.cam_map.narrow(1, 0, 2), before.cam_map));
    }
  }

  TEST_CASE("clone, freeze and hash") {
    auto net = make_net(2);
    auto copy = clone_network(net);
    CHECK(parameter_hash(*net) == parameter_hash(*copy));
    set_frozen(*copy, true);
    CHECK(is_frozen(*copy));
    CHECK_FALSE(is_frozen(*net));
    {
      torch::NoGradGuard no_grad;
      net->parameters().front().add_(1.0);
    }
    CHECK(parameter_hash(*net) != parameter_hash(*copy));
    copy_parameters(*copy, *net);
    CHECK(parameter_hash(*net) == parameter_hash(*copy));
  }

  TEST_CASE("masked background pass checks the mask shape") {
    auto net = make_net(2);
    auto feats = torch::rand({2, 16, 8, 8});
    CHECK_THROWS_AS(net->masked_background_forward(feats, torch::zeros({2, 4, 4})), ConfigError);
    auto full = net->masked_background_forward(feats, torch::zeros({2, 8, 8}));
    CHECK(torch::allclose(full, net->classifier_scores(feats)));
  }

  TEST_CASE("seeded batches") {
    auto g1 = make_generator(5), g2 = make_generator(5);
    auto a = make_batches(10, 4, &g1), b = make_batches(10, 4, &g2);
    REQUIRE(a.size() == 3);
    for (size_t i = 0; i < a.size(); ++i) CHECK(torch::equal(a[i], b[i]));
    auto seq = make_batches(5, 2, nullptr);
    CHECK(seq[2].item<int64_t>() == 4);
  }
}
