#include "fdcnet/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "fdcnet/common.hpp"
#include "fdcnet/config.hpp"
#include "fdcnet/engine.hpp"
#include "fdcnet/evaluation.hpp"
#include "fdcnet/exemplars.hpp"
#include "fdcnet/fdc.hpp"
#include "fdcnet/kd_losses.hpp"
#include "fdcnet/model.hpp"
#include "fdcnet/oracles.hpp"
#include "fdcnet/tensor_ops.hpp"
#include "fdcnet/wsol_losses.hpp"

namespace fdcnet::checks {

namespace {

using Clock = std::chrono::steady_clock;
namespace o = oracle;

// Collects failures; a suite passes when none were recorded.
struct Tally {
  int checks = 0;
  std::vector<std::string> failures;
  double worst = 0.0;

  void expect(bool ok, const std::string& what) {
    ++checks;
    if (!ok && failures.size() < 8) failures.push_back(what);
    if (!ok && failures.size() >= 8) failures.back() = "(more failures omitted)";
  }
  void close(double got, double want, double rel, const std::string& what) {
    const double err = std::abs(got - want);
    const double scale = std::max(std::abs(got), std::abs(want));
    const double r = scale > 0 ? err / scale : 0.0;
    worst = std::max(worst, r);
    std::ostringstream os;
    os << what << ": got " << got << " want " << want;
    expect(err <= rel * scale || err <= 1e-12, os.str());
  }
};

CheckResult finish(const std::string& name, const Tally& t, Clock::time_point start, const std::string& extra = "") {
  CheckResult r;
  r.name = name;
  r.passed = t.failures.empty() && t.checks > 0;
  std::ostringstream os;
  os << t.checks << " checks";
  if (t.worst > 0) os << ", worst relative error " << t.worst;
  if (!extra.empty()) os << ", " << extra;
  for (const auto& f : t.failures) os << "\n    " << f;
  r.detail = os.str();
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

template <typename Fn>
CheckResult guarded(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const c10::Error& e) {
    CheckResult r;
    r.name = name;
    r.detail = std::string("exception: ") + e.what_without_backtrace();
    return r;
  } catch (const std::exception& e) {
    CheckResult r;
    r.name = name;
    r.detail = std::string("exception: ") + e.what();
    return r;
  }
}

struct TinyDims {
  int64_t b, k, n;
};

TinyDims tiny_dims(std::mt19937_64& rng) {
  return {static_cast<int64_t>(rng() % 3 + 1), static_cast<int64_t>(rng() % 4 + 2), static_cast<int64_t>(rng() % 4 + 1)};
}

torch::Tensor random_labels(int64_t b, int64_t k, torch::Generator& gen) {
  return torch::randint(k, {b}, gen, torch::kLong);
}

torch::Tensor randn(std::vector<int64_t> shape, torch::Generator& gen, double scale = 1.0) {
  return torch::randn(shape, gen, torch::kDouble) * scale;
}

/// Tiny double-precision network whose classifier reads C×N×N features.
WsolNet tiny_net(int64_t c, int64_t n, int64_t k, bool cosine, uint64_t seed) {
  torch::manual_seed(seed);
  NetOptions opt;
  opt.input_size = n;
  opt.backbone_channels = {c};
  opt.classifier_width = 4;
  opt.localizer_kernel = 3;
  opt.cosine = cosine;
  opt.num_classes = k;
  WsolNet net(opt);
  net->to(torch::kDouble);
  // random biases so the classifier is not positively homogeneous
  torch::NoGradGuard no_grad;
  for (auto& p : net->named_parameters()) {
    if (p.key().find("bias") != std::string::npos) p.value().normal_(0.0, 0.1);
  }
  return net;
}

/// Small float network on 16x16 inputs for the protocol checks.
WsolNet small_net(int64_t k, uint64_t seed) {
  torch::manual_seed(seed);
  NetOptions opt;
  opt.input_size = 16;
  opt.backbone_channels = {8, 16};
  opt.classifier_width = 16;
  opt.num_classes = k;
  return WsolNet(opt);
}

/// Smallest |pre-activation| of the hidden classifier layers on x. Finite differences
/// are only meaningful away from the ReLU kinks.
double relu_margin(WsolNetImpl& net, torch::Tensor x) {
  torch::NoGradGuard no_grad;
  std::map<int, std::shared_ptr<torch::nn::Conv2dImpl>> convs;
  for (const auto& m : net.named_modules()) {
    const auto& key = m.key();
    if (key.rfind("classifier.", 0) != 0) continue;
    if (auto conv = std::dynamic_pointer_cast<torch::nn::Conv2dImpl>(m.value())) {
      convs[std::stoi(key.substr(11))] = conv;
    }
  }
  double margin = 1e300;
  for (auto& [i, conv] : convs) {
    auto pre = conv->forward(x);
    margin = std::min(margin, pre.abs().min().item<double>());
    x = torch::relu(pre);
  }
  return margin;
}

double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kDouble) - b.to(torch::kDouble)).abs().max().item<double>();
}

/// Norm-wise relative error between autograd and central differences of f at x.
double gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x, double step) {
  x = x.detach().clone().set_requires_grad(true);
  auto y = f(x);
  auto analytic = torch::autograd::grad({y}, {x})[0].detach();
  auto numeric = torch::zeros_like(x);
  torch::NoGradGuard no_grad;
  auto flat = x.detach().view({-1});
  auto num_flat = numeric.view({-1});
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + step;
    const double up = f(x.detach()).item<double>();
    flat[i] = orig - step;
    const double down = f(x.detach()).item<double>();
    flat[i] = orig;
    num_flat[i] = (up - down) / (2 * step);
  }
  const double diff = (analytic - numeric).norm().item<double>();
  const double scale = std::max(analytic.norm().item<double>(), numeric.norm().item<double>());
  return scale > 0 ? diff / scale : diff;
}

}  // namespace

CheckResult check_loss_oracles(uint64_t seed, int instances) {
  return guarded("loss oracles", [&] {
    const auto start = Clock::now();
    Tally t;
    std::mt19937_64 rng(seed);
    auto gen = make_generator(seed);
    const double tol = 1e-5;
    for (int inst = 0; inst < instances; ++inst) {
      const auto d = tiny_dims(rng);
      const int64_t n_old = static_cast<int64_t>(rng() % static_cast<uint64_t>(d.k - 1)) + 1;
      auto cls = randn({d.b, d.k, d.n, d.n}, gen, 3.0);
      auto cam = randn({d.b, d.k, d.n, d.n}, gen, 3.0);
      auto y = random_labels(d.b, d.k, gen);
      auto y_old = random_labels(d.b, n_old, gen);
      const auto yl = o::labels_of(y), yo = o::labels_of(y_old);
      const auto A = o::from_tensor(cls), M = o::from_tensor(cam);
      const std::string tag = " #" + std::to_string(inst);

      t.close(loss_cls(cls, y).item<double>(), o::loss_cls(A, yl), tol, "cls" + tag);
      t.close(loss_cls_fg(cls, cam, y).item<double>(), o::loss_cls_fg(A, M, yl), tol, "cls_fg" + tag);
      t.close(loss_ac(cam, y).item<double>(), o::loss_ac(M, yl), tol, "ac" + tag);

      // suppression loss through a tiny network, both activation modes
      const int64_t c = static_cast<int64_t>(rng() % 3 + 2);
      for (bool cosine : {true, false}) {
        auto net = tiny_net(c, d.n, d.k, cosine, rng());
        auto features = torch::relu(randn({d.b, c, d.n, d.n}, gen));
        ModelOutputs out;
        out.features = features;
        out.cls_map = net->classifier_scores(features);
        out.cam_map = cam;
        const auto F = o::from_tensor(features);
        const auto S = o::classifier_scores(*net, F);
        t.close(max_abs_diff(out.cls_map, torch::tensor(S.v, torch::kDouble).view(out.cls_map.sizes())) + 1.0, 1.0,
                tol, "classifier scores" + tag);
        const auto bg = o::classifier_scores(*net, o::mask_background(F, o::label_sigmoid(M, yl)));
        for (bool prob : {true, false}) {
          if (!prob) {
            // raw scores need a positive denominator to be meaningful
            out.cls_map = out.cls_map.abs() + 0.5;
          }
          const auto S2 = o::from_tensor(out.cls_map);
          t.close(loss_bas(*net, out, y, 1e-8, prob).item<double>(), o::loss_bas_from_maps(S2, bg, yl, 1e-8, prob),
                  tol, std::string("bas ") + (prob ? "prob" : "raw") + tag);
        }
      }

      auto cls_old = randn({d.b, n_old, d.n, d.n}, gen, 3.0);
      auto cam_old = randn({d.b, n_old, d.n, d.n}, gen, 3.0);
      t.close(loss_kd_cls(cls, cls_old, n_old).item<double>(), o::loss_kd_cls(A, o::from_tensor(cls_old), n_old), tol,
              "kd_cls" + tag);
      t.close(loss_kd_loc(cam, cam_old, y_old).item<double>(), o::loss_kd_loc(M, o::from_tensor(cam_old), yo), tol,
              "kd_loc" + tag);
      auto tap_new = randn({d.b, c, d.n, d.n}, gen);
      auto tap_old = randn({d.b, c, d.n, d.n}, gen);
      t.close(loss_kd_feat(tap_new, tap_old).item<double>(),
              o::loss_kd_feat(o::from_tensor(tap_new), o::from_tensor(tap_old)), tol, "kd_feat" + tag);

      // compensation loss
      auto cur_c = randn({d.b, n_old, d.n, d.n}, gen), comp_c = randn({d.b, n_old, d.n, d.n}, gen),
           tgt_c = randn({d.b, n_old, d.n, d.n}, gen);
      auto cur_l = randn({d.b, n_old, d.n, d.n}, gen), comp_l = randn({d.b, n_old, d.n, d.n}, gen),
           tgt_l = randn({d.b, n_old, d.n, d.n}, gen);
      const double beta = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
      auto dc = loss_dc_from_maps(cur_c, comp_c, tgt_c, cur_l, comp_l, tgt_l, beta);
      t.close(dc.total.item<double>(),
              o::loss_dc(o::from_tensor(cur_c), o::from_tensor(comp_c), o::from_tensor(tgt_c), o::from_tensor(cur_l),
                         o::from_tensor(comp_l), o::from_tensor(tgt_l), beta),
              tol, "dc" + tag);

      // weighted totals
      std::uniform_real_distribution<double> u(0.0, 2.0);
      WsolLossWeights ww{u(rng), u(rng), u(rng), 1e-8};
      KdLossWeights kw{u(rng), u(rng), u(rng), u(rng)};
      const double p[9] = {u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
      const double wsol = loss_wsol_total(p[0], p[1], p[2], p[3], ww);
      t.close(wsol, p[0] + ww.alpha1 * p[1] + ww.alpha2 * p[2] + ww.alpha3 * p[3], tol, "wsol total" + tag);
      WsolLossParts parts{torch::tensor(p[0]), torch::tensor(p[1]), torch::tensor(p[2]), torch::tensor(p[3])};
      t.close(loss_wsol_total(parts, ww).item<double>(), wsol, tol, "wsol total tensor" + tag);
      const double ci = loss_ci_total(wsol, p[4], p[5], p[6], p[7], kw);
      t.close(ci, wsol + kw.alpha4 * p[4] + kw.alpha5 * p[5] + kw.alpha6 * p[6] + kw.alpha7 * p[7], tol,
              "ci total" + tag);

      // fusion against concatenate-then-activate
      auto net = small_net(d.k, rng());
      net->eval();
      auto fdc = make_fdc_pair(*net, n_old, 8);
      {
        torch::NoGradGuard no_grad;
        for (auto& q : fdc->parameters()) q.normal_(0.0, 0.3);
      }
      torch::NoGradGuard no_grad;
      auto outs = net->forward_full(torch::randn({d.b, 3, 16, 16}, gen));
      auto fused = fuse_outputs(outs, fdc.get());
      const auto want_p = o::pooled_softmax(
          o::assemble(o::from_tensor(outs.cls_map), o::from_tensor(fdc->compensate_cls(outs.cls_tap_pre_last3))));
      const auto want_l = o::sigmoid(
          o::assemble(o::from_tensor(outs.cam_map), o::from_tensor(fdc->compensate_loc(outs.features))));
      t.close(max_abs_diff(fused.class_probs, torch::tensor(want_p.v, torch::kDouble).view(fused.class_probs.sizes())) +
                  1.0,
              1.0, 1e-5, "fused probs" + tag);
      t.close(max_abs_diff(fused.loc_map, torch::tensor(want_l.v, torch::kDouble).view(fused.loc_map.sizes())) + 1.0,
              1.0, 1e-5, "fused maps" + tag);

      // previous-task targets: the previous outputs, compensated when a previous pair exists
      auto prev_fdc = inst % 4 == 0 ? FdcPair(nullptr) : make_fdc_pair(*net, n_old, 8);
      if (prev_fdc) {
        for (auto& q : prev_fdc->parameters()) q.normal_(0.0, 0.3);
      }
      auto targets = fdc_targets(outs, pair_or_null(prev_fdc));
      auto& prev_cls = outs.cls_map;
      auto& prev_cam = outs.cam_map;
      o::Array g_c, g_l;
      if (prev_fdc) {
        g_c = o::from_tensor(prev_fdc->compensate_cls(outs.cls_tap_pre_last3));
        g_l = o::from_tensor(prev_fdc->compensate_loc(outs.features));
      }
      const auto tc = o::assemble(o::from_tensor(prev_cls), g_c);
      const auto tl = o::assemble(o::from_tensor(prev_cam), g_l);
      t.close(max_abs_diff(targets.target_cls, torch::tensor(tc.v, torch::kDouble).view(targets.target_cls.sizes())) +
                  1.0,
              1.0, 1e-6, "targets cls" + tag);
      t.close(max_abs_diff(targets.target_cam, torch::tensor(tl.v, torch::kDouble).view(targets.target_cam.sizes())) +
                  1.0,
              1.0, 1e-6, "targets cam" + tag);
    }
    return finish("loss oracles", t, start, std::to_string(instances) + " instances");
  });
}

CheckResult check_gradients(uint64_t seed) {
  return guarded("gradients", [&] {
    const auto start = Clock::now();
    Tally t;
    std::mt19937_64 rng(seed);
    auto gen = make_generator(seed);
    const double step = 1e-3, tol = 1e-3;
    double worst = 0.0;
    auto expect = [&](double err, const std::string& what) {
      worst = std::max(worst, err);
      std::ostringstream os;
      os << what << ": relative gradient error " << err;
      t.expect(err <= tol, os.str());
    };
    for (int inst = 0; inst < 5; ++inst) {
      const int64_t b = 2, k = 3, n = 3, n_old = 2, c = 3;
      auto cls = randn({b, k, n, n}, gen, 2.0);
      auto cam = randn({b, k, n, n}, gen, 2.0);
      auto y = random_labels(b, k, gen);
      auto y_old = random_labels(b, n_old, gen);
      const std::string tag = " #" + std::to_string(inst);

      expect(gradient_error([&](const torch::Tensor& x) { return loss_cls(x, y); }, cls, step), "cls" + tag);
      expect(gradient_error([&](const torch::Tensor& x) { return loss_cls_fg(x, cam, y); }, cls, step),
             "cls_fg wrt scores" + tag);
      expect(gradient_error([&](const torch::Tensor& x) { return loss_cls_fg(cls, x, y); }, cam, step),
             "cls_fg wrt activation" + tag);
      expect(gradient_error([&](const torch::Tensor& x) { return loss_ac(x, y); }, cam, step), "ac" + tag);

      WsolNet net{nullptr};
      torch::Tensor features;
      for (int attempt = 0;; ++attempt) {
        if (attempt == 1000) throw ContractError("no suppression instance away from the ReLU kinks");
        net = tiny_net(c, n, k, inst % 2 == 0, rng());
        features = torch::relu(randn({b, c, n, n}, gen)) + 0.1;
        auto fg = torch::sigmoid(cam.gather(1, y.view({-1, 1, 1, 1}).expand({b, 1, n, n})).squeeze(1));
        if (std::min(relu_margin(*net, features), relu_margin(*net, features * (1.0 - fg.unsqueeze(1)))) > 5e-3) break;
        cam = randn({b, k, n, n}, gen, 2.0);
      }
      auto bas_of = [&](const torch::Tensor& f, const torch::Tensor& m, bool prob) {
        ModelOutputs out;
        out.features = f;
        out.cls_map = net->classifier_scores(f);
        out.cam_map = m;
        return loss_bas(*net, out, y, 1e-8, prob);
      };
      expect(gradient_error([&](const torch::Tensor& x) { return bas_of(x, cam, true); }, features, step),
             "bas wrt features" + tag);
      expect(gradient_error([&](const torch::Tensor& x) { return bas_of(features, x, true); }, cam, step),
             "bas wrt activation" + tag);
      auto pos = cls.abs() + 1.0;
      auto bg = cls.abs() + 0.5;
      expect(gradient_error([&](const torch::Tensor& x) { return loss_bas_from_maps(x, bg, y, 1e-8, false); }, pos,
                            step),
             "bas raw scores" + tag);

      auto cls_old = randn({b, n_old, n, n}, gen, 2.0);
      auto cam_old = randn({b, n_old, n, n}, gen, 2.0);
      expect(gradient_error([&](const torch::Tensor& x) { return loss_kd_cls(x, cls_old, n_old); }, cls, step),
             "kd_cls" + tag);
      expect(gradient_error([&](const torch::Tensor& x) { return loss_kd_loc(x, cam_old, y_old); }, cam, step),
             "kd_loc" + tag);
      expect(gradient_error([&](const torch::Tensor& x) { return loss_kd_cls(cls, x, n_old); }, cls_old, step),
             "kd_cls wrt teacher" + tag);
      expect(gradient_error([&](const torch::Tensor& x) { return loss_kd_loc(cam, x, y_old); }, cam_old, step),
             "kd_loc wrt teacher" + tag);
      auto tap_old = randn({b, c, n, n}, gen);
      expect(gradient_error([&](const torch::Tensor& x) { return loss_kd_feat(x, tap_old); }, randn({b, c, n, n}, gen),
                            step),
             "kd_feat" + tag);

      auto cur_c = randn({b, n_old, n, n}, gen), tgt_c = randn({b, n_old, n, n}, gen);
      auto cur_l = randn({b, n_old, n, n}, gen), tgt_l = randn({b, n_old, n, n}, gen);
      auto comp_c = randn({b, n_old, n, n}, gen), comp_l = randn({b, n_old, n, n}, gen);
      auto tap_new = randn({b, c, n, n}, gen);
      expect(gradient_error([&](const torch::Tensor& x) { return loss_kd_feat(tap_new, x); }, tap_old, step),
             "kd_feat wrt teacher" + tag);
      const std::vector<std::pair<const char*, torch::Tensor*>> dc_inputs = {
          {"current scores", &cur_c}, {"score target", &tgt_c}, {"current maps", &cur_l}, {"map target", &tgt_l}};
      for (const auto& [what, input] : dc_inputs) {
        expect(gradient_error(
                   [&](const torch::Tensor& x) {
                     auto saved = *input;
                     *input = x;
                     auto loss = loss_dc_from_maps(cur_c, comp_c, tgt_c, cur_l, comp_l, tgt_l, 0.7).total;
                     *input = saved;
                     return loss;
                   },
                   *input, step),
               std::string("dc wrt ") + what + tag);
      }
      expect(gradient_error(
                 [&](const torch::Tensor& x) {
                   return loss_dc_from_maps(cur_c, x, tgt_c, cur_l, comp_l, tgt_l, 0.7).total;
                 },
                 comp_c, step),
             "dc wrt score compensation" + tag);
      expect(gradient_error(
                 [&](const torch::Tensor& x) {
                   return loss_dc_from_maps(cur_c, comp_c, tgt_c, cur_l, x, tgt_l, 0.7).total;
                 },
                 comp_l, step),
             "dc wrt map compensation" + tag);
    }
    t.worst = 0.0;
    std::ostringstream os;
    os << "worst relative gradient error " << worst;
    return finish("gradients", t, start, os.str());
  });
}

CheckResult check_no_drift(uint64_t seed) {
  return guarded("no-drift fixed point", [&] {
    const auto start = Clock::now();
    Tally t;
    auto gen = make_generator(seed);
    auto prev = small_net(2, seed);
    auto cur = clone_network(prev);
    cur->expand_heads(2, seed + 1);
    set_frozen(*prev, true);
    set_frozen(*cur, true);
    prev->eval();
    cur->eval();

    auto pixels = torch::randn({6, 3, 16, 16}, gen);
    auto labels = torch::randint(2, {6}, gen, torch::kLong);
    {
      torch::NoGradGuard no_grad;
      auto a = cur->forward_full(pixels);
      auto b = prev->forward_full(pixels);
      const double kd[4] = {loss_kd_cls(a.cls_map, b.cls_map, 2).item<double>(),
                            loss_kd_loc(a.cam_map, b.cam_map, labels).item<double>(),
                            loss_kd_feat(a.cls_tap_pre_last, b.cls_tap_pre_last).item<double>(),
                            loss_kd_feat(a.loc_tap_pre_last, b.loc_tap_pre_last).item<double>()};
      const char* names[4] = {"kd_cls", "kd_loc", "kd_feat_cls", "kd_feat_loc"};
      for (int i = 0; i < 4; ++i) t.expect(std::abs(kd[i]) < 1e-6, std::string(names[i]) + " = " + std::to_string(kd[i]));
    }

    SampleSet data;
    data.pixels = torch::randn({48, 3, 16, 16}, gen);
    data.labels = torch::randint(4, {48}, gen, torch::kLong);
    for (int i = 0; i < 48; ++i) data.ids.push_back(std::to_string(i));
    FdcTrainOptions opts;
    opts.epochs = 4;
    opts.batch_size = 16;
    opts.hidden = 16;
    opts.seed = seed;
    const auto h_cur = parameter_hash(*cur), h_prev = parameter_hash(*prev);
    auto result = train_fdc(*cur, *prev, nullptr, data, opts);
    t.expect(parameter_hash(*cur) == h_cur && parameter_hash(*prev) == h_prev, "compensation training changed a network");
    auto targets = fdc_targets(*prev, nullptr, data.pixels);
    const double l_dc = loss_dc(*cur, *result.pair, targets, data.pixels, 1.0).total.item<double>();
    t.expect(l_dc < 1e-4, "trained compensation loss " + std::to_string(l_dc));

    torch::NoGradGuard no_grad;
    auto outs = cur->forward_full(data.pixels);
    const double comp_rms = std::max(ops::per_image_rms(result.pair->compensate_cls(outs.cls_tap_pre_last3)).max().item<double>(),
                                     ops::per_image_rms(result.pair->compensate_loc(outs.features)).max().item<double>());
    t.expect(comp_rms < 1e-2, "compensation output rms " + std::to_string(comp_rms));
    auto fused = fuse_outputs(outs, result.pair.get());
    auto plain = fuse_outputs(outs, nullptr);
    const double dp = max_abs_diff(fused.class_probs, plain.class_probs);
    const double dl = max_abs_diff(fused.loc_map, plain.loc_map);
    t.expect(dp < 1e-3 && dl < 1e-3, "fused differs from plain by " + std::to_string(std::max(dp, dl)));
    std::ostringstream os;
    os << "L_dc " << l_dc << ", fused-plain " << std::max(dp, dl);
    return finish("no-drift fixed point", t, start, os.str());
  });
}

CheckResult check_expansion(uint64_t seed, int batches) {
  return guarded("expansion preservation", [&] {
    const auto start = Clock::now();
    Tally t;
    auto gen = make_generator(seed);
    auto net = small_net(3, seed);
    net->eval();
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> inputs;
    std::vector<ModelOutputs> before;
    for (int i = 0; i < batches; ++i) {
      inputs.push_back(torch::randn({4, 3, 16, 16}, gen));
      before.push_back(net->forward_full(inputs.back()));
    }
    auto twice = clone_network(net);
    net->expand_heads(2, seed + 7);
    twice->expand_heads(1, seed + 8);
    twice->expand_heads(1, seed + 9);
    t.expect(net->num_classes() == 5 && twice->num_classes() == 5, "class count after expansion");
    for (int i = 0; i < batches; ++i) {
      for (auto* m : {&net, &twice}) {
        auto after = (*m)->forward_full(inputs[i]);
        t.expect(torch::equal(after.cls_map.narrow(1, 0, 3), before[i].cls_map), "score channels changed, batch " +
                                                                                      std::to_string(i));
        t.expect(torch::equal(after.cam_map.narrow(1, 0, 3), before[i].cam_map), "map channels changed, batch " +
                                                                                      std::to_string(i));
      }
    }
    bool rejected = false;
    try {
      net->expand_heads(0, 1);
    } catch (const ConfigError&) {
      rejected = true;
    }
    t.expect(rejected, "expand_heads(0) accepted");
    return finish("expansion preservation", t, start, std::to_string(batches) + " batches");
  });
}

CheckResult check_herding(uint64_t seed, int sets) {
  return guarded("herding", [&] {
    const auto start = Clock::now();
    Tally t;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int s = 0; s < sets; ++s) {
      const size_t n = rng() % 8 + 1, dim = rng() % 5 + 2;
      std::vector<ExemplarCandidate> cands;
      std::vector<std::vector<double>> emb;
      for (size_t i = 0; i < n; ++i) {
        std::vector<double> v(dim);
        double norm = 0.0;
        for (auto& x : v) {
          x = nd(rng);
          norm += x * x;
        }
        for (auto& x : v) x /= std::sqrt(norm);
        ExemplarCandidate c;
        c.image_id = "img" + std::to_string(i);
        for (double x : v) c.embedding.push_back(static_cast<float>(x));
        std::vector<double> as_float(c.embedding.begin(), c.embedding.end());
        emb.push_back(as_float);
        cands.push_back(c);
      }
      std::vector<std::vector<size_t>> orders;
      for (size_t m = 0; m <= n; ++m) {
        auto got = herding_order(cands, m);
        t.expect(got == o::herding(emb, m), "set " + std::to_string(s) + " m=" + std::to_string(m) + " differs from oracle");
        orders.push_back(got);
      }
      for (size_t m = 0; m <= n; ++m) {
        for (size_t m2 = m; m2 <= n; ++m2) {
          t.expect(std::equal(orders[m].begin(), orders[m].end(), orders[m2].begin()),
                   "prefix property broken at set " + std::to_string(s));
        }
      }
      // first pick is nearest to the mean
      std::vector<double> mu(dim, 0.0);
      for (const auto& e : emb) {
        for (size_t c = 0; c < dim; ++c) mu[c] += e[c] / static_cast<double>(n);
      }
      size_t nearest = 0;
      double best = 1e300;
      for (size_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (size_t c = 0; c < dim; ++c) d += (emb[i][c] - mu[c]) * (emb[i][c] - mu[c]);
        if (d < best) {
          best = d;
          nearest = i;
        }
      }
      t.expect(orders[1].front() == nearest, "first pick is not nearest to the mean at set " + std::to_string(s));
    }
    // symmetric pair: the tie goes to index 0
    std::vector<ExemplarCandidate> pair{{"a", {1.0f, 0.0f}}, {"b", {-1.0f, 0.0f}}};
    t.expect(herding_order(pair, 1) == std::vector<size_t>{0}, "tie not broken to the lowest index");
    bool rejected = false;
    try {
      herding_order(pair, 3);
    } catch (const std::exception&) {
      rejected = true;
    }
    t.expect(rejected, "m > n accepted");
    return finish("herding", t, start, std::to_string(sets) + " candidate sets");
  });
}

CheckResult check_metric_oracles(uint64_t seed) {
  return guarded("metric oracles", [&] {
    const auto start = Clock::now();
    Tally t;
    std::mt19937_64 rng(seed);
    auto random_box = [&](int size) {
      LocBox b;
      b.x1 = static_cast<int>(rng() % static_cast<uint64_t>(size - 1));
      b.y1 = static_cast<int>(rng() % static_cast<uint64_t>(size - 1));
      b.x2 = b.x1 + 1 + static_cast<int>(rng() % static_cast<uint64_t>(size - b.x1 - 1));
      b.y2 = b.y1 + 1 + static_cast<int>(rng() % static_cast<uint64_t>(size - b.y1 - 1));
      return b;
    };
    for (int i = 0; i < 1000; ++i) {
      const auto a = random_box(32), b = random_box(32);
      const double got = iou(a, b), want = o::iou_by_pixels(a, b);
      t.expect(got == want, "iou pair " + std::to_string(i));
      t.expect(iou(b, a) == got, "iou not symmetric at pair " + std::to_string(i));
    }
    t.close(iou({0, 0, 10, 10}, {5, 5, 15, 15}), 25.0 / 175.0, 1e-12, "iou worked example");

    for (int i = 0; i < 200; ++i) {
      const int h = static_cast<int>(rng() % 20 + 4), w = static_cast<int>(rng() % 20 + 4);
      const double density = std::uniform_real_distribution<double>(0.05, 0.6)(rng);
      std::vector<uint8_t> bin(static_cast<size_t>(h * w));
      auto map = torch::empty({h, w}, torch::kDouble);
      for (int p = 0; p < h * w; ++p) {
        bin[p] = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < density;
        map[p / w][p % w] = bin[p] ? 0.75 : 0.25;
      }
      const auto want = o::largest_component(bin, h, w);
      const auto got = largest_component_box(bin, h, w);
      t.expect(got == want, "component box, mask " + std::to_string(i));
      const auto boxed = mask_to_box(map, h, w, 0.5);
      const LocBox expect_box = want ? *want : LocBox{0, 0, w, h};
      t.expect(boxed == expect_box, "mask_to_box, mask " + std::to_string(i));
    }

    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
      std::vector<double> vals(rng() % 8 + 1);
      double sum = 0.0;
      for (auto& v : vals) {
        v = u(rng);
        sum += v;
      }
      auto [avg, last] = aggregate(vals);
      t.close(avg, sum / static_cast<double>(vals.size()), 1e-12, "aggregate mean");
      t.expect(last == vals.back(), "aggregate last");
    }
    bool rejected = false;
    try {
      aggregate({});
    } catch (const std::exception&) {
      rejected = true;
    }
    t.expect(rejected, "aggregate of an empty list accepted");
    return finish("metric oracles", t, start);
  });
}

CheckResult check_schedule_constants() {
  return guarded("schedule constants", [&] {
    const auto start = Clock::now();
    Tally t;
    t.expect(build_schedule(100, 50, 10, 0).num_tasks == 6, "100 classes, 50 + 10s: T != 6");
    t.expect(build_schedule(200, 100, 20, 0).num_tasks == 6, "200 classes, 100 + 20s: T != 6");
    auto s = build_schedule(6, 2, 2, 3);
    t.expect(s.num_tasks == 3 && s.tasks[0].size() == 2 && s.tasks[1].size() == 2 && s.tasks[2].size() == 2,
             "6 classes, 2 + 2s");
    std::vector<int64_t> seen;
    for (const auto& task : s.tasks) seen.insert(seen.end(), task.begin(), task.end());
    std::sort(seen.begin(), seen.end());
    t.expect(seen == std::vector<int64_t>({0, 1, 2, 3, 4, 5}), "tasks are not a partition of the classes");
    bool rejected = false;
    try {
      build_schedule(7, 2, 2, 0);
    } catch (const ConfigError&) {
      rejected = true;
    }
    t.expect(rejected, "7 classes, 2 + 2s accepted");
    return finish("schedule constants", t, start);
  });
}

CheckResult check_invariants(uint64_t seed) {
  return guarded("invariants", [&] {
    const auto start = Clock::now();
    Tally t;
    auto gen = make_generator(seed);
    std::mt19937_64 rng(seed);

    // cosine scores: bounded by the scale and invariant to positive rescaling
    for (int i = 0; i < 20; ++i) {
      auto f = torch::randn({2, 5, 3, 3}, gen);
      auto w = torch::randn({4, 5}, gen);
      auto scale = torch::tensor(7.0f);
      auto s = cosine_class_scores(f, w, scale);
      t.expect(s.abs().max().item<double>() <= 7.0 + 1e-5, "cosine score beyond the scale");
      auto f2 = f.clone();
      f2.select(0, 1).select(1, 1).select(1, 2).mul_(3.0);
      auto w2 = w.clone();
      w2[2].mul_(5.0);
      t.expect(max_abs_diff(cosine_class_scores(f2, w2, scale), s) < 1e-5, "cosine scores not scale invariant");
    }
    // losses: bounds and softmax shift invariance
    for (int i = 0; i < 20; ++i) {
      auto cls = torch::randn({3, 4, 2, 2}, gen, torch::kDouble) * 3;
      auto cam = torch::randn({3, 4, 2, 2}, gen, torch::kDouble) * 3;
      auto y = torch::randint(4, {3}, gen, torch::kLong);
      const double base = loss_cls(cls, y).item<double>();
      t.expect(base >= 0 && loss_cls_fg(cls, cam, y).item<double>() >= 0, "negative classification loss");
      t.expect(std::abs(loss_cls(cls + 2.5, y).item<double>() - base) < 1e-9, "loss_cls not shift invariant");
      const double ac = loss_ac(cam, y).item<double>();
      t.expect(ac >= 0 && ac <= 1, "loss_ac outside [0,1]");
    }
    t.close(loss_cls(torch::zeros({1, 4, 2, 2}, torch::kDouble), torch::tensor({2}, torch::kLong)).item<double>(),
            std::log(4.0), 1e-12, "uniform classification loss");
    t.close(loss_ac(torch::zeros({2, 3, 2, 2}, torch::kDouble), torch::tensor({0, 2}, torch::kLong)).item<double>(), 0.5,
            1e-12, "zero-logit area loss");

    // fusion: zero compensation is plain inference; new channels pass through bitwise
    auto net = small_net(3, seed);
    net->eval();
    auto fdc = make_fdc_pair(*net, 2, 8);
    torch::NoGradGuard no_grad;
    auto outs = net->forward_full(torch::randn({4, 3, 16, 16}, gen));
    auto zero = fuse_outputs(outs, fdc.get());
    auto plain = fuse_outputs(outs, nullptr);
    t.expect(max_abs_diff(zero.class_probs, plain.class_probs) <= 1e-7 && max_abs_diff(zero.loc_map, plain.loc_map) <= 1e-7,
             "zero compensation changes the outputs");
    for (auto& q : fdc->parameters()) q.normal_(0.0, 0.5);
    auto maps = compensate(outs, fdc.get());
    t.expect(torch::equal(maps.cls.narrow(1, 2, 1), outs.cls_map.narrow(1, 2, 1)) &&
                 torch::equal(maps.cam.narrow(1, 2, 1), outs.cam_map.narrow(1, 2, 1)),
             "new-class channels were compensated");

    // config text round trip
    Config c;
    c.loss.kd.alpha6 = 0.123456789;
    c.model.backbone_channels = {8, 16, 32};
    c.run.name = "round-trip";
    t.expect(Config::parse(c.to_text()) == c, "config round trip");
    (void)rng;
    return finish("invariants", t, start);
  });
}

std::vector<CheckResult> run_selfcheck(uint64_t seed, std::ostream* out) {
  std::vector<std::function<CheckResult()>> suites = {
      [&] { return check_loss_oracles(seed); },  [&] { return check_gradients(seed); },
      [&] { return check_no_drift(seed); },      [&] { return check_expansion(seed); },
      [&] { return check_herding(seed); },       [&] { return check_metric_oracles(seed); },
      [&] { return check_schedule_constants(); }, [&] { return check_invariants(seed); },
  };
  std::vector<CheckResult> results;
  for (auto& suite : suites) {
    results.push_back(suite());
    if (out != nullptr) {
      const auto& r = results.back();
      *out << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ") [" << r.seconds << " s]" << std::endl;
    }
  }
  return results;
}

}  // namespace fdcnet::checks
