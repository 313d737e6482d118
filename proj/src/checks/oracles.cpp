#include "fdcnet/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fdcnet/common.hpp"

namespace fdcnet::oracle {

Array::Array(std::vector<int64_t> s) : shape(std::move(s)) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  v.assign(static_cast<size_t>(n), 0.0);
}

double& Array::at(int64_t a, int64_t b, int64_t c, int64_t d) {
  return v[static_cast<size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
}
double Array::at(int64_t a, int64_t b, int64_t c, int64_t d) const {
  return v[static_cast<size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
}
double& Array::at(int64_t a, int64_t b) { return v[static_cast<size_t>(a * shape[1] + b)]; }
double Array::at(int64_t a, int64_t b) const { return v[static_cast<size_t>(a * shape[1] + b)]; }

Array from_tensor(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kDouble).contiguous();
  Array a(std::vector<int64_t>(c.sizes().begin(), c.sizes().end()));
  const double* p = c.data_ptr<double>();
  std::copy(p, p + c.numel(), a.v.begin());
  return a;
}

std::vector<int64_t> labels_of(const torch::Tensor& t) {
  auto c = t.to(torch::kLong).contiguous();
  return std::vector<int64_t>(c.data_ptr<int64_t>(), c.data_ptr<int64_t>() + c.numel());
}

namespace {

double pooled(const Array& m, int64_t b, int64_t k) {
  double s = 0.0;
  for (int64_t i = 0; i < m.dim(2); ++i) {
    for (int64_t j = 0; j < m.dim(3); ++j) s += m.at(b, k, i, j);
  }
  return s / static_cast<double>(m.dim(2) * m.dim(3));
}

std::vector<double> softmax_of(const std::vector<double>& z) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : z) mx = std::max(mx, x);
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - mx);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

std::vector<double> pooled_probs(const Array& m, int64_t b, int64_t channels) {
  std::vector<double> z;
  for (int64_t k = 0; k < channels; ++k) z.push_back(pooled(m, b, k));
  return softmax_of(z);
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// 3x3 (or any odd k) convolution with zero padding and stride 1.
Array conv2d(const Array& x, const Array& w, const Array& bias) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(0), k = w.dim(2), pad = k / 2;
  Array y({B, O, H, W});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t o = 0; o < O; ++o) {
      for (int64_t i = 0; i < H; ++i) {
        for (int64_t j = 0; j < W; ++j) {
          double s = bias.v[static_cast<size_t>(o)];
          for (int64_t c = 0; c < C; ++c) {
            for (int64_t di = 0; di < k; ++di) {
              for (int64_t dj = 0; dj < k; ++dj) {
                const int64_t ii = i + di - pad, jj = j + dj - pad;
                if (ii < 0 || jj < 0 || ii >= H || jj >= W) continue;
                s += w.at(o, c, di, dj) * x.at(b, c, ii, jj);
              }
            }
          }
          y.at(b, o, i, j) = s;
        }
      }
    }
  }
  return y;
}

}  // namespace

double loss_cls(const Array& cls, const std::vector<int64_t>& y) {
  double total = 0.0;
  for (int64_t b = 0; b < cls.dim(0); ++b) total += -std::log(pooled_probs(cls, b, cls.dim(1))[y[b]]);
  return total / static_cast<double>(cls.dim(0));
}

double loss_cls_fg(const Array& cls, const Array& cam, const std::vector<int64_t>& y) {
  Array masked = cls;
  for (int64_t b = 0; b < cls.dim(0); ++b) {
    for (int64_t k = 0; k < cls.dim(1); ++k) {
      for (int64_t i = 0; i < cls.dim(2); ++i) {
        for (int64_t j = 0; j < cls.dim(3); ++j) masked.at(b, k, i, j) *= sig(cam.at(b, y[b], i, j));
      }
    }
  }
  return loss_cls(masked, y);
}

double loss_bas_from_maps(const Array& cls, const Array& bg, const std::vector<int64_t>& y, double eps,
                          bool on_probabilities) {
  double total = 0.0;
  for (int64_t b = 0; b < cls.dim(0); ++b) {
    double s_all, s_bg;
    if (on_probabilities) {
      s_all = pooled_probs(cls, b, cls.dim(1))[y[b]];
      s_bg = pooled_probs(bg, b, bg.dim(1))[y[b]];
    } else {
      s_all = pooled(cls, b, y[b]);
      s_bg = pooled(bg, b, y[b]);
    }
    total += s_bg / (s_all + eps);
  }
  return total / static_cast<double>(cls.dim(0));
}

double loss_ac(const Array& cam, const std::vector<int64_t>& y) {
  double total = 0.0;
  for (int64_t b = 0; b < cam.dim(0); ++b) {
    double s = 0.0;
    for (int64_t i = 0; i < cam.dim(2); ++i) {
      for (int64_t j = 0; j < cam.dim(3); ++j) s += sig(cam.at(b, y[b], i, j));
    }
    total += s / static_cast<double>(cam.dim(2) * cam.dim(3));
  }
  return total / static_cast<double>(cam.dim(0));
}

double loss_kd_cls(const Array& cls_new, const Array& cls_old, int64_t n_old) {
  double total = 0.0;
  for (int64_t b = 0; b < cls_new.dim(0); ++b) {
    auto p = pooled_probs(cls_old, b, n_old);
    auto q = pooled_probs(cls_new, b, n_old);
    for (int64_t k = 0; k < n_old; ++k) {
      if (p[k] > 0) total += p[k] * std::log(p[k] / q[k]);
    }
  }
  return total / static_cast<double>(cls_new.dim(0));
}

double loss_kd_loc(const Array& cam_new, const Array& cam_old, const std::vector<int64_t>& y) {
  double total = 0.0;
  const double n = static_cast<double>(cam_new.dim(2) * cam_new.dim(3));
  for (int64_t b = 0; b < cam_new.dim(0); ++b) {
    double sq = 0.0;
    for (int64_t i = 0; i < cam_new.dim(2); ++i) {
      for (int64_t j = 0; j < cam_new.dim(3); ++j) {
        const double d = sig(cam_new.at(b, y[b], i, j)) - sig(cam_old.at(b, y[b], i, j));
        sq += d * d;
      }
    }
    total += std::sqrt(sq / n);
  }
  return total / static_cast<double>(cam_new.dim(0));
}

double loss_kd_feat(const Array& tap_new, const Array& tap_old) {
  double total = 0.0;
  int64_t count = 0;
  for (int64_t b = 0; b < tap_new.dim(0); ++b) {
    for (int64_t i = 0; i < tap_new.dim(2); ++i) {
      for (int64_t j = 0; j < tap_new.dim(3); ++j) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int64_t c = 0; c < tap_new.dim(1); ++c) {
          const double a = tap_new.at(b, c, i, j), o = tap_old.at(b, c, i, j);
          dot += a * o;
          na += a * a;
          nb += o * o;
        }
        total += dot / ((std::sqrt(na) + kNormEps) * (std::sqrt(nb) + kNormEps));
        ++count;
      }
    }
  }
  return 1.0 - total / static_cast<double>(count);
}

double loss_dc(const Array& cur_cls_old, const Array& comp_cls, const Array& target_cls, const Array& cur_cam_old,
               const Array& comp_cam, const Array& target_cam, double beta) {
  auto rms_mean = [](const Array& cur, const Array& comp, const Array& target) {
    const int64_t B = cur.dim(0);
    const size_t per = cur.v.size() / static_cast<size_t>(B);
    double total = 0.0;
    for (int64_t b = 0; b < B; ++b) {
      double sq = 0.0;
      for (size_t e = 0; e < per; ++e) {
        const size_t i = static_cast<size_t>(b) * per + e;
        const double d = cur.v[i] + comp.v[i] - target.v[i];
        sq += d * d;
      }
      total += std::sqrt(sq / static_cast<double>(per));
    }
    return total / static_cast<double>(B);
  };
  return rms_mean(cur_cls_old, comp_cls, target_cls) + beta * rms_mean(cur_cam_old, comp_cam, target_cam);
}

Array classifier_scores(WsolNetImpl& net, const Array& features) {
  auto params = net.named_parameters();
  Array x = features;
  for (int layer = 0; layer < kClassifierLayers - 1; ++layer) {
    const std::string prefix = "classifier." + std::to_string(layer) + ".";
    x = conv2d(x, from_tensor(params[prefix + "weight"]), from_tensor(params[prefix + "bias"]));
    for (double& e : x.v) e = std::max(e, 0.0);
  }
  const Array w = from_tensor(params["classifier_last_weight"]);
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), K = w.dim(0);
  Array out({B, K, H, W});
  if (net.options().cosine) {
    const double scale = params["classifier_last_scale"].item<double>();
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t i = 0; i < H; ++i) {
        for (int64_t j = 0; j < W; ++j) {
          double nf = 0.0;
          for (int64_t c = 0; c < C; ++c) nf += x.at(b, c, i, j) * x.at(b, c, i, j);
          nf = std::sqrt(nf);
          for (int64_t k = 0; k < K; ++k) {
            double nw = 0.0, dot = 0.0;
            for (int64_t c = 0; c < C; ++c) {
              nw += w.at(k, c) * w.at(k, c);
              dot += w.at(k, c) * x.at(b, c, i, j);
            }
            out.at(b, k, i, j) = scale * dot / ((nf + kNormEps) * (std::sqrt(nw) + kNormEps));
          }
        }
      }
    }
  } else {
    const Array bias = from_tensor(params["classifier_last_bias"]);
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t k = 0; k < K; ++k) {
        for (int64_t i = 0; i < H; ++i) {
          for (int64_t j = 0; j < W; ++j) {
            double s = bias.v[static_cast<size_t>(k)];
            for (int64_t c = 0; c < C; ++c) s += w.at(k, c) * x.at(b, c, i, j);
            out.at(b, k, i, j) = s;
          }
        }
      }
    }
  }
  return out;
}

Array mask_background(const Array& features, const Array& fg_mask) {
  Array out = features;
  for (int64_t b = 0; b < features.dim(0); ++b) {
    for (int64_t c = 0; c < features.dim(1); ++c) {
      for (int64_t i = 0; i < features.dim(2); ++i) {
        for (int64_t j = 0; j < features.dim(3); ++j) {
          const double m = fg_mask.v[static_cast<size_t>((b * features.dim(2) + i) * features.dim(3) + j)];
          out.at(b, c, i, j) *= 1.0 - m;
        }
      }
    }
  }
  return out;
}

Array label_sigmoid(const Array& cam, const std::vector<int64_t>& y) {
  Array out({cam.dim(0), cam.dim(2), cam.dim(3)});
  size_t e = 0;
  for (int64_t b = 0; b < cam.dim(0); ++b) {
    for (int64_t i = 0; i < cam.dim(2); ++i) {
      for (int64_t j = 0; j < cam.dim(3); ++j) out.v[e++] = sig(cam.at(b, y[b], i, j));
    }
  }
  return out;
}

Array assemble(const Array& prev, const Array& g) {
  Array out = prev;
  if (g.v.empty()) return out;
  for (int64_t b = 0; b < g.dim(0); ++b) {
    for (int64_t k = 0; k < g.dim(1); ++k) {
      for (int64_t i = 0; i < g.dim(2); ++i) {
        for (int64_t j = 0; j < g.dim(3); ++j) out.at(b, k, i, j) += g.at(b, k, i, j);
      }
    }
  }
  return out;
}

Array pooled_softmax(const Array& map) {
  Array out({map.dim(0), map.dim(1)});
  for (int64_t b = 0; b < map.dim(0); ++b) {
    auto p = pooled_probs(map, b, map.dim(1));
    for (int64_t k = 0; k < map.dim(1); ++k) out.at(b, k) = p[k];
  }
  return out;
}

Array sigmoid(const Array& a) {
  Array out = a;
  for (double& x : out.v) x = sig(x);
  return out;
}

std::vector<size_t> herding(const std::vector<std::vector<double>>& emb, size_t m) {
  const size_t n = emb.size();
  if (m > n) throw ContractError("herding oracle: m > n");
  const size_t d = n ? emb[0].size() : 0;
  std::vector<long double> mu(d, 0.0L);
  for (const auto& e : emb) {
    for (size_t c = 0; c < d; ++c) mu[c] += e[c];
  }
  for (auto& x : mu) x /= static_cast<long double>(n);

  std::vector<size_t> chosen;
  std::vector<bool> used(n, false);
  for (size_t step = 1; step <= m; ++step) {
    size_t best = n;
    long double best_dist = 0.0L;
    for (size_t cand = 0; cand < n; ++cand) {
      if (used[cand]) continue;
      long double dist = 0.0L;
      for (size_t c = 0; c < d; ++c) {
        long double s = emb[cand][c];
        for (size_t p : chosen) s += emb[p][c];
        const long double diff = mu[c] - s / static_cast<long double>(step);
        dist += diff * diff;
      }
      if (best == n || dist < best_dist) {
        best = cand;
        best_dist = dist;
      }
    }
    used[best] = true;
    chosen.push_back(best);
  }
  return chosen;
}

double iou_by_pixels(const LocBox& a, const LocBox& b) {
  const int x0 = std::min(a.x1, b.x1), y0 = std::min(a.y1, b.y1);
  const int x1 = std::max(a.x2, b.x2), y1 = std::max(a.y2, b.y2);
  int64_t inter = 0, uni = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const bool in_a = x >= a.x1 && x < a.x2 && y >= a.y1 && y < a.y2;
      const bool in_b = x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<LocBox> largest_component(const std::vector<uint8_t>& binary, int height, int width) {
  const int n = height * width;
  std::vector<int> parent(static_cast<size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  auto unite = [&](int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);  // root = smallest raster index
  };
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (!binary[y * width + x]) continue;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= height || xx >= width) continue;
          if (binary[yy * width + xx]) unite(y * width + x, yy * width + xx);
        }
      }
    }
  }
  std::vector<int> size(static_cast<size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    if (binary[i]) ++size[find(i)];
  }
  int best = -1;
  for (int r = 0; r < n; ++r) {
    if (size[r] > 0 && (best < 0 || size[r] > size[best])) best = r;
  }
  if (best < 0) return std::nullopt;
  LocBox box{width, height, 0, 0};
  for (int i = 0; i < n; ++i) {
    if (!binary[i] || find(i) != best) continue;
    box.x1 = std::min(box.x1, i % width);
    box.y1 = std::min(box.y1, i / width);
    box.x2 = std::max(box.x2, i % width + 1);
    box.y2 = std::max(box.y2, i / width + 1);
  }
  return box;
}

}  // namespace fdcnet::oracle
