#include "fdcnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fdcnet/common.hpp"

namespace fdcnet {

namespace fs = std::filesystem;

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

fs::path DatasetManifest::resolve(const ManifestEntry& e) const {
  fs::path p(e.path);
  return p.is_absolute() ? p : root / p;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::optional<LocBox> parse_box(const std::string& field) {
  if (field == "-") return std::nullopt;
  LocBox b;
  char extra = 0;
  if (std::sscanf(field.c_str(), "%d,%d,%d,%d%c", &b.x1, &b.y1, &b.x2, &b.y2, &extra) != 4) {
    throw ValidationError("bad box '" + field + "'");
  }
  if (!b.valid()) throw ValidationError("empty box '" + field + "'");
  return b;
}

int64_t parse_class(const std::string& field) {
  size_t used = 0;
  int64_t v = -1;
  try {
    v = std::stoll(field, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != field.size() || v < 0) throw ValidationError("bad class id '" + field + "'");
  return v;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path, ManifestCheck check) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::map<int64_t, std::string> declared;
  std::string line;
  size_t line_no = 0;
  std::vector<size_t> entry_lines;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    auto fields = split_tabs(line);
    if (line[0] == '#') {
      if (fields.size() == 3 && fields[0] == "# class") {
        try {
          declared[parse_class(fields[1])] = fields[2];
        } catch (const ValidationError& e) {
          throw ValidationError(where + e.what());
        }
      }
      continue;
    }
    if (fields.size() != 4) throw ValidationError(where + "expected 4 tab-separated fields");
    ManifestEntry e;
    try {
      e.path = fields[0];
      if (e.path.empty()) throw ValidationError("empty image path");
      e.class_id = parse_class(fields[1]);
      if (fields[2] == "train") {
        e.split = Split::kTrain;
      } else if (fields[2] == "test") {
        e.split = Split::kTest;
      } else {
        throw ValidationError("split must be train or test, got '" + fields[2] + "'");
      }
      e.gt_box = parse_box(fields[3]);
    } catch (const ValidationError& err) {
      throw ValidationError(where + err.what());
    }
    if (e.split == Split::kTest && !e.gt_box) {
      throw ValidationError(where + "test entry '" + e.path + "' has no gt_box");
    }
    m.entries.push_back(std::move(e));
    entry_lines.push_back(line_no);
  }

  std::set<int64_t> used;
  for (const auto& e : m.entries) used.insert(e.class_id);
  const int64_t total = used.empty() ? static_cast<int64_t>(declared.size()) : *used.rbegin() + 1;
  if (static_cast<int64_t>(used.size()) != total) {
    throw ValidationError(path.string() + ": class ids are not dense in [0, " + std::to_string(total) + ")");
  }
  for (int64_t c = 0; c < total; ++c) {
    auto it = declared.find(c);
    m.class_names.push_back(it != declared.end() ? it->second : "class_" + std::to_string(c));
  }

  if (check.images_exist || check.box_bounds) {
    std::vector<std::string> missing;
    size_t n_missing = 0;
    for (size_t i = 0; i < m.entries.size(); ++i) {
      const auto& e = m.entries[i];
      const auto file = m.resolve(e);
      if (!fs::exists(file)) {
        if (missing.size() < 10) missing.push_back(e.path);
        ++n_missing;
        continue;
      }
      if (check.box_bounds && e.gt_box) {
        cv::Mat img = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
        if (img.empty()) throw ValidationError(path.string() + ":" + std::to_string(entry_lines[i]) +
                                               ": unreadable image " + e.path);
        const auto& b = *e.gt_box;
        if (b.x1 < 0 || b.y1 < 0 || b.x2 > img.cols || b.y2 > img.rows) {
          throw ValidationError(path.string() + ":" + std::to_string(entry_lines[i]) + ": gt_box outside the " +
                                std::to_string(img.cols) + "x" + std::to_string(img.rows) + " image");
        }
      }
    }
    if (n_missing > 0) {
      std::string msg = path.string() + ": " + std::to_string(n_missing) + " image file(s) missing:";
      for (const auto& p : missing) msg += "\n  " + p;
      throw ValidationError(msg);
    }
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write manifest " + path.string());
  for (size_t c = 0; c < manifest.class_names.size(); ++c) {
    out << "# class\t" << c << '\t' << manifest.class_names[c] << '\n';
  }
  for (const auto& e : manifest.entries) {
    out << e.path << '\t' << e.class_id << '\t' << split_name(e.split) << '\t';
    if (e.gt_box) {
      out << e.gt_box->x1 << ',' << e.gt_box->y1 << ',' << e.gt_box->x2 << ',' << e.gt_box->y2;
    } else {
      out << '-';
    }
    out << '\n';
  }
  if (!out) throw Error("failed writing manifest " + path.string());
}

torch::Tensor image_to_tensor(const cv::Mat& bgr, int64_t input_size, const PixelNormalization& norm) {
  cv::Mat img = bgr;
  if (img.channels() == 1) cv::cvtColor(img, img, cv::COLOR_GRAY2BGR);
  if (img.channels() == 4) cv::cvtColor(img, img, cv::COLOR_BGRA2BGR);
  if (img.rows != input_size || img.cols != input_size) {
    cv::resize(img, img, cv::Size(static_cast<int>(input_size), static_cast<int>(input_size)), 0, 0,
               cv::INTER_LINEAR);
  }
  cv::Mat rgb;
  cv::cvtColor(img, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);
  auto t = torch::from_blob(rgb.data, {input_size, input_size, 3}, torch::kFloat).permute({2, 0, 1}).clone();
  auto mean = torch::tensor(norm.mean, torch::kFloat).view({3, 1, 1});
  auto std = torch::tensor(norm.std, torch::kFloat).view({3, 1, 1});
  return (t - mean) / std;
}

LoadedSamples load_samples(const DatasetManifest& manifest, const std::vector<size_t>& entry_indices,
                           int64_t input_size, const PixelNormalization& norm,
                           const std::vector<int64_t>& channel_of_class) {
  LoadedSamples out;
  std::vector<torch::Tensor> pixels;
  std::vector<int64_t> labels;
  for (size_t i : entry_indices) {
    const auto& e = manifest.entries.at(i);
    const auto file = manifest.resolve(e);
    cv::Mat img = cv::imread(file.string(), cv::IMREAD_COLOR);
    if (img.empty()) throw ValidationError("cannot read image " + file.string());
    pixels.push_back(image_to_tensor(img, input_size, norm));
    int64_t channel = e.class_id;
    if (!channel_of_class.empty()) channel = channel_of_class.at(e.class_id);
    labels.push_back(channel);
    out.samples.ids.push_back(e.path);
    out.targets.push_back({e.gt_box, img.rows, img.cols});
    out.class_ids.push_back(e.class_id);
  }
  if (!pixels.empty()) {
    out.samples.pixels = torch::stack(pixels);
    out.samples.labels = torch::tensor(labels, torch::kLong);
  } else {
    out.samples.pixels = torch::empty({0, 3, input_size, input_size});
    out.samples.labels = torch::empty({0}, torch::kLong);
  }
  return out;
}

// ---- synthetic shapes ----

namespace {

constexpr const char* kShapeNames[kSyntheticShapes] = {"circle", "square", "triangle", "cross", "ring", "bar"};
constexpr const char* kColorNames[kSyntheticColors] = {"red", "green", "blue", "yellow", "magenta", "cyan"};
// RGB
constexpr int kPalette[kSyntheticColors][3] = {{220, 50, 50},  {50, 190, 70},  {50, 90, 230},
                                               {235, 205, 50}, {200, 60, 200}, {60, 200, 210}};

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool inside_shape(int shape, double u, double v) {
  switch (shape) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
    case 2: return v >= -1.0 && v <= 1.0 && std::abs(u) <= (v + 1.0) / 2.0;
    case 3: return std::abs(u) <= 0.3 || std::abs(v) <= 0.3;
    case 4: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.55 * 0.55;
    }
    default: return std::abs(v) <= 0.35;
  }
}

uint8_t clamp_u8(double v) { return static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

std::pair<int, int> synthetic_class_style(int64_t class_id) {
  if (class_id < 0 || class_id >= int64_t{kSyntheticShapes} * kSyntheticColors) {
    throw ValidationError("synthetic class id " + std::to_string(class_id) + " out of range");
  }
  const int shape = static_cast<int>(class_id % kSyntheticShapes);
  const int color = static_cast<int>((class_id % kSyntheticShapes + class_id / kSyntheticShapes) % kSyntheticColors);
  return {shape, color};
}

std::string synthetic_class_name(int64_t class_id) {
  auto [shape, color] = synthetic_class_style(class_id);
  return std::string(kColorNames[color]) + "_" + kShapeNames[shape];
}

RenderedSample render_synthetic(int64_t class_id, int image_size, uint64_t sample_seed) {
  auto [shape, color] = synthetic_class_style(class_id);
  const int s = image_size;
  std::mt19937_64 rng(sample_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> noise(0.0, 1.0);

  // Background: tinted gray, a smooth low-frequency field, then pixel noise.
  const double base = uniform(70, 150);
  double tint[3];
  for (double& t : tint) t = uniform(-15, 15);
  cv::Mat coarse(4, 4, CV_32FC1);
  for (int i = 0; i < 16; ++i) coarse.at<float>(i / 4, i % 4) = static_cast<float>(uniform(-30, 30));
  cv::Mat smooth;
  cv::resize(coarse, smooth, cv::Size(s, s), 0, 0, cv::INTER_LINEAR);

  RenderedSample out;
  out.image.create(s, s, CV_8UC3);
  out.mask = cv::Mat::zeros(s, s, CV_8UC1);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      auto& px = out.image.at<cv::Vec3b>(y, x);
      const double field = smooth.at<float>(y, x);
      for (int c = 0; c < 3; ++c) px[2 - c] = clamp_u8(base + tint[c] + field + 14.0 * noise(rng));
    }
  }

  // Object: box area 5-40% of the image, mild aspect jitter.
  const double area = uniform(0.05, 0.40) * s * s;
  const double aspect = uniform(0.75, 1.0 / 0.75);
  const int w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 4, s);
  const int h = std::clamp(static_cast<int>(std::lround(area / w)), 4, s);
  const int x0 = static_cast<int>(unit(rng) * (s - w + 1));
  const int y0 = static_cast<int>(unit(rng) * (s - h + 1));
  double rgb[3];
  for (int c = 0; c < 3; ++c) rgb[c] = kPalette[color][c] + uniform(-15, 15);

  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) {
      const double u = 2.0 * (x + 0.5 - x0) / w - 1.0;
      const double v = 2.0 * (y + 0.5 - y0) / h - 1.0;
      if (!inside_shape(shape, u, v)) continue;
      out.mask.at<uint8_t>(y, x) = 255;
      auto& px = out.image.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) px[2 - c] = clamp_u8(rgb[c] + 8.0 * noise(rng));
    }
  }

  // The recorded box is the tight box of the pixels actually drawn.
  LocBox box{s, s, 0, 0};
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      if (!out.mask.at<uint8_t>(y, x)) continue;
      box.x1 = std::min(box.x1, x);
      box.y1 = std::min(box.y1, y);
      box.x2 = std::max(box.x2, x + 1);
      box.y2 = std::max(box.y2, y + 1);
    }
  }
  out.box = box;
  return out;
}

DatasetManifest synth_generate(const fs::path& out_dir, const SyntheticOptions& options) {
  if (options.n_classes < 1 || options.n_classes > int64_t{kSyntheticShapes} * kSyntheticColors) {
    throw ValidationError("synthetic dataset supports 1.." + std::to_string(kSyntheticShapes * kSyntheticColors) +
                          " classes");
  }
  if (options.image_size < 16) throw ValidationError("synthetic image size must be at least 16");
  std::error_code ec;
  fs::create_directories(out_dir / "train", ec);
  fs::create_directories(out_dir / "test", ec);
  if (ec || !fs::is_directory(out_dir / "train")) {
    throw Error("cannot create output directory " + out_dir.string());
  }

  DatasetManifest manifest;
  manifest.root = out_dir;
  for (int64_t c = 0; c < options.n_classes; ++c) manifest.class_names.push_back(synthetic_class_name(c));
  const std::vector<int> png_params{cv::IMWRITE_PNG_COMPRESSION, 6};
  for (Split split : {Split::kTrain, Split::kTest}) {
    const int64_t per_class = split == Split::kTrain ? options.per_class_train : options.per_class_test;
    for (int64_t c = 0; c < options.n_classes; ++c) {
      for (int64_t i = 0; i < per_class; ++i) {
        const uint64_t sample_seed =
            splitmix64(options.seed ^ splitmix64((static_cast<uint64_t>(c) << 32) ^ (static_cast<uint64_t>(i) << 1) ^
                                                 (split == Split::kTest ? 1u : 0u)));
        auto sample = render_synthetic(c, options.image_size, sample_seed);
        char name[64];
        std::snprintf(name, sizeof(name), "%s/c%02lld_%04lld.png", split_name(split), static_cast<long long>(c),
                      static_cast<long long>(i));
        if (!cv::imwrite((out_dir / name).string(), sample.image, png_params)) {
          throw Error("cannot write " + (out_dir / name).string());
        }
        manifest.entries.push_back({name, c, split, sample.box});
      }
    }
  }
  save_manifest(manifest, out_dir / "manifest.tsv");
  return manifest;
}

}  // namespace fdcnet
