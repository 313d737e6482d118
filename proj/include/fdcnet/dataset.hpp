#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "fdcnet/evaluation.hpp"
#include "fdcnet/samples.hpp"

namespace fdcnet {

enum class Split { kTrain, kTest };

const char* split_name(Split s);

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory unless absolute
  int64_t class_id = 0;
  Split split = Split::kTrain;
  std::optional<LocBox> gt_box;

  bool operator==(const ManifestEntry&) const = default;
};

/// Tab-separated dataset listing:
///
///   # class<TAB><id><TAB><name>          (optional class-name declarations)
///   <path><TAB><class_id><TAB><train|test><TAB><x1,y1,x2,y2 | ->
///
/// Lines starting with '#' are otherwise ignored.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;
  std::filesystem::path root;  // directory that relative image paths resolve against

  int64_t num_classes() const { return static_cast<int64_t>(class_names.size()); }
  std::filesystem::path resolve(const ManifestEntry& e) const;
  bool operator==(const DatasetManifest& o) const { return entries == o.entries && class_names == o.class_names; }
};

struct ManifestCheck {
  bool images_exist = true;  // every referenced file must exist
  bool box_bounds = true;    // gt boxes must lie inside the image (reads image headers)
};

DatasetManifest load_manifest(const std::filesystem::path& path, ManifestCheck check = {});
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Images resized to input_size, RGB, channel-normalized, with the per-image eval targets.
struct LoadedSamples {
  SampleSet samples;
  std::vector<EvalTarget> targets;
  std::vector<int64_t> class_ids;  // dataset class id per sample
};

struct PixelNormalization {
  std::vector<double> mean{0.485, 0.456, 0.406};
  std::vector<double> std{0.229, 0.224, 0.225};
};

/// Loads the given entries. labels[i] = channel_of_class[class_id] (identity when empty).
LoadedSamples load_samples(const DatasetManifest& manifest, const std::vector<size_t>& entry_indices,
                           int64_t input_size, const PixelNormalization& norm,
                           const std::vector<int64_t>& channel_of_class = {});

/// Converts an 8-bit BGR image to a normalized 3×S×S RGB tensor.
torch::Tensor image_to_tensor(const cv::Mat& bgr, int64_t input_size, const PixelNormalization& norm);

// ---- synthetic shapes ----

inline constexpr int kSyntheticShapes = 6;  // circle, square, triangle, cross, ring, bar
inline constexpr int kSyntheticColors = 6;

struct SyntheticOptions {
  int64_t n_classes = 6;
  int64_t per_class_train = 100;
  int64_t per_class_test = 20;
  int image_size = 64;
  uint64_t seed = 0;
};

struct RenderedSample {
  cv::Mat image;  // BGR 8-bit
  cv::Mat mask;   // 8-bit, 255 on the object's pixels
  LocBox box;     // tight box of the mask
};

/// Shape index and color index of a synthetic class.
std::pair<int, int> synthetic_class_style(int64_t class_id);
std::string synthetic_class_name(int64_t class_id);

/// Renders one image of the class on a noise-textured background. Pure function of its arguments.
RenderedSample render_synthetic(int64_t class_id, int image_size, uint64_t sample_seed);

/// Writes PNG images plus manifest.tsv under out_dir and returns the manifest.
DatasetManifest synth_generate(const std::filesystem::path& out_dir, const SyntheticOptions& options);

}  // namespace fdcnet
