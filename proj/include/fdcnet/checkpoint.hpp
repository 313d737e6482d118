#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "fdcnet/fdc.hpp"
#include "fdcnet/model.hpp"

namespace fdcnet {

/// Named tensors plus string metadata in the safetensors layout: an 8-byte
/// little-endian header length, a JSON header, then the raw little-endian data.
/// Any safetensors reader can open the file.
struct TensorArchive {
  std::map<std::string, torch::Tensor> tensors;
  std::map<std::string, std::string> metadata;

  void save(const std::filesystem::path& path) const;  // writes a temp file, then renames
  static TensorArchive load(const std::filesystem::path& path);
};

inline constexpr const char* kCheckpointFormat = "fdcnet-checkpoint";
inline constexpr const char* kCheckpointVersion = "1";

/// Everything needed to resume or re-evaluate after a task.
struct Checkpoint {
  int64_t task = 0;
  WsolNet net{nullptr};
  FdcPair fdc{nullptr};              // absent before the second task or with compensation disabled
  std::vector<int64_t> class_order;  // dataset class id of each network channel
  torch::Tensor rng_state;           // CPU generator state, uint8
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string net_options_to_json(const NetOptions& options);
NetOptions net_options_from_json(const std::string& text);

}  // namespace fdcnet
