#include "fdcnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "fdcnet/common.hpp"
#include "json.hpp"

namespace fdcnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat: return "F32";
    case torch::kDouble: return "F64";
    case torch::kLong: return "I64";
    case torch::kInt: return "I32";
    case torch::kByte: return "U8";
    default: throw Error(std::string("archive: unsupported dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "F32") return torch::kFloat;
  if (s == "F64") return torch::kDouble;
  if (s == "I64") return torch::kLong;
  if (s == "I32") return torch::kInt;
  if (s == "U8") return torch::kByte;
  throw ValidationError("archive: unsupported dtype " + s);
}

}  // namespace

void TensorArchive::save(const fs::path& path) const {
  json header = json::object();
  std::vector<torch::Tensor> blobs;
  uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    auto t = tensor.detach().cpu().contiguous();
    const uint64_t bytes = t.numel() * t.element_size();
    header[name] = {{"dtype", dtype_name(t.scalar_type())},
                    {"shape", std::vector<int64_t>(t.sizes().begin(), t.sizes().end())},
                    {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
    blobs.push_back(t);
  }
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::string text = header.dump();
  while (text.size() % 8 != 0) text.push_back(' ');

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    uint64_t n = text.size();
    unsigned char len[8];
    for (int i = 0; i < 8; ++i) len[i] = static_cast<unsigned char>(n >> (8 * i));
    out.write(reinterpret_cast<const char*>(len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : blobs) {
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
    }
    out.flush();
    if (!out) throw Error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

TensorArchive TensorArchive::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  unsigned char len[8];
  if (!in.read(reinterpret_cast<char*>(len), 8)) throw ValidationError(path.string() + ": truncated archive");
  uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= uint64_t{len[i]} << (8 * i);
  if (n > (uint64_t{1} << 30)) throw ValidationError(path.string() + ": implausible header length");
  std::string text(n, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(n))) throw ValidationError(path.string() + ": truncated header");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  TensorArchive archive;
  json header;
  try {
    header = json::parse(text);
    for (auto it = header.begin(); it != header.end(); ++it) {
      if (it.key() == "__metadata__") {
        archive.metadata = it.value().get<std::map<std::string, std::string>>();
        continue;
      }
      const auto& e = it.value();
      const auto dtype = dtype_from(e.at("dtype").get<std::string>());
      const auto shape = e.at("shape").get<std::vector<int64_t>>();
      const auto offsets = e.at("data_offsets").get<std::vector<uint64_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > data.size()) {
        throw ValidationError("bad data_offsets for " + it.key());
      }
      auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
      if (static_cast<uint64_t>(t.numel() * t.element_size()) != offsets[1] - offsets[0]) {
        throw ValidationError("size mismatch for " + it.key());
      }
      std::memcpy(t.data_ptr(), data.data() + offsets[0], offsets[1] - offsets[0]);
      archive.tensors[it.key()] = t;
    }
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return archive;
}

std::string net_options_to_json(const NetOptions& o) {
  json j = {{"input_size", o.input_size},
            {"backbone_channels", o.backbone_channels},
            {"downsample", o.downsample},
            {"classifier_width", o.classifier_width},
            {"localizer_kernel", o.localizer_kernel},
            {"cosine", o.cosine},
            {"init_scale", o.init_scale},
            {"num_classes", o.num_classes}};
  return j.dump();
}

NetOptions net_options_from_json(const std::string& text) {
  try {
    auto j = json::parse(text);
    NetOptions o;
    o.input_size = j.at("input_size").get<int64_t>();
    o.backbone_channels = j.at("backbone_channels").get<std::vector<int64_t>>();
    o.downsample = j.at("downsample").get<int64_t>();
    o.classifier_width = j.at("classifier_width").get<int64_t>();
    o.localizer_kernel = j.at("localizer_kernel").get<int64_t>();
    o.cosine = j.at("cosine").get<bool>();
    o.init_scale = j.at("init_scale").get<double>();
    o.num_classes = j.at("num_classes").get<int64_t>();
    return o;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad network options: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  if (!ck.net) throw ContractError("save_checkpoint: no network");
  TensorArchive archive;
  for (const auto& item : ck.net->named_parameters()) archive.tensors["net." + item.key()] = item.value();
  if (ck.fdc) {
    for (const auto& item : ck.fdc->named_parameters()) archive.tensors["fdc." + item.key()] = item.value();
    archive.metadata["fdc.n_old"] = std::to_string(ck.fdc->n_old());
    archive.metadata["fdc.hidden"] = std::to_string(ck.fdc->hidden());
  }
  if (ck.rng_state.defined()) archive.tensors["rng.state"] = ck.rng_state;
  archive.metadata["format"] = kCheckpointFormat;
  archive.metadata["version"] = kCheckpointVersion;
  archive.metadata["task"] = std::to_string(ck.task);
  archive.metadata["net.options"] = net_options_to_json(ck.net->options());
  archive.metadata["num_classes"] = std::to_string(ck.net->num_classes());
  archive.metadata["class_order"] = json(ck.class_order).dump();
  if (ck.net->options().cosine) {
    archive.metadata["scale"] = std::to_string(ck.net->scale().item<double>());
  }
  archive.save(path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  auto archive = TensorArchive::load(path);
  auto meta = [&](const std::string& key) {
    auto it = archive.metadata.find(key);
    if (it == archive.metadata.end()) throw ValidationError(path.string() + ": missing metadata '" + key + "'");
    return it->second;
  };
  if (meta("format") != kCheckpointFormat) throw ValidationError(path.string() + ": not a checkpoint");
  if (meta("version") != kCheckpointVersion) {
    throw ValidationError(path.string() + ": unsupported checkpoint version " + meta("version"));
  }
  Checkpoint ck;
  ck.task = std::stoll(meta("task"));
  ck.class_order = json::parse(meta("class_order")).get<std::vector<int64_t>>();
  ck.net = WsolNet(net_options_from_json(meta("net.options")));

  auto restore = [&](torch::nn::Module& module, const std::string& prefix) {
    torch::NoGradGuard no_grad;
    for (auto& item : module.named_parameters()) {
      auto it = archive.tensors.find(prefix + item.key());
      if (it == archive.tensors.end()) throw ValidationError(path.string() + ": missing tensor " + prefix + item.key());
      if (it->second.sizes() != item.value().sizes()) {
        throw ValidationError(path.string() + ": shape mismatch for " + prefix + item.key());
      }
      item.value().set_data(it->second.clone());
    }
  };
  restore(*ck.net, "net.");
  if (archive.metadata.count("fdc.n_old")) {
    ck.fdc = make_fdc_pair(*ck.net, std::stoll(meta("fdc.n_old")), std::stoll(meta("fdc.hidden")));
    restore(*ck.fdc, "fdc.");
  }
  if (auto it = archive.tensors.find("rng.state"); it != archive.tensors.end()) ck.rng_state = it->second;
  return ck;
}

}  // namespace fdcnet
