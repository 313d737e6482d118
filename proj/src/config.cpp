#include "fdcnet/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "fdcnet/common.hpp"

namespace fdcnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw ValidationError(key + ": not a number: '" + s + "'");
  return v;
}

int64_t parse_int(const std::string& key, const std::string& s) {
  int64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw ValidationError(key + ": not an integer: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ValidationError(key + ": expected true/false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

struct Field {
  std::string key;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

template <typename Member>
Field double_field(std::string key, Member member) {
  return {key, [member](const Config& c) { return format_double(member(c)); },
          [member, key](Config& c, const std::string& v) { member(c) = parse_double(key, v); }};
}

template <typename Member>
Field int_field(std::string key, Member member) {
  return {key, [member](const Config& c) { return std::to_string(member(c)); },
          [member, key](Config& c, const std::string& v) { member(c) = parse_int(key, v); }};
}

template <typename Member>
Field bool_field(std::string key, Member member) {
  return {key, [member](const Config& c) { return std::string(member(c) ? "true" : "false"); },
          [member, key](Config& c, const std::string& v) { member(c) = parse_bool(key, v); }};
}

template <typename Member>
Field string_field(std::string key, Member member) {
  return {key, [member](const Config& c) { return member(c); },
          [member](Config& c, const std::string& v) { member(c) = v; }};
}

template <typename Member>
Field double_list_field(std::string key, Member member) {
  return {key,
          [member](const Config& c) {
            std::string out;
            for (double v : member(c)) out += (out.empty() ? "" : ",") + format_double(v);
            return out;
          },
          [member, key](Config& c, const std::string& v) {
            std::vector<double> values;
            for (const auto& p : split_list(v)) values.push_back(parse_double(key, p));
            member(c) = values;
          }};
}

template <typename Member>
Field int_list_field(std::string key, Member member) {
  return {key,
          [member](const Config& c) {
            std::string out;
            for (int64_t v : member(c)) out += (out.empty() ? "" : ",") + std::to_string(v);
            return out;
          },
          [member, key](Config& c, const std::string& v) {
            std::vector<int64_t> values;
            for (const auto& p : split_list(v)) values.push_back(parse_int(key, p));
            member(c) = values;
          }};
}

#define FDC_MEMBER(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      string_field("dataset.root", FDC_MEMBER(dataset.root)),
      string_field("dataset.manifest", FDC_MEMBER(dataset.manifest)),
      int_field("dataset.input_size", FDC_MEMBER(dataset.input_size)),
      double_list_field("dataset.mean", FDC_MEMBER(dataset.mean)),
      double_list_field("dataset.std", FDC_MEMBER(dataset.std)),
      int_field("schedule.base", FDC_MEMBER(schedule.base)),
      int_field("schedule.increment", FDC_MEMBER(schedule.increment)),
      int_field("schedule.seed", FDC_MEMBER(schedule.seed)),
      bool_field("schedule.shuffle", FDC_MEMBER(schedule.shuffle)),
      int_list_field("model.backbone_channels", FDC_MEMBER(model.backbone_channels)),
      int_field("model.downsample", FDC_MEMBER(model.downsample)),
      int_field("model.classifier_width", FDC_MEMBER(model.classifier_width)),
      int_field("model.localizer_kernel", FDC_MEMBER(model.localizer_kernel)),
      bool_field("model.cosine", FDC_MEMBER(model.cosine)),
      double_field("model.init_scale", FDC_MEMBER(model.init_scale)),
      int_field("model.fdc_hidden", FDC_MEMBER(model.fdc_hidden)),
      bool_field("method.kd", FDC_MEMBER(method.kd)),
      bool_field("method.exemplars", FDC_MEMBER(method.exemplars)),
      bool_field("method.fdc", FDC_MEMBER(method.fdc)),
      int_field("memory.budget", FDC_MEMBER(memory.budget)),
      double_field("loss.alpha1", FDC_MEMBER(loss.wsol.alpha1)),
      double_field("loss.alpha2", FDC_MEMBER(loss.wsol.alpha2)),
      double_field("loss.alpha3", FDC_MEMBER(loss.wsol.alpha3)),
      double_field("loss.alpha4", FDC_MEMBER(loss.kd.alpha4)),
      double_field("loss.alpha5", FDC_MEMBER(loss.kd.alpha5)),
      double_field("loss.alpha6", FDC_MEMBER(loss.kd.alpha6)),
      double_field("loss.alpha7", FDC_MEMBER(loss.kd.alpha7)),
      double_field("loss.beta", FDC_MEMBER(loss.beta)),
      double_field("loss.epsilon", FDC_MEMBER(loss.wsol.epsilon)),
      bool_field("loss.bas_probability", FDC_MEMBER(loss.wsol.bas_on_probabilities)),
      int_field("train.epochs_base", FDC_MEMBER(train.epochs_base)),
      int_field("train.epochs_incr", FDC_MEMBER(train.epochs_incr)),
      int_field("train.fdc_epochs", FDC_MEMBER(train.fdc_epochs)),
      int_field("train.batch_size", FDC_MEMBER(train.batch_size)),
      double_field("train.lr", FDC_MEMBER(train.lr)),
      double_field("train.fdc_lr", FDC_MEMBER(train.fdc_lr)),
      double_field("train.momentum", FDC_MEMBER(train.momentum)),
      double_field("train.weight_decay", FDC_MEMBER(train.weight_decay)),
      double_field("train.lr_decay_fraction", FDC_MEMBER(train.lr_decay_fraction)),
      double_field("train.lr_gamma", FDC_MEMBER(train.lr_gamma)),
      double_field("train.grad_clip", FDC_MEMBER(train.grad_clip)),
      bool_field("train.hflip", FDC_MEMBER(train.hflip)),
      int_field("train.threads", FDC_MEMBER(train.threads)),
      double_field("eval.iou_thresh", FDC_MEMBER(eval.iou_thresh)),
      double_field("eval.tau", FDC_MEMBER(eval.tau)),
      string_field("run.name", FDC_MEMBER(run.name)),
      string_field("run.out_dir", FDC_MEMBER(run.out_dir)),
      int_field("run.seed", FDC_MEMBER(run.seed)),
      bool_field("run.checkpoints", FDC_MEMBER(run.checkpoints)),
  };
  return table;
}

#undef FDC_MEMBER

const Field& find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ValidationError("unknown config key '" + key + "'");
}

}  // namespace

std::filesystem::path DatasetConfig::manifest_path() const {
  std::filesystem::path m(manifest);
  return m.is_absolute() ? m : std::filesystem::path(root) / m;
}

void Config::set(const std::string& key, const std::string& value) { find_field(key).set(*this, trim(value)); }

std::string Config::get(const std::string& key) const { return find_field(key).get(*this); }

const std::vector<std::string>& Config::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return names;
}

void Config::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("config: " + msg); };
  if (dataset.input_size < 1) fail("dataset.input_size must be positive");
  if (dataset.mean.size() != 3 || dataset.std.size() != 3) fail("dataset.mean and dataset.std need 3 values");
  for (double s : dataset.std) {
    if (!(s > 0)) fail("dataset.std values must be positive");
  }
  if (schedule.base < 1 || schedule.increment < 1) fail("schedule.base and schedule.increment must be positive");
  if (model.backbone_channels.empty()) fail("model.backbone_channels is empty");
  for (auto c : model.backbone_channels) {
    if (c < 1) fail("model.backbone_channels must be positive");
  }
  if (model.downsample < -1 || model.downsample >= static_cast<int64_t>(model.backbone_channels.size())) {
    fail("model.downsample must be -1 or less than the number of backbone blocks");
  }
  if (model.classifier_width < 1 || model.fdc_hidden < 1) fail("layer widths must be positive");
  if (model.localizer_kernel < 1 || model.localizer_kernel % 2 == 0) fail("model.localizer_kernel must be odd");
  if (!(model.init_scale > 0)) fail("model.init_scale must be positive");
  if (memory.budget < 1) fail("memory.budget must be positive");
  const double weights[] = {loss.wsol.alpha1, loss.wsol.alpha2, loss.wsol.alpha3, loss.kd.alpha4,
                            loss.kd.alpha5,   loss.kd.alpha6,   loss.kd.alpha7,   loss.beta};
  for (double w : weights) {
    if (!(w >= 0)) fail("loss weights must be >= 0");
  }
  if (!(loss.wsol.epsilon > 0)) fail("loss.epsilon must be > 0");
  if (train.epochs_base < 0 || train.epochs_incr < 0 || train.fdc_epochs < 0) fail("epochs must be >= 0");
  if (train.batch_size < 1) fail("train.batch_size must be positive");
  if (!(train.lr >= 0) || !(train.fdc_lr >= 0)) fail("learning rates must be >= 0");
  if (train.threads < 1) fail("train.threads must be positive");
  if (!(eval.iou_thresh > 0 && eval.iou_thresh <= 1)) fail("eval.iou_thresh must be in (0,1]");
  if (!(eval.tau > 0 && eval.tau < 1)) fail("eval.tau must be in (0,1)");
  if (run.name.empty() || run.name.find('/') != std::string::npos) fail("run.name must be a plain directory name");
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

NetOptions Config::net_options(int64_t num_classes) const {
  NetOptions o;
  o.input_size = dataset.input_size;
  o.backbone_channels = model.backbone_channels;
  o.downsample = model.downsample;
  o.classifier_width = model.classifier_width;
  o.localizer_kernel = model.localizer_kernel;
  o.cosine = model.cosine;
  o.init_scale = model.init_scale;
  o.num_classes = num_classes;
  return o;
}

FdcTrainOptions Config::fdc_options(uint64_t seed) const {
  FdcTrainOptions o;
  o.epochs = train.fdc_epochs;
  o.batch_size = train.batch_size;
  o.lr = train.fdc_lr;
  o.momentum = train.momentum;
  o.beta = loss.beta;
  o.hidden = model.fdc_hidden;
  o.seed = seed;
  return o;
}

bool operator==(const Config& a, const Config& b) { return a.to_text() == b.to_text(); }

}  // namespace fdcnet
