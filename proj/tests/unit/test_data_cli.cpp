#include "testing.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fdcnet/cli.hpp"
#include "fdcnet/common.hpp"
#include "fdcnet/config.hpp"
#include "fdcnet/dataset.hpp"

using namespace fdcnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fdcnet_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

int cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

}  // namespace

TEST_SUITE("data-cli") {
  TEST_CASE("config text round trip and validation") {
    Config c;
    c.set("loss.alpha2", "0.25");
    c.set("model.backbone_channels", "8,16,32");
    c.set("run.name", "abc");
    c.set("train.hflip", "false");
    auto back = Config::parse(c.to_text());
    CHECK(back == c);
    CHECK(back.get("loss.alpha2") == c.get("loss.alpha2"));
    CHECK(Config::parse("") == Config{});
    CHECK(Config::parse("# comment\n\ntrain.lr = 0.5 # trailing\n").train.lr == 0.5);
    CHECK_THROWS_AS(c.set("no.such.key", "1"), ValidationError);
    CHECK_THROWS_AS(c.set("train.lr", "fast"), ValidationError);
    CHECK_THROWS_AS(Config::parse("train.lr 0.1"), ValidationError);
    Config bad;
    bad.loss.wsol.alpha1 = -1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = Config{};
    bad.train.epochs_base = -2;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    for (const auto& key : Config::keys()) CHECK_NOTHROW(Config{}.get(key));
  }

  TEST_CASE("manifest parsing") {
    auto dir = scratch("manifest");
    cv::imwrite((dir / "a.png").string(), cv::Mat(10, 12, CV_8UC3, cv::Scalar(1, 2, 3)));
    write(dir / "ok.tsv", "# class\t0\tcat\n# class\t1\tdog\na.png\t0\ttrain\t-\na.png\t1\ttest\t1,1,5,6\n");
    auto m = load_manifest(dir / "ok.tsv");
    CHECK(m.num_classes() == 2);
    CHECK(m.class_names == std::vector<std::string>{"cat", "dog"});
    CHECK(m.entries[1].gt_box == LocBox{1, 1, 5, 6});

    write(dir / "nobox.tsv", "a.png\t0\ttrain\t-\na.png\t0\ttest\t-\n");
    try {
      load_manifest(dir / "nobox.tsv");
      FAIL("accepted a test row without a box");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("nobox.tsv:2:") != std::string::npos);
    }
    write(dir / "bad.tsv", "a.png\t0\ttrain\n");
    CHECK_THROWS_AS(load_manifest(dir / "bad.tsv"), ValidationError);
    write(dir / "gap.tsv", "a.png\t0\ttrain\t-\na.png\t2\ttrain\t-\n");
    CHECK_THROWS_AS(load_manifest(dir / "gap.tsv"), ValidationError);
    write(dir / "outside.tsv", "a.png\t0\ttest\t0,0,13,5\n");
    CHECK_THROWS_AS(load_manifest(dir / "outside.tsv"), ValidationError);

    std::string rows;
    for (int i = 0; i < 12; ++i) rows += "missing" + std::to_string(i) + ".png\t0\ttrain\t-\n";
    write(dir / "missing.tsv", rows);
    try {
      load_manifest(dir / "missing.tsv");
      FAIL("accepted missing files");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("12") != std::string::npos);
      CHECK(msg.find("missing9.png") != std::string::npos);
      CHECK(msg.find("missing10.png") == std::string::npos);
    }
  }

  TEST_CASE("synthetic generation") {
    auto d1 = scratch("synth1"), d2 = scratch("synth2");
    SyntheticOptions o;
    o.n_classes = 6;
    o.per_class_train = 3;
    o.per_class_test = 2;
    o.image_size = 32;
    o.seed = 11;
    auto m = synth_generate(d1, o);
    synth_generate(d2, o);
    CHECK(m.entries.size() == 30);
    CHECK(m.num_classes() == 6);
    int tests = 0;
    for (const auto& e : m.entries) {
      tests += e.split == Split::kTest;
      CHECK(e.gt_box.has_value());
      CHECK(slurp(m.resolve(e)) == slurp(d2 / e.path));
    }
    CHECK(tests == 12);
    CHECK(slurp(d1 / "manifest.tsv") == slurp(d2 / "manifest.tsv"));

    // load, save, load
    auto loaded = load_manifest(d1 / "manifest.tsv");
    CHECK(loaded == m);
    save_manifest(loaded, d1 / "copy.tsv");
    CHECK(load_manifest(d1 / "copy.tsv") == loaded);

    std::set<std::pair<int, int>> styles;
    for (int64_t c = 0; c < 36; ++c) styles.insert(synthetic_class_style(c));
    CHECK(styles.size() == 36);
    o.n_classes = 37;
    CHECK_THROWS(synth_generate(scratch("synth3"), o));
  }

  TEST_CASE("rendered box is the tight box of the drawn pixels") {
    for (uint64_t s = 0; s < 60; ++s) {
      auto r = render_synthetic(static_cast<int64_t>(s % 6), 64, s * 7919 + 1);
      cv::Mat nz;
      cv::findNonZero(r.mask, nz);
      auto rect = cv::boundingRect(nz);
      CHECK(r.box == LocBox{rect.x, rect.y, rect.x + rect.width, rect.y + rect.height});
      const double area = static_cast<double>(cv::countNonZero(r.mask)) / (64.0 * 64.0);
      CHECK(area > 0.02);
      CHECK(area <= 0.40);
    }
  }

  TEST_CASE("pixel normalization") {
    cv::Mat img(4, 4, CV_8UC3, cv::Scalar(0, 128, 255));  // BGR
    PixelNormalization norm{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
    auto t = image_to_tensor(img, 4, norm);
    CHECK(t.sizes() == torch::IntArrayRef({3, 4, 4}));
    CHECK(t[0][0][0].item<float>() == doctest::Approx(1.0));
    CHECK(t[2][0][0].item<float>() == doctest::Approx(0.0));
  }

  TEST_CASE("command line exit codes") {
    std::string out, err;
    CHECK(cli({"--bogus"}, &out, &err) == kExitUsage);
    CHECK(cli({"train"}) == kExitUsage);
    CHECK(cli({"--help"}, &out) == kExitOk);
    CHECK(out.find("selfcheck") != std::string::npos);
    auto dir = scratch("cli");
    write(dir / "bad.conf", "train.lr = fast\n");
    CHECK(cli({"train", "--config", (dir / "bad.conf").string()}) == kExitValidation);
    write(dir / "nodata.conf", "dataset.root = " + (dir / "none").string() + "\n");
    CHECK(cli({"train", "--config", (dir / "nodata.conf").string()}) != kExitOk);
    CHECK(cli({"eval", "--run", (dir / "none").string(), "--task", "1"}) == kExitValidation);
    CHECK(cli({"make-synthetic", "--out", (dir / "syn").string(), "--classes", "2", "--train", "2", "--test", "1",
               "--size", "16"},
              &out) == kExitOk);
    CHECK(fs::exists(dir / "syn" / "manifest.tsv"));
  }

  TEST_CASE("train, eval and report through the command line") {
    auto dir = scratch("cli_run");
    REQUIRE(cli({"make-synthetic", "--out", (dir / "data").string(), "--classes", "4", "--train", "4", "--test",
                 "2", "--size", "16"}) == kExitOk);
    write(dir / "run.conf",
          "dataset.root = " + (dir / "data").string() + "\ndataset.input_size = 16\nmodel.backbone_channels = 4,8\n"
          "model.classifier_width = 4\nmodel.fdc_hidden = 4\ntrain.epochs_base = 1\ntrain.epochs_incr = 1\n"
          "train.fdc_epochs = 1\nmemory.budget = 8\nrun.out_dir = " + (dir / "runs").string() + "\nrun.name = r\n");
    std::string out;
    REQUIRE(cli({"train", "--config", (dir / "run.conf").string(), "--quiet", "--set", "train.batch_size=4"}, &out) ==
            kExitOk);
    CHECK(out.find("Acc_avg") != std::string::npos);
    CHECK(Config::load(dir / "runs" / "r" / "config.resolved").train.batch_size == 4);
    CHECK(cli({"eval", "--run", (dir / "runs" / "r").string(), "--task", "2"}, &out) == kExitOk);
    CHECK(cli({"eval", "--run", (dir / "runs" / "r").string(), "--task", "2", "--tau", "0.3,0.7"}, &out) == kExitOk);
    CHECK(out.find("tau 0.7") != std::string::npos);
    CHECK(cli({"eval", "--run", (dir / "runs" / "r").string(), "--task", "2", "--tau", "1.5"}) == kExitUsage);
    CHECK(cli({"report", "--run", (dir / "runs" / "r").string(), "--plot"}, &out) == kExitOk);
    CHECK(fs::exists(dir / "runs" / "r" / "gtk_loc.png"));
    // nothing is written outside the run directory
    std::set<std::string> top;
    for (const auto& e : fs::directory_iterator(dir)) top.insert(e.path().filename().string());
    CHECK(top == std::set<std::string>{"data", "run.conf", "runs"});
  }
}
