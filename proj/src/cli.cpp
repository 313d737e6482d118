#include "fdcnet/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fdcnet/checks.hpp"
#include "fdcnet/common.hpp"
#include "fdcnet/config.hpp"
#include "fdcnet/dataset.hpp"
#include "fdcnet/engine.hpp"
#include "fdcnet/plot.hpp"

namespace fdcnet {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%7.2f", 100.0 * v);
  return buf;
}

std::string format_record(const TaskRecord& r) {
  std::ostringstream os;
  os << "task " << r.task << " (" << r.classes << " classes): top1 " << pct(r.acc.top1) << "  top5 "
     << pct(r.acc.top5) << "  gt-known " << pct(r.acc.gtk) << "\n";
  os << "  without compensation: top1 " << pct(r.plain.top1) << "  top5 " << pct(r.plain.top5) << "  gt-known "
     << pct(r.plain.gtk) << "\n";
  if (r.old_acc) {
    os << "  old classes: gt-known " << pct(r.old_acc->gtk) << " (without compensation " << pct(r.old_plain->gtk)
       << ")\n";
  }
  return os.str();
}

}  // namespace

std::string format_report(const IncrementalReport& report) {
  std::ostringstream os;
  os << report.name << "\n";
  os << " task  classes  top1_loc  top5_loc   gtk_loc\n";
  char line[128];
  for (const auto& r : report.per_task) {
    std::snprintf(line, sizeof(line), "%5lld  %7lld  %s   %s   %s\n", static_cast<long long>(r.task),
                  static_cast<long long>(r.classes), pct(r.acc.top1).c_str(), pct(r.acc.top5).c_str(),
                  pct(r.acc.gtk).c_str());
    os << line;
  }
  std::snprintf(line, sizeof(line), "%-14s  %s   %s   %s\n", "Acc_avg", pct(report.acc_avg.top1).c_str(),
                pct(report.acc_avg.top5).c_str(), pct(report.acc_avg.gtk).c_str());
  os << line;
  std::snprintf(line, sizeof(line), "%-14s  %s   %s   %s\n", "Acc_last", pct(report.acc_last.top1).c_str(),
                pct(report.acc_last.top5).c_str(), pct(report.acc_last.gtk).c_str());
  os << line;
  return os.str();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train and evaluate incremental box localizers from image labels", "fdcnet"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Run every task of an experiment");
  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;
  train->add_option("--config", config_path, "Configuration file")->required();
  train->add_option("--set", overrides, "Override a key, e.g. --set train.lr=0.05");
  train->add_flag("--quiet", quiet, "Only print the final table");

  auto* eval = app.add_subcommand("eval", "Re-evaluate a saved task checkpoint");
  std::string run_dir;
  int64_t task = 0;
  eval->add_option("--run", run_dir, "Run directory")->required();
  eval->add_option("--task", task, "Task index (1-based)")->required();
  std::vector<double> taus;
  eval->add_option("--tau", taus, "Binarization thresholds to sweep instead of the run's eval.tau")
      ->delimiter(',')
      ->check(CLI::Range(0.0, 1.0));

  auto* report = app.add_subcommand("report", "Print a run's metrics and optionally plot them");
  std::vector<std::string> compare;
  bool plot = false;
  report->add_option("--run", run_dir, "Run directory")->required();
  report->add_option("--compare", compare, "Further run directories to draw as extra series");
  report->add_flag("--plot", plot, "Write accuracy-vs-task charts into the run directory");

  auto* synth = app.add_subcommand("make-synthetic", "Generate the synthetic shapes dataset");
  SyntheticOptions so;
  std::string synth_out;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--classes", so.n_classes, "Number of classes")->capture_default_str();
  synth->add_option("--train", so.per_class_train, "Training images per class")->capture_default_str();
  synth->add_option("--test", so.per_class_test, "Test images per class")->capture_default_str();
  synth->add_option("--size", so.image_size, "Image side in pixels")->capture_default_str();
  synth->add_option("--seed", so.seed, "Random seed")->capture_default_str();

  auto* selfcheck = app.add_subcommand("selfcheck", "Run the oracle and invariant suites");
  uint64_t check_seed = 0;
  selfcheck->add_option("--seed", check_seed, "Seed for the random instances")->capture_default_str();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) {
      auto config = Config::load(config_path);
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
        config.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      auto result = run_experiment(config, quiet ? nullptr : &err);
      out << format_report(result);
    } else if (*eval) {
      if (taus.empty()) {
        out << format_record(evaluate_checkpoint(run_dir, task));
      } else {
        for (double tau : taus) out << "tau " << tau << ": " << format_record(evaluate_checkpoint(run_dir, task, tau));
      }
    } else if (*report) {
      std::vector<IncrementalReport> reports;
      reports.push_back(IncrementalReport::from_json(read_file(fs::path(run_dir) / "report.json")));
      for (const auto& dir : compare) {
        reports.push_back(IncrementalReport::from_json(read_file(fs::path(dir) / "report.json")));
      }
      for (const auto& r : reports) out << format_report(r) << "\n";
      if (plot) {
        for (const auto& p : write_plots(reports, run_dir)) out << "wrote " << p.string() << "\n";
      }
    } else if (*synth) {
      auto manifest = synth_generate(synth_out, so);
      out << "wrote " << manifest.entries.size() << " images and " << (fs::path(synth_out) / "manifest.tsv").string()
          << "\n";
    } else if (*selfcheck) {
      auto results = checks::run_selfcheck(check_seed, &out);
      bool ok = true;
      for (const auto& r : results) ok = ok && r.passed;
      out << (ok ? "selfcheck passed" : "selfcheck FAILED") << "\n";
      return ok ? kExitOk : kExitRuntime;
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace fdcnet
