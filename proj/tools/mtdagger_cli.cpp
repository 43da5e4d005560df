#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtdagger/errors.hpp"
#include "mtdagger/experiment_config.hpp"
#include "mtdagger/experiment_harness.hpp"

namespace fs = std::filesystem;
using namespace mtdagger;

namespace {

struct ConfigOptions {
  std::string config_path;
  std::string preset;
  std::string method;
  std::optional<std::uint64_t> seed;
  std::optional<int> seeds;

  void attach(CLI::App* app, bool with_method) {
    app->add_option("-c,--config", config_path, "Experiment config file (YAML)")
        ->check(CLI::ExistingFile);
    app->add_option("-p,--preset", preset, "Named preset used when no config file is given");
    if (with_method) app->add_option("-m,--method", method, "Method to run");
    app->add_option("--seed", seed, "Master seed");
    app->add_option("--seeds", seeds, "Number of consecutive seeds");
    app->allow_extras();
    app->footer("Any config key can be overridden as --section.key=value.");
  }

  ExperimentConfig resolve(const std::vector<std::string>& extras) const {
    ExperimentConfig config;
    if (!config_path.empty()) {
      if (!preset.empty()) throw ValidationError("--preset and --config are mutually exclusive");
      config = load_config(config_path);
    } else {
      config = preset_config(preset.empty() ? "default" : preset);
    }
    if (!method.empty()) config.method = method_from_string(method);
    if (seed) config.master_seed = *seed;
    if (seeds) config.num_seeds = *seeds;
    apply_overrides(config, parse_overrides(extras));
    config.validate();
    return config;
  }

  static std::map<std::string, std::string> parse_overrides(const std::vector<std::string>& args) {
    std::map<std::string, std::string> out;
    for (std::size_t i = 0; i < args.size(); ++i) {
      const std::string& arg = args[i];
      if (arg.rfind("--", 0) != 0 || arg.size() <= 2) {
        throw ParseError("unexpected argument '" + arg + "'", 0);
      }
      const std::string body = arg.substr(2);
      const auto eq = body.find('=');
      if (eq != std::string::npos) {
        out[body.substr(0, eq)] = body.substr(eq + 1);
      } else if (i + 1 < args.size()) {
        out[body] = args[++i];
      } else {
        throw ParseError("override --" + body + " needs a value", 0);
      }
    }
    return out;
  }
};

std::vector<Method> parse_methods(const std::string& list) {
  std::vector<Method> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    const std::string name =
        list.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!name.empty()) out.push_back(method_from_string(name));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

fs::path output_dir(const std::string& out, const std::string& name) {
  return out.empty() ? default_output_root() / name : fs::path(out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multitask DAgger experiments on a synthetic goal-reaching suite"};
  app.require_subcommand(1);

  ConfigOptions run_opts;
  std::string run_out;
  auto* run = app.add_subcommand("run", "Run one method over the configured seeds");
  run_opts.attach(run, true);
  run->add_option("-o,--out", run_out, "Run directory (default: $MTDAGGER_OUTPUT_ROOT/<name>)");

  ConfigOptions cmp_opts;
  std::string cmp_out;
  std::string cmp_methods = "BC,UniformDAgger,MTDAgger-TN,MTDAgger-PG";
  auto* compare = app.add_subcommand("compare", "Run several methods and tabulate demos-to-threshold");
  cmp_opts.attach(compare, false);
  compare->add_option("-o,--out", cmp_out, "Output directory");
  compare->add_option("--methods", cmp_methods, "Comma-separated method names")
      ->capture_default_str();

  auto* suite = app.add_subcommand("suite", "Inspect the synthetic suite");
  suite->require_subcommand(1);
  ConfigOptions describe_opts;
  auto* describe = suite->add_subcommand("describe", "Print the resolved task table");
  describe_opts.attach(describe, false);

  std::string runlog;
  auto* replay = app.add_subcommand("replay", "Re-execute a run log and compare every round");
  replay->add_option("runlog", runlog, "Path to runlog.jsonl")->required()->check(CLI::ExistingFile);

  ConfigOptions show_opts;
  auto* show = app.add_subcommand("config", "Print the resolved config");
  show_opts.attach(show, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const ExperimentConfig config = run_opts.resolve(run->remaining());
      const fs::path dir = output_dir(run_out, default_run_name(config));
      const ExperimentOutput output = run_experiment(config, dir);
      std::cout << summary_table(config, output.runs);
      std::cout << "wrote " << dir.string() << "\n";
      for (const auto& r : output.runs.begin()->second) {
        if (r.aborted) {
          std::cerr << "seed " << r.seed << " aborted: " << r.error << "\n";
          return 1;
        }
      }
    } else if (compare->parsed()) {
      const ExperimentConfig config = cmp_opts.resolve(compare->remaining());
      const std::vector<Method> methods = parse_methods(cmp_methods);
      const fs::path dir =
          output_dir(cmp_out, config.preset + "_compare_s" + std::to_string(config.master_seed));
      const ExperimentOutput output = run_comparison(config, methods, dir);
      std::cout << summary_table(config, output.runs);
      std::cout << "wrote " << dir.string() << "\n";
    } else if (describe->parsed()) {
      const ExperimentConfig config = describe_opts.resolve(describe->remaining());
      std::cout << describe_suite(build_suite(config.suite));
    } else if (replay->parsed()) {
      const ReplayReport report = replay_runlog(runlog);
      if (!report.identical) {
        std::cout << "mismatch: " << report.first_difference << "\n";
        return 1;
      }
      if (report.partial) {
        std::cout << "identical prefix: " << report.rounds_logged << " of " << report.rounds_replayed
                  << " rounds (log ends early)\n";
      } else {
        std::cout << "identical: " << report.rounds_replayed << " rounds\n";
      }
    } else if (show->parsed()) {
      std::cout << serialize_config(show_opts.resolve(show->remaining()));
    }
  } catch (const ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
