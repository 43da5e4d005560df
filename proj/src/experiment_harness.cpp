#include "mtdagger/experiment_harness.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "mtdagger/errors.hpp"

namespace mtdagger {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out = open_output(path);
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string tier_of(const SuiteConfig& suite, int task) {
  int first = 0;
  for (const auto& tier : suite.difficulty_profile) {
    if (task < first + tier.count) return tier.name;
    first += tier.count;
  }
  return "";
}

json round_json(const RoundRecord& record, const CurvePoint& point) {
  json tasks = json::array();
  for (std::size_t i = 0; i < record.per_task.size(); ++i) {
    const auto& m = record.per_task[i];
    tasks.push_back({{"raw_rate", m.raw_success.raw_rate},
                     {"rollouts", m.raw_success.rollout_count},
                     {"successes", m.successes},
                     {"timesteps", m.timesteps},
                     {"kalman_estimate", m.kalman.estimate},
                     {"kalman_variance", m.kalman.variance},
                     {"need_input", m.need_input},
                     {"gain_input", m.gain_input},
                     {"loss_start", m.loss_start},
                     {"loss_end", m.loss_end},
                     {"gain", m.gain},
                     {"eval_success", point.per_task_success.at(i)}});
  }
  return {{"type", "round"},
          {"round", record.round_index},
          {"epsilon", record.epsilon_used},
          {"bootstrap_uniform", record.bootstrap_uniform},
          {"measurement_source_round", record.measurement_source_round},
          {"gain_source_round", record.gain_source_round},
          {"dataset_size", record.dataset_size},
          {"dataset_episodes", record.dataset_episodes},
          {"cumulative_demos_per_task", point.cumulative_demos_per_task},
          {"cumulative_timesteps", point.cumulative_timesteps},
          {"mean_success", point.mean_success},
          {"allocation",
           {{"counts", record.allocation.counts},
            {"probabilities", record.allocation.probabilities},
            {"raw_metrics", record.allocation.raw_metrics},
            {"normalized_scores", record.allocation.normalized_scores}}},
          {"tasks", tasks}};
}

struct SeedFiles {
  std::ofstream rounds;
  std::ofstream task_rounds;
  std::ofstream runlog;
};

void flush_checked(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

MethodRun run_seed_to_dir(Method method, const SynthSuite& suite, const ExperimentConfig& config,
                          std::uint64_t seed, const fs::path& dir) {
  make_dirs(dir);
  const fs::path rounds_path = dir / "rounds.csv";
  const fs::path tasks_path = dir / "task_rounds.csv";
  const fs::path log_path = dir / "runlog.jsonl";
  SeedFiles files{open_output(rounds_path), open_output(tasks_path), open_output(log_path)};

  files.rounds << rounds_csv_header(suite.num_tasks());
  files.task_rounds << task_rounds_csv_header();
  const json header = {{"type", "header"},
                       {"schema_version", kOutputSchemaVersion},
                       {"library_version", kLibraryVersion},
                       {"method", to_string(method)},
                       {"seed", seed},
                       {"config", serialize_config(config)}};
  files.runlog << header.dump() << '\n';
  flush_checked(files.rounds, rounds_path);
  flush_checked(files.task_rounds, tasks_path);
  flush_checked(files.runlog, log_path);

  RunHooks hooks;
  hooks.on_round = [&](const RoundRecord& record, const CurvePoint& point) {
    files.rounds << rounds_csv_row(record, point);
    files.task_rounds << task_rounds_csv_rows(record, point);
    files.runlog << round_json(record, point).dump() << '\n';
    flush_checked(files.rounds, rounds_path);
    flush_checked(files.task_rounds, tasks_path);
    flush_checked(files.runlog, log_path);
  };
  MethodRun run = run_method_seed(method, suite, config, seed, hooks);

  json final_line = {{"type", "final"}, {"aborted", run.aborted}, {"error", run.error}};
  if (!run.curve.empty()) {
    final_line["final_success"] = run.curve.back().per_task_success;
    final_line["mean_success"] = run.curve.back().mean_success;
  }
  files.runlog << final_line.dump() << '\n';
  flush_checked(files.runlog, log_path);
  return run;
}

std::vector<MethodRun> run_method_to_dir(Method method, const SynthSuite& suite,
                                         const ExperimentConfig& config, const fs::path& dir) {
  std::vector<MethodRun> runs;
  for (std::uint64_t seed : config.seeds()) {
    runs.push_back(
        run_seed_to_dir(method, suite, config, seed, dir / ("seed_" + std::to_string(seed))));
  }
  return runs;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::vector<double> final_means(const std::vector<MethodRun>& runs) {
  std::vector<double> out;
  for (const auto& r : runs) {
    if (!r.curve.empty()) out.push_back(r.curve.back().mean_success);
  }
  return out;
}

double mean_churn(const std::vector<MethodRun>& runs) {
  double total = 0.0;
  for (const auto& r : runs) total += mean_allocation_churn(r);
  return runs.empty() ? 0.0 : total / static_cast<double>(runs.size());
}

}  // namespace

fs::path default_output_root() {
  const char* root = std::getenv("MTDAGGER_OUTPUT_ROOT");
  if (root != nullptr && *root != '\0') return fs::path(root);
  return fs::path("runs");
}

std::string default_run_name(const ExperimentConfig& config) {
  return config.preset + "_" + std::string(to_string(config.method)) + "_s" +
         std::to_string(config.master_seed);
}

std::string rounds_csv_header(int num_tasks) {
  std::string out = "round,cumulative_demos_per_task,mean_success";
  for (int i = 0; i < num_tasks; ++i) out += ",success_" + std::to_string(i);
  for (int i = 0; i < num_tasks; ++i) out += ",alloc_" + std::to_string(i);
  return out + "\n";
}

std::string rounds_csv_row(const RoundRecord& record, const CurvePoint& point) {
  std::string out = std::to_string(record.round_index) + "," +
                    num(point.cumulative_demos_per_task) + "," + num(point.mean_success);
  for (double s : point.per_task_success) out += "," + num(s);
  for (int c : record.allocation.counts) out += "," + std::to_string(c);
  return out + "\n";
}

std::string task_rounds_csv_header() {
  return "round,task,allocated,probability,raw_rate,rollouts,successes,timesteps,"
         "kalman_estimate,kalman_variance,need_input,gain_input,loss_start,loss_end,gain,"
         "eval_success\n";
}

std::string task_rounds_csv_rows(const RoundRecord& record, const CurvePoint& point) {
  std::string out;
  for (std::size_t i = 0; i < record.per_task.size(); ++i) {
    const auto& m = record.per_task[i];
    const auto& plan = record.allocation;
    const double prob = i < plan.probabilities.size() ? plan.probabilities[i] : 0.0;
    const int count = i < plan.counts.size() ? plan.counts[i] : 0;
    out += std::to_string(record.round_index) + "," + std::to_string(i) + "," +
           std::to_string(count) + "," + num(prob) + "," + num(m.raw_success.raw_rate) + "," +
           std::to_string(m.raw_success.rollout_count) + "," + std::to_string(m.successes) + "," +
           std::to_string(m.timesteps) + "," + num(m.kalman.estimate) + "," +
           num(m.kalman.variance) + "," + num(m.need_input) + "," + num(m.gain_input) + "," +
           num(m.loss_start) + "," + num(m.loss_end) + "," + num(m.gain) + "," +
           num(point.per_task_success.at(i)) + "\n";
  }
  return out;
}

ExperimentOutput run_experiment(const ExperimentConfig& config, const fs::path& dir) {
  config.validate();
  const SynthSuite suite = build_suite(config.suite);
  make_dirs(dir);
  write_file(dir / "config.yaml", serialize_config(config));
  ExperimentOutput output;
  output.directory = dir;
  output.runs[config.method] = run_method_to_dir(config.method, suite, config, dir);
  write_file(dir / "summary.json", summary_json(config, output.runs));
  return output;
}

ExperimentOutput run_comparison(const ExperimentConfig& config, std::span<const Method> methods,
                                const fs::path& dir) {
  config.validate();
  if (methods.empty()) throw ValidationError("compare needs at least one method");
  const SynthSuite suite = build_suite(config.suite);
  make_dirs(dir);
  write_file(dir / "config.yaml", serialize_config(config));
  ExperimentOutput output;
  output.directory = dir;
  for (Method m : methods) {
    output.runs[m] = run_method_to_dir(m, suite, config, dir / std::string(to_string(m)));
  }
  write_file(dir / "summary.json", summary_json(config, output.runs));
  return output;
}

std::string summary_json(const ExperimentConfig& config,
                         const std::map<Method, std::vector<MethodRun>>& runs) {
  json doc;
  doc["schema_version"] = kOutputSchemaVersion;
  doc["library_version"] = kLibraryVersion;
  doc["preset"] = config.preset;
  doc["num_tasks"] = config.suite.num_tasks;
  doc["seeds"] = config.seeds();
  doc["thresholds"] = config.thresholds;

  json methods = json::object();
  for (const auto& [method, method_runs] : runs) {
    json entry;
    json seeds = json::array();
    int aborted = 0;
    for (const auto& r : method_runs) {
      seeds.push_back(r.seed);
      if (r.aborted) ++aborted;
    }
    entry["seeds"] = seeds;
    entry["aborted_runs"] = aborted;
    json thresholds = json::array();
    for (double th : config.thresholds) {
      const ThresholdResult t = demos_to_threshold(method_runs, th);
      json per_seed = json::array();
      for (const auto& s : t.per_seed) per_seed.push_back(s ? json(*s) : json(nullptr));
      thresholds.push_back({{"threshold", th},
                            {"reached", t.reached},
                            {"mean", t.reached ? json(t.mean) : json(nullptr)},
                            {"stddev", t.reached ? json(t.stddev) : json(nullptr)},
                            {"per_seed", per_seed}});
    }
    entry["demos_to_threshold"] = thresholds;
    const auto [mean, sd] = mean_std(final_means(method_runs));
    entry["final_mean_success"] = {{"mean", mean}, {"stddev", sd}};
    entry["allocation_churn"] = method == Method::kBC ? json(nullptr) : json(mean_churn(method_runs));
    methods[std::string(to_string(method))] = entry;
  }
  doc["methods"] = methods;

  bool any_curve = false;
  for (const auto& [m, v] : runs) {
    for (const auto& r : v) any_curve = any_curve || !r.curve.empty();
  }
  if (any_curve) {
    const HardestTaskReport hardest = hardest_task_report(runs);
    json finals = json::object();
    for (const auto& [m, v] : hardest.final_task_success) finals[std::string(to_string(m))] = v;
    doc["hardest_task"] = {{"task", hardest.task},
                           {"tier", tier_of(config.suite, hardest.task)},
                           {"final_success", finals}};
  } else {
    doc["hardest_task"] = nullptr;
  }
  return doc.dump(2) + "\n";
}

std::string summary_table(const ExperimentConfig& config,
                          const std::map<Method, std::vector<MethodRun>>& runs) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-18s", "method");
  out << buf;
  for (double th : config.thresholds) {
    std::snprintf(buf, sizeof buf, " %16s", ("demos@" + num(th * 100) + "%").c_str());
    out << buf;
  }
  std::snprintf(buf, sizeof buf, " %16s %8s\n", "final success", "churn");
  out << buf;
  for (const auto& [method, method_runs] : runs) {
    std::snprintf(buf, sizeof buf, "%-18s", std::string(to_string(method)).c_str());
    out << buf;
    for (double th : config.thresholds) {
      const ThresholdResult t = demos_to_threshold(method_runs, th);
      if (t.reached) {
        std::snprintf(buf, sizeof buf, " %8.2f +- %5.2f", t.mean, t.stddev);
      } else {
        std::snprintf(buf, sizeof buf, " %16s", "unreached");
      }
      out << buf;
    }
    const auto [mean, sd] = mean_std(final_means(method_runs));
    std::snprintf(buf, sizeof buf, " %8.3f +- %4.3f", mean, sd);
    out << buf;
    if (method == Method::kBC) {
      std::snprintf(buf, sizeof buf, " %8s\n", "-");
    } else {
      std::snprintf(buf, sizeof buf, " %8.4f\n", mean_churn(method_runs));
    }
    out << buf;
  }
  bool any_curve = false;
  for (const auto& [m, v] : runs) {
    for (const auto& r : v) any_curve = any_curve || !r.curve.empty();
  }
  if (any_curve) {
    const HardestTaskReport hardest = hardest_task_report(runs);
    out << "hardest task: " << hardest.task << " (" << tier_of(config.suite, hardest.task)
        << "), final success";
    for (const auto& [m, v] : hardest.final_task_success) {
      std::snprintf(buf, sizeof buf, " %s=%.3f", std::string(to_string(m)).c_str(), v);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

std::string describe_suite(const SynthSuite& suite) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%4s  %-10s %8s %8s %8s %8s %8s\n", "id", "tier", "noise",
                "gain", "rho", "expert", "attempts");
  out << buf;
  for (const auto& task : suite.tasks()) {
    const auto& s = task.spec;
    const Eigen::MatrixXd closed =
        s.dynamics_gain * Eigen::MatrixXd::Identity(s.state_dim, s.state_dim) - s.expert_gain;
    const double rho = closed.eigenvalues().cwiseAbs().maxCoeff();
    std::snprintf(buf, sizeof buf, "%4d  %-10s %8.4f %8.4f %8.4f %8.3f %8d\n", s.task_id,
                  s.tier.c_str(), s.observation_noise_std, s.dynamics_gain, rho,
                  task.expert_success, task.build_attempts);
    out << buf;
  }
  return out.str();
}

ReplayReport replay_runlog(const fs::path& runlog) {
  std::ifstream in(runlog, std::ios::binary);
  if (!in) throw IoError("cannot open " + runlog.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(runlog.string() + " is empty", 0);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(runlog.string() + ": malformed header: " + e.what(), 1);
  }
  if (header.value("type", "") != "header") {
    throw ParseError(runlog.string() + ": first line is not a run header", 1);
  }
  const ExperimentConfig config = parse_config(header.at("config").get<std::string>());
  const Method method = method_from_string(header.at("method").get<std::string>());
  const auto seed = header.at("seed").get<std::uint64_t>();

  std::vector<json> logged;
  bool complete = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json entry;
    try {
      entry = json::parse(line);
    } catch (const json::exception&) {
      break;  // a torn final line from an interrupted run
    }
    const std::string type = entry.value("type", "");
    if (type == "round") logged.push_back(std::move(entry));
    if (type == "final") complete = true;
  }

  ReplayReport report;
  report.rounds_logged = static_cast<int>(logged.size());
  report.partial = !complete;
  const SynthSuite suite = build_suite(config.suite);
  std::vector<json> replayed;
  RunHooks hooks;
  hooks.on_round = [&](const RoundRecord& record, const CurvePoint& point) {
    replayed.push_back(round_json(record, point));
  };
  run_method_seed(method, suite, config, seed, hooks);
  report.rounds_replayed = static_cast<int>(replayed.size());

  const std::size_t common = std::min(logged.size(), replayed.size());
  for (std::size_t k = 0; k < common; ++k) {
    if (logged[k] != replayed[k]) {
      const json diff = json::diff(logged[k], replayed[k]);
      report.first_difference = "round " + std::to_string(k) + ": " +
                                (diff.empty() ? std::string("differs") : diff.front().dump());
      return report;
    }
  }
  if (logged.size() > replayed.size() || (complete && logged.size() != replayed.size())) {
    report.first_difference = "log has " + std::to_string(logged.size()) +
                              " rounds, replay produced " + std::to_string(replayed.size());
    return report;
  }
  report.identical = true;
  return report;
}

}  // namespace mtdagger
