#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "mtdagger/errors.hpp"
#include "mtdagger/experiment_config.hpp"
#include "mtdagger/experiment_harness.hpp"
#include "support/oracles.hpp"

using namespace mtdagger;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::size_t columns(const std::string& line) {
  return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
}

/// Fresh scratch directory removed on scope exit.
struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("mtdagger_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ExperimentConfig fast_config() {
  ExperimentConfig c = preset_config("default");
  c.rounds = 3;
  c.training.steps = 60;
  c.bc_train_steps = 60;
  c.eval_episodes = 5;
  c.num_seeds = 1;
  return c;
}

}  // namespace

TEST_CASE("presets") {
  SUBCASE("drawer analog") {
    const ExperimentConfig c = preset_config("isaac-drawer-analog");
    CHECK(c.rounds == 10);
    CHECK(c.min_per_task == 5);
    CHECK(c.temperature == 0.5);
    CHECK(c.budget_per_round == 30 * c.suite.num_tasks);
    CHECK(c.initial_demos_per_task == 30);
  }
  SUBCASE("state and pixel analogs") {
    const ExperimentConfig state = preset_config("metaworld-state-analog");
    CHECK(state.suite.num_tasks == 36);
    CHECK(state.budget_per_round == 108);
    CHECK(state.initial_demos_per_task == 3);
    const ExperimentConfig pixel = preset_config("metaworld-pixel-analog");
    CHECK(pixel.budget_per_round == 720);
    CHECK(pixel.initial_demos_per_task == 40);
  }
  SUBCASE("shared hyperparameters") {
    for (const auto& name : preset_names()) {
      const ExperimentConfig c = preset_config(name);
      CAPTURE(name);
      CHECK(c.filter.process_noise == 0.03);
      CHECK(c.filter.base_measurement_noise == 0.5);
      CHECK(c.epsilon.epsilon == 0.5);
      CHECK(c.epsilon.decay == 0.5);
      CHECK(c.epsilon.floor == 0.0);
      CHECK(c.prior.estimate == 0.5);
      CHECK(c.prior.variance == 0.25);
      CHECK_NOTHROW(c.validate());
    }
  }
  SUBCASE("unknown preset") { CHECK_THROWS_AS(preset_config("mujoco"), ValidationError); }
}

TEST_CASE("config validation and strict parsing") {
  SUBCASE("infeasible budget") {
    try {
      parse_config("dagger:\n  budget_per_round: 10\n");
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("N * n_min") != std::string::npos);
    }
    ExperimentConfig c = preset_config("default");
    CHECK_THROWS_AS(apply_overrides(c, {{"dagger.budget_per_round", "10"}}), ValidationError);
  }
  SUBCASE("misspelled key") {
    try {
      parse_config("preset: default\ndagger:\n  temprature: 0.7\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
      CHECK(std::string(e.what()).find("temperature") != std::string::npos);
    }
    ExperimentConfig c = preset_config("default");
    CHECK_THROWS_AS(apply_overrides(c, {{"dagger.temprature", "0.7"}}), ParseError);
  }
  SUBCASE("malformed values") {
    CHECK_THROWS_AS(parse_config("dagger:\n  rounds: many\n"), ParseError);
    CHECK_THROWS_AS(parse_config("dagger: [1, 2\n"), ParseError);
    CHECK_THROWS_AS(parse_config("epsilon:\n  initial: 1.5\n"), ValidationError);
    CHECK_THROWS_AS(parse_config("dagger:\n  rounds: -1\n"), ValidationError);
    CHECK_THROWS_AS(parse_config("dagger:\n  temperature: 0\n"), ValidationError);
  }
  SUBCASE("overrides on top of a preset") {
    const ExperimentConfig c =
        parse_config("preset: isaac-drawer-analog\nmethod: MTDAgger-PG\ndagger:\n  temperature: 0.25\n");
    CHECK(c.preset == "isaac-drawer-analog");
    CHECK(c.method == Method::kPerformanceGain);
    CHECK(c.temperature == 0.25);
    CHECK(c.min_per_task == 5);
  }
  SUBCASE("per-tier start spread") {
    const ExperimentConfig c = parse_config(
        "suite:\n  num_tasks: 2\n  tiers:\n"
        "    - {name: a, count: 1, observation_noise_std: 0.0, start_spread: 0.3}\n"
        "    - {name: b, count: 1}\n");
    REQUIRE(c.suite.difficulty_profile.size() == 2);
    CHECK(c.suite.difficulty_profile[0].start_spread == 0.3);
    CHECK_FALSE(c.suite.difficulty_profile[1].start_spread.has_value());
    const SynthSuite suite = build_suite(c.suite);
    CHECK(suite.task(0).spec.start_spread == 0.3);
    CHECK(suite.task(1).spec.start_spread == c.suite.start_spread);
    const ExperimentConfig again = parse_config(serialize_config(c));
    CHECK(again.suite.difficulty_profile[0].start_spread == 0.3);
    CHECK_FALSE(again.suite.difficulty_profile[1].start_spread.has_value());
  }
}

TEST_CASE("config serialization is a fixpoint") {
  for (const auto& name : preset_names()) {
    const std::string once = serialize_config(preset_config(name));
    CAPTURE(name);
    CHECK(serialize_config(parse_config(once)) == once);
  }
  gen::Engine g(3);
  for (int trial = 0; trial < 200; ++trial) {
    ExperimentConfig c = preset_config("default");
    apply_overrides(c, {{"dagger.temperature", std::to_string(gen::uniform(g, 0.01, 5.0))},
                        {"training.learning_rate", std::to_string(gen::uniform(g, 1e-5, 1e-1))},
                        {"dagger.rounds", std::to_string(gen::integer(g, 0, 20))},
                        {"epsilon.initial", std::to_string(gen::uniform(g, 0.0, 1.0))},
                        {"filter.process_noise", std::to_string(gen::uniform(g, 0.0, 0.2))},
                        {"master_seed", std::to_string(gen::integer(g, 0, 1 << 30))}});
    // A double with a long expansion must survive the text round trip.
    c.filter.base_measurement_noise = gen::uniform(g, 0.01, 2.0);
    const std::string once = serialize_config(c);
    const ExperimentConfig parsed = parse_config(once);
    CHECK(parsed.filter.base_measurement_noise == c.filter.base_measurement_noise);
    CHECK(serialize_config(parsed) == once);
  }
}

TEST_CASE("default output root follows the environment") {
  const char* saved = std::getenv("MTDAGGER_OUTPUT_ROOT");
  const std::string saved_value = saved ? saved : "";
  ::setenv("MTDAGGER_OUTPUT_ROOT", "/tmp/somewhere", 1);
  CHECK(default_output_root() == fs::path("/tmp/somewhere"));
  ::setenv("MTDAGGER_OUTPUT_ROOT", "", 1);
  CHECK(default_output_root() == fs::path("runs"));
  ::unsetenv("MTDAGGER_OUTPUT_ROOT");
  CHECK(default_output_root() == fs::path("runs"));
  if (saved) ::setenv("MTDAGGER_OUTPUT_ROOT", saved_value.c_str(), 1);
}

TEST_CASE("run directory layout and row counts") {
  TempDir tmp;
  const ExperimentConfig c = fast_config();
  const ExperimentOutput out = run_experiment(c, tmp.path / "run");
  const fs::path seed_dir = tmp.path / "run" / ("seed_" + std::to_string(c.master_seed));
  CHECK(fs::exists(tmp.path / "run" / "config.yaml"));
  CHECK(fs::exists(tmp.path / "run" / "summary.json"));
  REQUIRE(fs::exists(seed_dir / "rounds.csv"));

  const auto rows = lines_of(slurp(seed_dir / "rounds.csv"));
  REQUIRE(rows.size() == static_cast<std::size_t>(c.rounds + 2));
  CHECK(rows[0] == lines_of(rounds_csv_header(12))[0]);
  for (const auto& row : rows) CHECK(columns(row) == columns(rows[0]));

  const auto task_rows = lines_of(slurp(seed_dir / "task_rounds.csv"));
  CHECK(task_rows.size() == static_cast<std::size_t>(1 + 12 * (c.rounds + 1)));
  for (const auto& row : task_rows) CHECK(columns(row) == columns(task_rows[0]));

  CHECK(parse_config(slurp(tmp.path / "run" / "config.yaml")).master_seed == c.master_seed);
  const auto summary = nlohmann::json::parse(slurp(tmp.path / "run" / "summary.json"));
  CHECK(summary.contains("methods"));
  CHECK(out.runs.at(Method::kTaskNeed).size() == 1);
}

TEST_CASE("identical configs write identical bytes") {
  TempDir tmp;
  ExperimentConfig c = fast_config();
  c.num_seeds = 2;
  run_experiment(c, tmp.path / "a");
  run_experiment(c, tmp.path / "b");
  for (const char* file : {"rounds.csv", "task_rounds.csv", "runlog.jsonl"}) {
    for (int s = 0; s < 2; ++s) {
      const std::string seed_dir = "seed_" + std::to_string(c.master_seed + s);
      CAPTURE(file);
      CHECK(slurp(tmp.path / "a" / seed_dir / file) == slurp(tmp.path / "b" / seed_dir / file));
    }
  }
  CHECK(slurp(tmp.path / "a" / "summary.json") == slurp(tmp.path / "b" / "summary.json"));

  const std::string before = slurp(tmp.path / "a" / "seed_1" / "rounds.csv");
  run_experiment(c, tmp.path / "a");
  CHECK(slurp(tmp.path / "a" / "seed_1" / "rounds.csv") == before);

  ExperimentConfig other = c;
  other.master_seed = 7;
  run_experiment(other, tmp.path / "c");
  CHECK(slurp(tmp.path / "c" / "seed_7" / "rounds.csv") != before);
}

TEST_CASE("run logs replay") {
  TempDir tmp;
  const ExperimentConfig c = fast_config();
  run_experiment(c, tmp.path / "run");
  const fs::path log = tmp.path / "run" / "seed_1" / "runlog.jsonl";

  SUBCASE("complete log") {
    const ReplayReport r = replay_runlog(log);
    CHECK(r.identical);
    CHECK_FALSE(r.partial);
    CHECK(r.rounds_logged == c.rounds + 1);
    CHECK(r.rounds_replayed == c.rounds + 1);
  }
  SUBCASE("interrupted log is a valid prefix") {
    const auto lines = lines_of(slurp(log));
    const fs::path cut = tmp.path / "cut.jsonl";
    {
      std::ofstream out(cut, std::ios::binary);
      for (int i = 0; i < 3; ++i) out << lines[static_cast<std::size_t>(i)] << '\n';
      out << lines[3].substr(0, lines[3].size() / 2);  // torn write
    }
    const ReplayReport r = replay_runlog(cut);
    CHECK(r.identical);
    CHECK(r.partial);
    CHECK(r.rounds_logged == 2);
  }
  SUBCASE("tampered round") {
    auto lines = lines_of(slurp(log));
    auto entry = nlohmann::json::parse(lines[2]);
    entry["mean_success"] = entry["mean_success"].get<double>() + 0.5;
    lines[2] = entry.dump();
    const fs::path bad = tmp.path / "bad.jsonl";
    {
      std::ofstream out(bad, std::ios::binary);
      for (const auto& l : lines) out << l << '\n';
    }
    const ReplayReport r = replay_runlog(bad);
    CHECK_FALSE(r.identical);
    CHECK(r.first_difference.find("round 1") != std::string::npos);
  }
  SUBCASE("not a run log") {
    const fs::path junk = tmp.path / "junk.jsonl";
    std::ofstream(junk) << "{\"type\": \"round\"}\n";
    CHECK_THROWS_AS(replay_runlog(junk), ParseError);
    CHECK_THROWS_AS(replay_runlog(tmp.path / "missing.jsonl"), IoError);
  }
}

TEST_CASE("comparison summary") {
  TempDir tmp;
  const ExperimentConfig c = fast_config();
  const std::vector<Method> methods = {Method::kUniformDAgger, Method::kTaskNeed,
                                       Method::kPerformanceGain, Method::kBC};
  const ExperimentOutput out = run_comparison(c, methods, tmp.path / "cmp");
  CHECK(out.runs.size() == 4);
  const std::string table = summary_table(c, out.runs);
  for (Method m : methods) {
    CHECK(table.find(std::string(to_string(m))) != std::string::npos);
    CHECK(fs::exists(tmp.path / "cmp" / std::string(to_string(m)) / "seed_1" / "rounds.csv"));
  }
  const auto summary = nlohmann::json::parse(slurp(tmp.path / "cmp" / "summary.json"));
  for (Method m : methods) {
    const auto& entry = summary["methods"][std::string(to_string(m))];
    REQUIRE(entry["demos_to_threshold"].size() == c.thresholds.size());
    for (std::size_t t = 0; t < c.thresholds.size(); ++t) {
      const ThresholdResult expected = demos_to_threshold(out.runs.at(m), c.thresholds[t]);
      const auto& got = entry["demos_to_threshold"][t];
      CAPTURE(to_string(m));
      CHECK(got["threshold"].get<double>() == c.thresholds[t]);
      CHECK(got["reached"].get<bool>() == expected.reached);
      if (expected.reached) CHECK(got["mean"].get<double>() == expected.mean);
    }
  }
  CHECK(summary["methods"]["BC"]["allocation_churn"].is_null());
}

TEST_CASE("suite description lists every task") {
  const SynthSuite suite = build_suite(default_suite_config(12));
  const auto lines = lines_of(describe_suite(suite));
  int task_lines = 0;
  for (const auto& l : lines) task_lines += l.find("easy") != std::string::npos ||
                                            l.find("medium") != std::string::npos ||
                                            l.find("hard") != std::string::npos;
  CHECK(task_lines == 12);
}
