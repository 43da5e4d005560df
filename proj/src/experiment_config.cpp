#include "mtdagger/experiment_config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "mtdagger/errors.hpp"

namespace mtdagger {

namespace {

constexpr std::pair<Method, std::string_view> kMethodNames[] = {
    {Method::kBC, "BC"},
    {Method::kUniformDAgger, "UniformDAgger"},
    {Method::kTaskNeed, "MTDAgger-TN"},
    {Method::kPerformanceGain, "MTDAgger-PG"},
    {Method::kTaskNeedNoKalman, "MTDAgger-TN-noKF"},
};

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, end);
  // Keep floats recognisable as floats when read back by other tools.
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

int line_of(const YAML::Node& node) { return node.Mark().line >= 0 ? node.Mark().line + 1 : 0; }

template <typename T>
T scalar(const YAML::Node& node, const std::string& key) {
  if (!node.IsScalar()) throw ParseError("'" + key + "' expects a scalar value", line_of(node));
  try {
    return node.as<T>();
  } catch (const YAML::BadConversion&) {
    throw ParseError("cannot read '" + key + "' from '" + node.Scalar() + "'", line_of(node));
  }
}

template <typename T>
std::vector<T> sequence(const YAML::Node& node, const std::string& key) {
  std::vector<T> out;
  if (node.IsScalar() && node.Scalar().empty()) return out;
  if (!node.IsSequence()) throw ParseError("'" + key + "' expects a list", line_of(node));
  for (const auto& item : node) out.push_back(scalar<T>(item, key));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const YAML::Node&)>;

struct Field {
  std::string path;
  Setter set;
};

#define MTD_FIELD(path, type, expr) \
  Field { path, [](ExperimentConfig& c, const YAML::Node& n) { expr = scalar<type>(n, path); } }

DifficultyTier parse_tier(const YAML::Node& node);

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      MTD_FIELD("master_seed", std::uint64_t, c.master_seed),
      MTD_FIELD("num_seeds", int, c.num_seeds),
      {"method",
       [](ExperimentConfig& c, const YAML::Node& n) {
         try {
           c.method = method_from_string(scalar<std::string>(n, "method"));
         } catch (const ValidationError& e) {
           throw ParseError(e.what(), line_of(n));
         }
       }},
      MTD_FIELD("dagger.rounds", int, c.rounds),
      MTD_FIELD("dagger.budget_per_round", int, c.budget_per_round),
      MTD_FIELD("dagger.initial_demos_per_task", int, c.initial_demos_per_task),
      MTD_FIELD("dagger.min_per_task", int, c.min_per_task),
      MTD_FIELD("dagger.temperature", double, c.temperature),
      MTD_FIELD("epsilon.initial", double, c.epsilon.epsilon),
      MTD_FIELD("epsilon.decay", double, c.epsilon.decay),
      MTD_FIELD("epsilon.floor", double, c.epsilon.floor),
      MTD_FIELD("filter.process_noise", double, c.filter.process_noise),
      MTD_FIELD("filter.measurement_noise", double, c.filter.base_measurement_noise),
      MTD_FIELD("filter.prior_estimate", double, c.prior.estimate),
      MTD_FIELD("filter.prior_variance", double, c.prior.variance),
      MTD_FIELD("training.steps", int, c.training.steps),
      MTD_FIELD("training.batch_size", int, c.training.batch_size),
      MTD_FIELD("training.learning_rate", double, c.training.learning_rate),
      MTD_FIELD("training.linear_decay", bool, c.training.linear_decay),
      {"training.optimizer",
       [](ExperimentConfig& c, const YAML::Node& n) {
         const auto name = scalar<std::string>(n, "training.optimizer");
         if (name == "adam") {
           c.training.optimizer = TrainingParams::Optimizer::kAdam;
         } else if (name == "sgd") {
           c.training.optimizer = TrainingParams::Optimizer::kSgd;
         } else {
           throw ParseError("unknown optimizer '" + name + "' (adam, sgd)", line_of(n));
         }
       }},
      MTD_FIELD("training.bc_steps", int, c.bc_train_steps),
      {"training.bc_budgets",
       [](ExperimentConfig& c, const YAML::Node& n) {
         c.bc_budgets = sequence<int>(n, "training.bc_budgets");
       }},
      MTD_FIELD("learner.hidden_width", int, c.hidden_width),
      MTD_FIELD("learner.encoder_dim", int, c.encoder_dim),
      MTD_FIELD("learner.embedding_dim", int, c.embedding_dim),
      MTD_FIELD("evaluation.episodes", int, c.eval_episodes),
      {"evaluation.thresholds",
       [](ExperimentConfig& c, const YAML::Node& n) {
         c.thresholds = sequence<double>(n, "evaluation.thresholds");
       }},
      MTD_FIELD("suite.num_tasks", int, c.suite.num_tasks),
      MTD_FIELD("suite.seed", std::uint64_t, c.suite.seed),
      MTD_FIELD("suite.state_dim", int, c.suite.state_dim),
      MTD_FIELD("suite.horizon", int, c.suite.horizon),
      MTD_FIELD("suite.success_radius", double, c.suite.success_radius),
      MTD_FIELD("suite.process_noise_std", double, c.suite.process_noise_std),
      MTD_FIELD("suite.init_radius_min", double, c.suite.init_radius_min),
      MTD_FIELD("suite.init_radius_max", double, c.suite.init_radius_max),
      MTD_FIELD("suite.start_spread", double, c.suite.start_spread),
      MTD_FIELD("suite.divergence_radius", double, c.suite.divergence_radius),
      MTD_FIELD("suite.validation_episodes", int, c.suite.validation_episodes),
      MTD_FIELD("suite.min_expert_success", double, c.suite.min_expert_success),
      {"suite.tiers",
       [](ExperimentConfig& c, const YAML::Node& n) {
         if (!n.IsSequence()) throw ParseError("'suite.tiers' expects a list", line_of(n));
         c.suite.difficulty_profile.clear();
         for (const auto& item : n) c.suite.difficulty_profile.push_back(parse_tier(item));
       }},
  };
  return table;
}

#undef MTD_FIELD

const std::vector<std::string> kTierKeys = {
    "name",          "count",           "observation_noise_std", "dynamics_gain_min",
    "dynamics_gain_max", "contraction_min", "contraction_max",  "coupling",        "bias_norm",
    "start_spread"};

std::string suggestion(std::string_view key, const std::vector<std::string>& candidates) {
  std::string best;
  std::size_t best_d = std::max<std::size_t>(2, key.size() / 3) + 1;
  for (const auto& c : candidates) {
    std::string_view leaf = c;
    if (const auto dot = leaf.rfind('.'); dot != std::string_view::npos) leaf = leaf.substr(dot + 1);
    const std::size_t d = std::min(edit_distance(key, c), edit_distance(key, leaf));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best.empty() ? std::string{} : " (did you mean '" + best + "'?)";
}

[[noreturn]] void unknown_key(const std::string& key, const YAML::Node& at,
                              const std::vector<std::string>& candidates) {
  throw ParseError("unknown key '" + key + "'" + suggestion(key, candidates), line_of(at));
}

DifficultyTier parse_tier(const YAML::Node& node) {
  if (!node.IsMap()) throw ParseError("each tier must be a mapping", line_of(node));
  DifficultyTier tier;
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    const auto& v = kv.second;
    if (key == "name") {
      tier.name = scalar<std::string>(v, key);
    } else if (key == "count") {
      tier.count = scalar<int>(v, key);
    } else if (key == "observation_noise_std") {
      tier.observation_noise_std = scalar<double>(v, key);
    } else if (key == "dynamics_gain_min") {
      tier.dynamics_gain_min = scalar<double>(v, key);
    } else if (key == "dynamics_gain_max") {
      tier.dynamics_gain_max = scalar<double>(v, key);
    } else if (key == "contraction_min") {
      tier.contraction_min = scalar<double>(v, key);
    } else if (key == "contraction_max") {
      tier.contraction_max = scalar<double>(v, key);
    } else if (key == "coupling") {
      tier.coupling = scalar<double>(v, key);
    } else if (key == "bias_norm") {
      tier.bias_norm = scalar<double>(v, key);
    } else if (key == "start_spread") {
      tier.start_spread = scalar<double>(v, key);
    } else {
      unknown_key(key, kv.first, kTierKeys);
    }
  }
  return tier;
}

std::vector<std::string> all_paths() {
  std::vector<std::string> out{"preset"};
  for (const auto& f : fields()) out.push_back(f.path);
  return out;
}

const Field* find_field(std::string_view path) {
  for (const auto& f : fields()) {
    if (f.path == path) return &f;
  }
  return nullptr;
}

bool is_section(std::string_view name) {
  const std::string prefix = std::string(name) + ".";
  return std::any_of(fields().begin(), fields().end(),
                     [&](const Field& f) { return f.path.rfind(prefix, 0) == 0; });
}

// Tracks keys that change derived defaults when set alone.
struct Touched {
  bool num_tasks = false;
  bool tiers = false;

  void note(std::string_view path) {
    if (path == "suite.num_tasks") num_tasks = true;
    if (path == "suite.tiers") tiers = true;
  }

  void finish(ExperimentConfig& c) const {
    if (num_tasks && !tiers) c.suite.difficulty_profile = default_suite_config(c.suite.num_tasks).difficulty_profile;
  }
};

void apply_node(ExperimentConfig& config, const YAML::Node& root) {
  Touched touched;
  const auto candidates = all_paths();
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    if (key == "preset") continue;
    if (const Field* f = find_field(key)) {
      f->set(config, kv.second);
      touched.note(key);
      continue;
    }
    if (!is_section(key)) unknown_key(key, kv.first, candidates);
    if (!kv.second.IsMap()) {
      throw ParseError("section '" + key + "' must be a mapping", line_of(kv.second));
    }
    std::vector<std::string> local;
    for (const auto& f : fields()) {
      if (f.path.rfind(key + ".", 0) == 0) local.push_back(f.path.substr(key.size() + 1));
    }
    for (const auto& sub : kv.second) {
      const auto leaf = sub.first.as<std::string>();
      const std::string path = key + "." + leaf;
      const Field* f = find_field(path);
      if (f == nullptr) unknown_key(leaf, sub.first, local);
      f->set(config, sub.second);
      touched.note(path);
    }
  }
  touched.finish(config);
}

ExperimentConfig base_config() {
  ExperimentConfig c;
  c.suite = default_suite_config(12);
  return c;
}

}  // namespace

std::string_view to_string(Method method) {
  for (const auto& [m, name] : kMethodNames) {
    if (m == method) return name;
  }
  return "unknown";
}

Method method_from_string(std::string_view name) {
  for (const auto& [m, n] : kMethodNames) {
    if (n == name) return m;
  }
  std::string known;
  for (const auto& [m, n] : kMethodNames) known += (known.empty() ? "" : ", ") + std::string(n);
  throw ValidationError("unknown method '" + std::string(name) + "' (" + known + ")");
}

void ExperimentConfig::validate() const {
  const int n = suite.num_tasks;
  if (n < 1) throw ValidationError("suite.num_tasks must be >= 1");
  int tier_total = 0;
  for (const auto& tier : suite.difficulty_profile) {
    if (tier.count < 0) throw ValidationError("tier '" + tier.name + "' has a negative count");
    tier_total += tier.count;
  }
  if (tier_total != n) {
    throw ValidationError("suite tier counts sum to " + std::to_string(tier_total) +
                          " but suite.num_tasks is " + std::to_string(n));
  }
  if (initial_demos_per_task < 1) {
    throw ValidationError("dagger.initial_demos_per_task must be >= 1");
  }
  dagger_config(method, master_seed).validate(n);
  if (bc_train_steps < 0) throw ValidationError("training.bc_steps must be >= 0");
  for (int b : bc_budgets) {
    if (b < 0) throw ValidationError("training.bc_budgets entries must be >= 0");
  }
  if (hidden_width < 0 || encoder_dim < 1 || embedding_dim < 0) {
    throw ValidationError("learner dimensions must be positive (hidden_width may be 0)");
  }
  if (eval_episodes < 1) throw ValidationError("evaluation.episodes must be >= 1");
  for (double t : thresholds) {
    if (!(t > 0.0 && t <= 1.0)) throw ValidationError("evaluation.thresholds must lie in (0, 1]");
  }
  if (num_seeds < 1) throw ValidationError("num_seeds must be >= 1");
}

DaggerConfig ExperimentConfig::dagger_config(Method m, std::uint64_t seed) const {
  DaggerConfig d;
  switch (m) {
    case Method::kUniformDAgger:
    case Method::kBC:
      d.mode = SchedulerMode::kUniform;
      break;
    case Method::kTaskNeed:
    case Method::kTaskNeedNoKalman:
      d.mode = SchedulerMode::kTaskNeed;
      break;
    case Method::kPerformanceGain:
      d.mode = SchedulerMode::kPerformanceGain;
      break;
  }
  d.use_kalman_filter = m != Method::kTaskNeedNoKalman;
  d.rounds = rounds;
  d.initial_demos_per_task = initial_demos_per_task;
  d.scheduler = {temperature, budget_per_round, min_per_task};
  d.mixing = epsilon;
  d.filter = filter;
  d.prior = prior;
  d.training = training;
  d.master_seed = seed;
  return d;
}

int ExperimentConfig::bc_train_steps_for(int demos_per_task) const {
  if (bc_train_steps > 0) return bc_train_steps;
  const double per_round = static_cast<double>(budget_per_round) / suite.num_tasks;
  const double rounds_needed = std::ceil((demos_per_task - initial_demos_per_task) / per_round - 1e-9);
  return training.steps * (1 + std::max(0, static_cast<int>(rounds_needed)));
}

std::vector<int> ExperimentConfig::effective_bc_budgets() const {
  if (!bc_budgets.empty()) {
    std::set<int> unique(bc_budgets.begin(), bc_budgets.end());
    return {unique.begin(), unique.end()};
  }
  std::set<int> levels;
  const double per_round = static_cast<double>(budget_per_round) / suite.num_tasks;
  for (int k = 0; k <= rounds; ++k) {
    levels.insert(static_cast<int>(std::lround(initial_demos_per_task + k * per_round)));
  }
  return {levels.begin(), levels.end()};
}

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < num_seeds; ++i) out.push_back(master_seed + static_cast<std::uint64_t>(i));
  return out;
}

std::vector<std::string> preset_names() {
  return {"default", "metaworld-state-analog", "metaworld-pixel-analog", "isaac-drawer-analog"};
}

ExperimentConfig preset_config(std::string_view name) {
  ExperimentConfig c = base_config();
  c.preset = std::string(name);
  if (name == "default") return c;
  if (name == "metaworld-state-analog" || name == "metaworld-pixel-analog") {
    c.suite = default_suite_config(36);
    c.budget_per_round = name == "metaworld-state-analog" ? 108 : 720;
    c.initial_demos_per_task = name == "metaworld-state-analog" ? 3 : 40;
    c.min_per_task = 1;
    c.training.batch_size = 1024;
    c.training.learning_rate = 3e-4;
    return c;
  }
  if (name == "isaac-drawer-analog") {
    c.suite = default_suite_config(12);
    c.rounds = 10;
    c.budget_per_round = 30 * 12;
    c.initial_demos_per_task = 30;
    c.min_per_task = 5;
    c.training.batch_size = 256;
    c.training.learning_rate = 1e-4;
    return c;
  }
  std::string known;
  for (const auto& p : preset_names()) known += (known.empty() ? "" : ", ") + p;
  throw ValidationError("unknown preset '" + std::string(name) + "' (" + known + ")");
}

ExperimentConfig parse_config(std::string_view text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::ParserException& e) {
    throw ParseError(e.msg, e.mark.line + 1);
  }
  if (root.IsNull()) {
    ExperimentConfig c = preset_config("default");
    c.validate();
    return c;
  }
  if (!root.IsMap()) throw ParseError("configuration must be a mapping", line_of(root));

  std::string preset = "default";
  if (const auto p = root["preset"]) preset = scalar<std::string>(p, "preset");
  ExperimentConfig config;
  try {
    config = preset_config(preset);
  } catch (const ValidationError& e) {
    throw ParseError(e.what(), line_of(root["preset"]));
  }
  apply_node(config, root);
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

void apply_overrides(ExperimentConfig& config,
                     const std::map<std::string, std::string>& overrides) {
  Touched touched;
  const auto candidates = all_paths();
  if (const auto it = overrides.find("preset"); it != overrides.end()) {
    config = preset_config(it->second);
  }
  for (const auto& [path, value] : overrides) {
    if (path == "preset") continue;
    const Field* f = find_field(path);
    if (f == nullptr) {
      throw ParseError("unknown key '" + path + "'" + suggestion(path, candidates), 0);
    }
    YAML::Node node;
    try {
      node = YAML::Load(value);
    } catch (const YAML::ParserException& e) {
      throw ParseError("cannot parse value for '" + path + "': " + e.msg, 0);
    }
    f->set(config, node);
    touched.note(path);
  }
  touched.finish(config);
  config.validate();
}

std::string serialize_config(const ExperimentConfig& c) {
  YAML::Emitter out;
  const auto d = [](double v) { return format_double(v); };
  const auto seq = [&](const auto& values, auto fmt) {
    out << YAML::Flow << YAML::BeginSeq;
    for (const auto& v : values) out << fmt(v);
    out << YAML::EndSeq;
  };

  out << YAML::BeginMap;
  out << YAML::Key << "preset" << YAML::Value << c.preset;
  out << YAML::Key << "method" << YAML::Value << std::string(to_string(c.method));
  out << YAML::Key << "master_seed" << YAML::Value << c.master_seed;
  out << YAML::Key << "num_seeds" << YAML::Value << c.num_seeds;

  out << YAML::Key << "dagger" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "rounds" << YAML::Value << c.rounds;
  out << YAML::Key << "budget_per_round" << YAML::Value << c.budget_per_round;
  out << YAML::Key << "initial_demos_per_task" << YAML::Value << c.initial_demos_per_task;
  out << YAML::Key << "min_per_task" << YAML::Value << c.min_per_task;
  out << YAML::Key << "temperature" << YAML::Value << d(c.temperature);
  out << YAML::EndMap;

  out << YAML::Key << "epsilon" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "initial" << YAML::Value << d(c.epsilon.epsilon);
  out << YAML::Key << "decay" << YAML::Value << d(c.epsilon.decay);
  out << YAML::Key << "floor" << YAML::Value << d(c.epsilon.floor);
  out << YAML::EndMap;

  out << YAML::Key << "filter" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "process_noise" << YAML::Value << d(c.filter.process_noise);
  out << YAML::Key << "measurement_noise" << YAML::Value << d(c.filter.base_measurement_noise);
  out << YAML::Key << "prior_estimate" << YAML::Value << d(c.prior.estimate);
  out << YAML::Key << "prior_variance" << YAML::Value << d(c.prior.variance);
  out << YAML::EndMap;

  out << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "steps" << YAML::Value << c.training.steps;
  out << YAML::Key << "batch_size" << YAML::Value << c.training.batch_size;
  out << YAML::Key << "learning_rate" << YAML::Value << d(c.training.learning_rate);
  out << YAML::Key << "optimizer" << YAML::Value
      << (c.training.optimizer == TrainingParams::Optimizer::kAdam ? "adam" : "sgd");
  out << YAML::Key << "linear_decay" << YAML::Value << c.training.linear_decay;
  out << YAML::Key << "bc_steps" << YAML::Value << c.bc_train_steps;
  out << YAML::Key << "bc_budgets" << YAML::Value;
  seq(c.bc_budgets, [](int v) { return v; });
  out << YAML::EndMap;

  out << YAML::Key << "learner" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "hidden_width" << YAML::Value << c.hidden_width;
  out << YAML::Key << "encoder_dim" << YAML::Value << c.encoder_dim;
  out << YAML::Key << "embedding_dim" << YAML::Value << c.embedding_dim;
  out << YAML::EndMap;

  out << YAML::Key << "evaluation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "episodes" << YAML::Value << c.eval_episodes;
  out << YAML::Key << "thresholds" << YAML::Value;
  seq(c.thresholds, d);
  out << YAML::EndMap;

  const auto& s = c.suite;
  out << YAML::Key << "suite" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "num_tasks" << YAML::Value << s.num_tasks;
  out << YAML::Key << "seed" << YAML::Value << s.seed;
  out << YAML::Key << "state_dim" << YAML::Value << s.state_dim;
  out << YAML::Key << "horizon" << YAML::Value << s.horizon;
  out << YAML::Key << "success_radius" << YAML::Value << d(s.success_radius);
  out << YAML::Key << "process_noise_std" << YAML::Value << d(s.process_noise_std);
  out << YAML::Key << "init_radius_min" << YAML::Value << d(s.init_radius_min);
  out << YAML::Key << "init_radius_max" << YAML::Value << d(s.init_radius_max);
  out << YAML::Key << "start_spread" << YAML::Value << d(s.start_spread);
  out << YAML::Key << "divergence_radius" << YAML::Value << d(s.divergence_radius);
  out << YAML::Key << "validation_episodes" << YAML::Value << s.validation_episodes;
  out << YAML::Key << "min_expert_success" << YAML::Value << d(s.min_expert_success);
  out << YAML::Key << "tiers" << YAML::Value << YAML::BeginSeq;
  for (const auto& t : s.difficulty_profile) {
    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << t.name;
    out << YAML::Key << "count" << YAML::Value << t.count;
    out << YAML::Key << "observation_noise_std" << YAML::Value << d(t.observation_noise_std);
    out << YAML::Key << "dynamics_gain_min" << YAML::Value << d(t.dynamics_gain_min);
    out << YAML::Key << "dynamics_gain_max" << YAML::Value << d(t.dynamics_gain_max);
    out << YAML::Key << "contraction_min" << YAML::Value << d(t.contraction_min);
    out << YAML::Key << "contraction_max" << YAML::Value << d(t.contraction_max);
    out << YAML::Key << "coupling" << YAML::Value << d(t.coupling);
    out << YAML::Key << "bias_norm" << YAML::Value << d(t.bias_norm);
    if (t.start_spread) out << YAML::Key << "start_spread" << YAML::Value << d(*t.start_spread);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace mtdagger
