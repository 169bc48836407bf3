#pragma once

// Experiment configuration: one JSON document holding every hyperparameter
// of every stage. Unknown keys are rejected; the resolved config written
// next to the outputs re-parses to an identical value.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "adapam/errors.hpp"
#include "adapam/evalkit.hpp"
#include "adapam/perturber.hpp"
#include "adapam/proxy.hpp"
#include "adapam/selector.hpp"
#include "adapam/victim.hpp"

namespace adapam {

inline constexpr const char* kConfigFormat = "adapam-config-1";

struct ExpertConfig {
  std::size_t episodes = 400;
  double holdout_fraction = 0.2;
  std::size_t query_copies = 1;  // victim-labelled noisy copies per training pair
  bool operator==(const ExpertConfig&) const = default;
};

struct AttackConfig {
  double epsilon = 0.3;
  CwConfig cw;
};

struct DetectorStageConfig {
  std::size_t clean_episodes = 200;
  DetectorConfig detector;
};

struct EvalConfig {
  std::size_t episodes = 100;
  double rate = 1.0;
  Vec rate_grid = {0.25, 0.5, 0.75, 1.0};
  std::vector<std::string> methods = {"none", "adapam", "random_all", "fixed_targeted", "direct_control"};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  bool greedy_selector = true;
  std::size_t workers = 1;
};

struct ExperimentConfig {
  std::string env = "grid_battle";
  std::uint64_t seed = 0;
  std::string out;  // empty: resolved from --out / ADAPAM_OUT by the CLI
  VictimTrainConfig victim;
  ExpertConfig expert;
  MagailConfig proxy;
  AttackConfig attack;
  SacConfig selector;
  DetectorStageConfig detector;
  EvalConfig eval;

  /// Defaults tuned per environment. Stage seeds are derived from `seed`.
  static ExperimentConfig defaults_for(const std::string& env_name);

  /// Copies `seed` into every stage config under distinct streams.
  void propagate_seeds();
  void validate() const;
  std::vector<Method> method_list() const;
};

namespace config_detail {

using nlohmann::json;
static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed fields share the size_t reader");

/// Reads fields from an object, rejecting keys never asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void operator()(const char* key, T& value) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      read(*it, value, path_ + "." + key);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  template <class F>
  void object(const char* key, F&& visit) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    Reader sub(*it, path_ + "." + key);
    visit(sub);
    sub.finish();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown config key: " + path_ + "." + it.key());
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  static void read(const json& j, double& v, const std::string& p) {
    if (!j.is_number()) throw ConfigError(p + " must be a number");
    v = j.get<double>();
  }
  static void read(const json& j, std::size_t& v, const std::string& p) {
    if (!j.is_number_unsigned()) throw ConfigError(p + " must be a non-negative integer");
    v = j.get<std::size_t>();
  }
  static void read(const json& j, bool& v, const std::string& p) {
    if (!j.is_boolean()) throw ConfigError(p + " must be a boolean");
    v = j.get<bool>();
  }
  static void read(const json& j, std::string& v, const std::string& p) {
    if (!j.is_string()) throw ConfigError(p + " must be a string");
    v = j.get<std::string>();
  }
  static void read(const json& j, Activation& v, const std::string& p) {
    std::string s;
    read(j, s, p);
    if (s == "tanh") v = Activation::tanh;
    else if (s == "relu") v = Activation::relu;
    else throw ConfigError(p + ": unknown activation " + s);
  }
  template <class T>
  static void read(const json& j, std::vector<T>& v, const std::string& p) {
    if (!j.is_array()) throw ConfigError(p + " must be an array");
    v.assign(j.size(), T{});
    for (std::size_t i = 0; i < j.size(); ++i) read(j[i], v[i], p + "[" + std::to_string(i) + "]");
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  json j = json::object();

  template <class T>
  void operator()(const char* key, const T& value) {
    if constexpr (std::is_same_v<T, Activation>)
      j[key] = value == Activation::tanh ? "tanh" : "relu";
    else
      j[key] = value;
  }

  template <class F>
  void object(const char* key, F&& visit) {
    Writer sub;
    visit(sub);
    j[key] = std::move(sub.j);
  }
};

// One field list per struct serves both directions. Seeds are not listed:
// they derive from the top-level seed.

template <class V, class C>
void victim_fields(V& v, C& c) {
  v("episodes", c.episodes);
  v("learning_rate", c.learning_rate);
  v("discount", c.discount);
  v("epsilon_start", c.epsilon_start);
  v("epsilon_end", c.epsilon_end);
  v("epsilon_decay_fraction", c.epsilon_decay_fraction);
  v("target_sync_steps", c.target_sync_steps);
  v("replay_capacity", c.replay_capacity);
  v("batch_size", c.batch_size);
  v("warmup_steps", c.warmup_steps);
  v("hidden", c.hidden);
  v("activation", c.activation);
  v("grad_clip", c.grad_clip);
  v("select_every", c.select_every);
  v("select_episodes", c.select_episodes);
  v("eval_episodes", c.eval_episodes);
  v("min_margin_over_random", c.min_margin_over_random);
  v("min_win_rate", c.min_win_rate);
}

template <class V, class C>
void expert_fields(V& v, C& c) {
  v("episodes", c.episodes);
  v("holdout_fraction", c.holdout_fraction);
  v("query_copies", c.query_copies);
}

template <class V, class C>
void proxy_fields(V& v, C& c) {
  v("proxy_hidden", c.proxy_hidden);
  v("disc_hidden", c.disc_hidden);
  v("activation", c.activation);
  v("bc_warm_start", c.bc_warm_start);
  v("bc_epochs", c.bc_epochs);
  v("bc_batch", c.bc_batch);
  v("bc_lr", c.bc_lr);
  v("adversarial_epochs", c.adversarial_epochs);
  v("rollout_episodes", c.rollout_episodes);
  v("disc_steps", c.disc_steps);
  v("disc_lr", c.disc_lr);
  v("gen_lr", c.gen_lr);
  v("entropy_weight", c.entropy_weight);
  v("min_agreement", c.min_agreement);
}

template <class V, class C>
void cw_fields(V& v, C& c) {
  v("c", c.c);
  v("max_iters", c.max_iters);
  v("step_size", c.step_size);
  v("kappa", c.kappa);
  v("early_stop", c.early_stop);
}

template <class V, class C>
void attack_fields(V& v, C& c) {
  v("epsilon", c.epsilon);
  v.object("cw", [&](auto& sub) { cw_fields(sub, c.cw); });
}

template <class V, class C>
void selector_fields(V& v, C& c) {
  v("gamma", c.gamma);
  v("alpha", c.alpha);
  v("mu", c.mu);
  v("replay_capacity", c.replay_capacity);
  v("batch_size", c.batch_size);
  v("steps_per_iteration", c.steps_per_iteration);
  v("gradient_steps", c.gradient_steps);
  v("total_env_steps", c.total_env_steps);
  v("warmup_steps", c.warmup_steps);
  v("actor_lr", c.actor_lr);
  v("critic_lr", c.critic_lr);
  v("grad_clip", c.grad_clip);
  v("selector_hidden", c.selector_hidden);
  v("critic_hidden", c.critic_hidden);
  v("activation", c.activation);
  v("exact_expectation", c.exact_expectation);
  v("log_every_steps", c.log_every_steps);
}

template <class V, class C>
void detector_fields(V& v, C& c) {
  v("clean_episodes", c.clean_episodes);
  v("hidden", c.detector.hidden);
  v("activation", c.detector.activation);
  v("epochs", c.detector.epochs);
  v("batch_size", c.detector.batch_size);
  v("learning_rate", c.detector.learning_rate);
  v("validation_fraction", c.detector.validation_fraction);
  v("fp_quantile", c.detector.fp_quantile);
  v("min_episodes", c.detector.min_episodes);
}

template <class V, class C>
void eval_fields(V& v, C& c) {
  v("episodes", c.episodes);
  v("rate", c.rate);
  v("rate_grid", c.rate_grid);
  v("methods", c.methods);
  v("seeds", c.seeds);
  v("greedy_selector", c.greedy_selector);
  v("workers", c.workers);
}

template <class V, class C>
void experiment_fields(V& v, C& c) {
  v("env", c.env);
  v("seed", c.seed);
  v("out", c.out);
  v.object("victim", [&](auto& s) { victim_fields(s, c.victim); });
  v.object("expert", [&](auto& s) { expert_fields(s, c.expert); });
  v.object("proxy", [&](auto& s) { proxy_fields(s, c.proxy); });
  v.object("attack", [&](auto& s) { attack_fields(s, c.attack); });
  v.object("selector", [&](auto& s) { selector_fields(s, c.selector); });
  v.object("detector", [&](auto& s) { detector_fields(s, c.detector); });
  v.object("eval", [&](auto& s) { eval_fields(s, c.eval); });
}

}  // namespace config_detail

inline ExperimentConfig ExperimentConfig::defaults_for(const std::string& env_name) {
  Env::make(env_name);  // validates the name
  ExperimentConfig c;
  c.env = env_name;
  c.attack.cw.kappa = 2.0;
  c.selector.total_env_steps = 20000;
  c.proxy.bc_epochs = 100;
  if (env_name == "coop_spread") {
    // Dense negative-distance rewards: a short horizon on the bootstrap keeps
    // independent learners from drifting below the random baseline.
    c.victim.discount = 0.5;
    c.victim.episodes = 1500;
    c.expert.episodes = 6000;
    // Per-step team reward barely moves with one agent's action; a short
    // critic horizon and a light entropy bonus let the selector separate pairs.
    c.selector.gamma = 0.5;
    c.selector.alpha = 0.01;
    c.selector.total_env_steps = 150000;
    c.selector.selector_hidden = {128};
    c.selector.critic_hidden = {128};
  } else {
    c.victim.discount = 0.95;
    c.victim.episodes = 800;
    c.expert.episodes = 1500;
  }
  c.propagate_seeds();
  return c;
}

inline void ExperimentConfig::propagate_seeds() {
  victim.seed = derive_seed(seed, 0x71c);
  proxy.seed = derive_seed(seed, 0x9a1);
  selector.seed = derive_seed(seed, 0x5e1);
  detector.detector.seed = derive_seed(seed, 0xde7);
}

inline std::vector<Method> ExperimentConfig::method_list() const {
  std::vector<Method> ms;
  for (const auto& s : eval.methods) ms.push_back(method_from_string(s));
  return ms;
}

inline void ExperimentConfig::validate() const {
  Env::make(env);
  victim.validate();
  if (expert.episodes < 2) throw ConfigError("expert: need at least two episodes");
  if (!(expert.holdout_fraction > 0.0 && expert.holdout_fraction < 1.0))
    throw ConfigError("expert: holdout_fraction must lie in (0,1)");
  proxy.validate();
  PerturbBudget{attack.epsilon}.validate();
  attack.cw.validate();
  selector.validate();
  if (detector.clean_episodes < detector.detector.min_episodes)
    throw ConfigError("detector: clean_episodes below min_episodes");
  if (!(detector.detector.fp_quantile > 0.0 && detector.detector.fp_quantile < 1.0))
    throw ConfigError("detector: fp_quantile must lie in (0,1)");
  if (!(detector.detector.validation_fraction > 0.0 && detector.detector.validation_fraction < 1.0))
    throw ConfigError("detector: validation_fraction must lie in (0,1)");
  if (eval.episodes == 0) throw ConfigError("eval: episodes must be positive");
  if (eval.seeds.empty()) throw ConfigError("eval: at least one seed");
  if (eval.workers == 0) throw ConfigError("eval: workers must be positive");
  for (double r : eval.rate_grid)
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("eval: rates must lie in [0,1]");
  if (!(eval.rate >= 0.0 && eval.rate <= 1.0)) throw ConfigError("eval: rate must lie in [0,1]");
  method_list();
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  config_detail::Writer w;
  w("format", std::string(kConfigFormat));
  config_detail::experiment_fields(w, c);
  return w.j;
}

/// Parses a config document. Missing keys take the defaults of the named
/// environment; unknown keys raise ConfigError.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (auto f = j.find("format"); f != j.end() && *f != kConfigFormat)
    throw ConfigError("unsupported config format: " + f->dump());
  std::string env = "grid_battle";
  if (auto e = j.find("env"); e != j.end()) {
    if (!e->is_string()) throw ConfigError("config.env must be a string");
    env = e->get<std::string>();
  }
  ExperimentConfig c = ExperimentConfig::defaults_for(env);
  config_detail::Reader r(j, "config");
  std::string format;
  r("format", format);
  config_detail::experiment_fields(r, c);
  r.finish();
  c.propagate_seeds();
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline std::string dump_config(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return to_json(a) == to_json(b); }

}  // namespace adapam
