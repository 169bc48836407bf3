#pragma once

// Staged train -> attack -> evaluate pipeline over one output directory.
// Every stage records its artifacts and their SHA-256 in manifest.json;
// downstream stages refuse to start on missing or modified inputs.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adapam/checkpoint.hpp"
#include "adapam/config.hpp"
#include "adapam/evalkit.hpp"
#include "adapam/report.hpp"

namespace adapam {

namespace fs = std::filesystem;

inline constexpr const char* kManifestFormat = "adapam-manifest-1";

// ---------------------------------------------------------------------------
// Artifact IO

inline ParameterSet encode_expert(const ExpertDataset& ds) {
  ParameterSet p;
  auto put = [&](const std::string& split, std::size_t i, const std::vector<ExpertPair>& pairs) {
    std::size_t d = pairs.empty() ? 0 : pairs.front().obs.size();
    Vec obs, act;
    obs.reserve(pairs.size() * d);
    for (const auto& pr : pairs) {
      if (pr.obs.size() != d) throw ShapeError("ragged expert observations");
      obs.insert(obs.end(), pr.obs.begin(), pr.obs.end());
      act.push_back(static_cast<double>(pr.action));
    }
    p.add(split + "_obs_" + std::to_string(i), Array({pairs.size(), d}, std::move(obs)));
    p.add(split + "_action_" + std::to_string(i), Array({pairs.size()}, std::move(act)));
  };
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    put("train", i, ds.train[i]);
    put("heldout", i, ds.heldout[i]);
  }
  return p;
}

inline ExpertDataset decode_expert(const DecodedCheckpoint& ck) {
  ExpertDataset ds;
  ds.episodes = ck.meta.at("episodes").get<std::size_t>();
  ds.heldout_episodes = ck.meta.at("heldout_episodes").get<std::vector<std::size_t>>();
  const auto n = ck.meta.at("agents").get<std::size_t>();
  auto take = [&](const std::string& split, std::size_t i) {
    const Array& obs = ck.params.get(split + "_obs_" + std::to_string(i));
    const Array& act = ck.params.get(split + "_action_" + std::to_string(i));
    if (obs.shape.size() != 2 || act.shape.size() != 1 || obs.shape[0] != act.shape[0])
      throw IntegrityError("expert data layout is inconsistent");
    std::vector<ExpertPair> out;
    const std::size_t d = obs.shape[1];
    for (std::size_t k = 0; k < act.shape[0]; ++k)
      out.push_back({Vec(obs.data.begin() + static_cast<std::ptrdiff_t>(k * d),
                         obs.data.begin() + static_cast<std::ptrdiff_t>((k + 1) * d)),
                     static_cast<std::size_t>(act.data[k])});
    return out;
  };
  for (std::size_t i = 0; i < n; ++i) {
    ds.train.push_back(take("train", i));
    ds.heldout.push_back(take("heldout", i));
  }
  return ds;
}

inline json expert_meta(const ExpertDataset& ds) {
  return {{"episodes", ds.episodes}, {"heldout_episodes", ds.heldout_episodes}, {"agents", ds.train.size()}};
}

inline void save_detector(const fs::path& dir, const Detector& d) {
  save_network_group(dir, "detector", d.agents,
                     {{"threshold", d.threshold}, {"validation_accuracy", d.validation_accuracy}});
}

inline Detector load_detector(const fs::path& manifest) {
  auto g = load_network_group(manifest);
  Detector d;
  d.agents = std::move(g.nets);
  d.threshold = g.meta.at("threshold").get<double>();
  d.validation_accuracy = g.meta.at("validation_accuracy").get<Vec>();
  return d;
}

inline SelectorPolicy load_selector(const fs::path& manifest) {
  auto g = load_network_group(manifest);
  if (g.nets.size() != 2) throw IntegrityError("selector checkpoint must hold two classifiers");
  return {std::move(g.nets[0]), std::move(g.nets[1])};
}

inline ProxyPolicy load_proxies(const fs::path& manifest) { return {load_network_group(manifest).nets}; }

// ---------------------------------------------------------------------------
// Manifest

inline std::string utc_timestamp() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Stage completion records. Timestamps live only here.
class PipelineManifest {
 public:
  explicit PipelineManifest(fs::path out) : out_(std::move(out)) {
    auto p = path();
    if (fs::exists(p)) {
      try {
        j_ = json::parse(read_file(p));
      } catch (const json::exception& e) {
        throw IntegrityError("manifest is not valid JSON: " + std::string(e.what()));
      }
      if (j_.value("format", "") != kManifestFormat) throw IntegrityError("unsupported manifest format");
    } else {
      j_ = {{"format", kManifestFormat}, {"stages", json::object()}};
    }
  }

  fs::path path() const { return out_ / "manifest.json"; }
  const fs::path& out() const { return out_; }
  bool has(const std::string& stage) const { return j_["stages"].contains(stage); }
  const json& record(const std::string& stage) const { return j_["stages"].at(stage); }

  /// Digest over a stage's artifact hashes; downstream records pin it.
  std::string digest(const std::string& stage) const {
    std::string all;
    for (const auto& [rel, sha] : record(stage).at("artifacts").items()) all += rel + ":" + sha.get<std::string>() + "\n";
    return sha256_hex(all);
  }

  /// Throws unless `stage` completed, its files are intact, and the stages it
  /// consumed are still the ones on disk.
  void require(const std::string& stage) const {
    if (!has(stage)) throw StagedDependencyError(stage);
    const json& rec = record(stage);
    for (const auto& [rel, sha] : rec.at("artifacts").items()) {
      fs::path p = out_ / rel;
      if (!fs::exists(p)) throw IntegrityError("artifact missing for stage " + stage + ": " + rel);
      if (sha256_file(p) != sha.get<std::string>())
        throw IntegrityError("artifact modified for stage " + stage + ": " + rel);
    }
    const json inputs = rec.value("inputs", json::object());
    for (const auto& [up, dig] : inputs.items()) {
      if (!has(up)) throw StagedDependencyError(up);
      if (digest(up) != dig.get<std::string>())
        throw IntegrityError("stage " + stage + " was built from an older " + up + " stage; rerun it");
    }
  }

  /// Records a finished stage. An identical rerun leaves the record as is.
  void complete(const std::string& stage, const std::vector<fs::path>& artifacts,
                const std::vector<std::string>& inputs, const std::string& config_sha) {
    json arts = json::object();
    for (const auto& a : artifacts) arts[fs::relative(a, out_).generic_string()] = sha256_file(a);
    json ins = json::object();
    for (const auto& up : inputs) ins[up] = digest(up);
    if (has(stage)) {
      const json& old = record(stage);
      if (old.at("artifacts") == arts && old.value("inputs", json::object()) == ins &&
          old.value("config_sha256", "") == config_sha)
        return;
    }
    j_["stages"][stage] = {{"completed_at", utc_timestamp()},
                           {"config_sha256", config_sha},
                           {"artifacts", std::move(arts)},
                           {"inputs", std::move(ins)}};
    write_file(path(), j_.dump(2) + "\n");
  }

 private:
  fs::path out_;
  json j_;
};

// ---------------------------------------------------------------------------
// Stages

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"victim", "expert", "proxy", "selector", "detector", "attack", "sweep"};
  return names;
}

class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, fs::path out, std::ostream& log = std::clog)
      : cfg_(std::move(cfg)), env_(Env::make(cfg_.env)), manifest_(out), log_(log) {
    cfg_.validate();
  }

  const ExperimentConfig& config() const { return cfg_; }
  const PipelineManifest& manifest() const { return manifest_; }
  fs::path out() const { return manifest_.out(); }

  void train_victim() {
    auto dir = begin("victim");
    VictimTrainResult res;
    try {
      res = adapam::train_victim(env_, cfg_.victim);
    } catch (const TrainingFailure& e) {
      emit(dir / "failure.json", e.metrics() + "\n");
      throw;
    }
    json summary{{"eval_mean_reward", res.eval.mean_reward},
                 {"eval_stderr_reward", res.eval.stderr_reward},
                 {"eval_win_rate", opt_json(res.eval.win_rate)},
                 {"random_mean_reward", res.random_mean_reward},
                 {"random_win_rate", opt_json(res.random_win_rate)},
                 {"fingerprint", victim_fingerprint(res.policy)}};
    std::ostringstream curve;
    curve << "episode,train_return,epsilon,selection_score\n";
    for (const auto& p : res.curve)
      curve << p.episode << "," << fmt_num(p.train_return) << "," << fmt_num(p.epsilon) << ","
            << (p.selection_score ? fmt_num(*p.selection_score) : "") << "\n";
    std::vector<fs::path> arts = group_files(save_victim(dir, res.policy));
    arts.push_back(emit(dir / "curve.csv", curve.str()));
    arts.push_back(emit(dir / "summary.json", summary.dump(2) + "\n"));
    finish("victim", dir, arts, {});
    log_ << "victim: mean reward " << res.eval.mean_reward << " (random " << res.random_mean_reward << ")\n";
  }

  void collect_expert() {
    manifest_.require("victim");
    auto dir = begin("expert");
    auto victim = load_victim(out() / "victim/victim.json");
    auto ds = adapam::collect_expert(env_, victim, cfg_.expert.episodes, derive_seed(cfg_.seed, 0xe7),
                                     cfg_.expert.holdout_fraction);
    add_query_pairs(ds, victim, cfg_.expert.query_copies, PerturbBudget{cfg_.attack.epsilon},
                    derive_seed(cfg_.seed, 0xe7, 1));
    json summary{{"episodes", ds.episodes}, {"train_pairs", json::array()}, {"heldout_pairs", json::array()}};
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
      summary["train_pairs"].push_back(ds.train[i].size());
      summary["heldout_pairs"].push_back(ds.heldout[i].size());
    }
    auto data = emit(dir / "expert.ckpt", encode_checkpoint(encode_expert(ds), expert_meta(ds)));
    auto sum = emit(dir / "summary.json", summary.dump(2) + "\n");
    finish("expert", dir, {data, sum}, {"victim"});
  }

  void train_proxy() {
    manifest_.require("victim");
    manifest_.require("expert");
    auto dir = begin("proxy");
    auto victim = load_victim(out() / "victim/victim.json");
    auto ds = decode_expert(load_checkpoint(out() / "expert/expert.ckpt"));
    MagailResult res;
    try {
      res = train_magail(env_, victim, ds, cfg_.proxy);
    } catch (const TrainingFailure& e) {
      emit(dir / "failure.json", e.metrics() + "\n");
      throw;
    }
    std::ostringstream curve;
    curve << "phase,epoch,agent,expert_ce,agreement,disc_loss,imitation_reward\n";
    for (const auto& p : res.curve)
      for (std::size_t i = 0; i < p.agreement.size(); ++i)
        curve << p.phase << "," << p.epoch << "," << i << "," << fmt_num(p.expert_ce[i]) << ","
              << fmt_num(p.agreement[i]) << "," << (p.disc_loss.empty() ? "" : fmt_num(p.disc_loss[i])) << ","
              << (p.mean_imitation_reward.empty() ? "" : fmt_num(p.mean_imitation_reward[i])) << "\n";
    std::vector<fs::path> arts = group_files(save_network_group(dir, "proxy", res.proxies.agents));
    auto disc = group_files(save_network_group(dir, "discriminator", res.discriminators.agents));
    arts.insert(arts.end(), disc.begin(), disc.end());
    arts.push_back(emit(dir / "curve.csv", curve.str()));
    arts.push_back(emit(dir / "summary.json", json{{"heldout_agreement", res.final_agreement}}.dump(2) + "\n"));
    finish("proxy", dir, arts, {"victim", "expert"});
    log_ << "proxy: held-out agreement";
    for (double a : res.final_agreement) log_ << " " << a;
    log_ << "\n";
  }

  void train_attacker() {
    manifest_.require("victim");
    manifest_.require("proxy");
    auto dir = begin("selector");
    auto victim = load_victim(out() / "victim/victim.json");
    auto proxies = load_proxies(out() / "proxy/proxy.json");
    auto res = adapam::train_attacker(env_, victim, proxies, PerturbBudget{cfg_.attack.epsilon}, cfg_.attack.cw,
                                      cfg_.selector);
    std::ostringstream curve;
    curve << "env_step,attacker_return,critic1_loss,critic2_loss,policy_loss,policy_entropy,cw_success_rate\n";
    for (const auto& p : res.curve)
      curve << p.env_step << "," << fmt_num(p.attacker_return) << "," << fmt_num(p.critic1_loss) << ","
            << fmt_num(p.critic2_loss) << "," << fmt_num(p.policy_loss) << "," << fmt_num(p.policy_entropy) << ","
            << fmt_num(p.cw_success_rate) << "\n";
    auto arts = group_files(
        save_network_group(dir, "selector", {res.selector.agent_head, res.selector.action_head}));
    auto critics = group_files(save_network_group(
        dir, "critic", {res.critics.q1, res.critics.q2, res.critics.target1, res.critics.target2}));
    arts.insert(arts.end(), critics.begin(), critics.end());
    arts.push_back(emit(dir / "curve.csv", curve.str()));
    finish("selector", dir, arts, {"victim", "proxy"});
  }

  void train_detector() {
    manifest_.require("victim");
    auto dir = begin("detector");
    auto victim = load_victim(out() / "victim/victim.json");
    auto clean = rollout(env_, victim, cfg_.detector.clean_episodes, derive_seed(cfg_.seed, 0xc1ea)).episodes;
    Detector det = adapam::train_detector(env_, clean, cfg_.detector.detector);
    save_detector(dir, det);
    auto arts = group_files(dir / "detector.json");
    json summary{{"threshold", det.threshold},
                 {"validation_accuracy", det.validation_accuracy},
                 {"validation_pairs", det.validation_scores.size()}};
    arts.push_back(emit(dir / "summary.json", summary.dump(2) + "\n"));
    finish("detector", dir, arts, {"victim"});
  }

  /// Every configured method at the evaluation rate, once per eval seed.
  std::vector<CellReport> run_attack() {
    auto methods = cfg_.method_list();
    auto needs = upstream_for(methods);
    needs.push_back("detector");
    for (const auto& s : needs) manifest_.require(s);
    auto dir = begin("attack");
    Artifacts a = load_artifacts(methods);
    Detector det = load_detector(out() / "detector/detector.json");

    struct Cell {
      Method m;
      std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (auto seed : cfg_.eval.seeds) {
      cells.push_back({Method::none, seed});
      for (auto m : methods)
        if (m != Method::none) cells.push_back({m, seed});
    }
    auto reports = parallel_map<CellReport>(cells.size(), cfg_.eval.workers, [&](std::size_t k) {
      AttackRunConfig rc = attack_config(cells[k].m, cfg_.eval.rate, cells[k].seed);
      CellReport c;
      c.run = adapam::run_attack(env_, a.victim, rc, a.art);
      if (!self_consistent(c.run)) throw Error("run summary failed its self-consistency check");
      c.stealth = stealth_report(c.run);
      c.detection = detect(det, env_, c.run.logs);
      return c;
    });

    std::vector<fs::path> arts;
    std::vector<CellReport> kept;
    std::map<std::uint64_t, const CellReport*> clean;
    for (const auto& c : reports)
      if (c.run.method == Method::none) clean[c.run.seed] = &c;
    for (auto& c : reports) {
      const CellReport& base = *clean.at(c.run.seed);
      c.clean_mean_reward = base.run.mean_reward;
      c.clean_win_rate = base.run.win_rate;
    }
    for (std::size_t k = 0; k < reports.size(); ++k) {
      auto& c = reports[k];
      bool listed = std::find(methods.begin(), methods.end(), c.run.method) != methods.end();
      if (!listed) continue;
      std::string stem = std::string(to_string(c.run.method)) + "_s" + std::to_string(cells[k].seed);
      arts.push_back(emit(dir / "runs" / (stem + ".json"), to_json(c, cfg_.env).dump(2) + "\n"));
      std::ostringstream eps;
      for (std::size_t e = 0; e < c.run.logs.size(); ++e) write_episode_jsonl(eps, c.run.logs[e], e);
      arts.push_back(emit(dir / "episodes" / (stem + ".jsonl"), eps.str()));
      kept.push_back(std::move(c));
    }
    auto inputs = needs;
    finish("attack", dir, arts, inputs);
    return kept;
  }

  SweepResult sweep_rate() {
    auto methods = cfg_.method_list();
    std::erase(methods, Method::none);
    auto needs = upstream_for(methods);
    for (const auto& s : needs) manifest_.require(s);
    auto dir = begin("sweep");
    Artifacts a = load_artifacts(methods);
    AttackRunConfig base = attack_config(Method::none, 1.0, 0);
    auto res = adapam::sweep_rate(env_, a.victim, methods, cfg_.eval.rate_grid, cfg_.eval.seeds, base, a.art,
                                  cfg_.eval.workers);
    std::vector<fs::path> arts{
        emit(dir / "sweep.csv", sweep_csv(res)),
        emit(dir / "sweep.json", to_json(res).dump(2) + "\n"),
        emit(dir / "sweep.svg", sweep_svg(res, cfg_.env + ": reward decrease vs perturbation rate"))};
    finish("sweep", dir, arts, needs);
    return res;
  }

  /// Tables aggregated over eval seeds from the run-attack outputs.
  MethodTables report() {
    manifest_.require("attack");
    std::vector<CellReport> cells;
    for (const auto& [rel, sha] : manifest_.record("attack").at("artifacts").items()) {
      if (!rel.starts_with("attack/runs/")) continue;
      cells.push_back(cell_from_json(json::parse(read_file(out() / rel))));
    }
    std::sort(cells.begin(), cells.end(), [&](const CellReport& x, const CellReport& y) {
      return std::pair(method_rank(x.run.method), x.run.seed) < std::pair(method_rank(y.run.method), y.run.seed);
    });
    MethodTables t = method_tables(cells);
    fs::path dir = out() / "report";
    emit(dir / "table1_performance.csv", t.performance);
    emit(dir / "table2_stealth.csv", t.stealth);
    emit(dir / "table3_detection.csv", t.detection);
    json j{{"env", cfg_.env}, {"rate", cfg_.eval.rate}, {"epsilon", cfg_.attack.epsilon}, {"methods", t.json}};
    if (manifest_.has("sweep")) j["sweep"] = json::parse(read_file(out() / "sweep/sweep.json"));
    emit(dir / "report.json", j.dump(2) + "\n");
    return t;
  }

  void run_all() {
    train_victim();
    collect_expert();
    train_proxy();
    train_attacker();
    train_detector();
    run_attack();
    sweep_rate();
    report();
  }

 private:
  struct Artifacts {
    VictimPolicy victim;
    ProxyPolicy proxies;
    SelectorPolicy selector;
    AttackArtifacts art;
  };

  std::size_t method_rank(Method m) const {
    auto ms = cfg_.method_list();
    return static_cast<std::size_t>(std::find(ms.begin(), ms.end(), m) - ms.begin());
  }

  static CellReport cell_from_json(const json& j) {
    if (j.value("format", "") != kRunFormat) throw IntegrityError("unsupported run summary format");
    CellReport c;
    auto& r = c.run;
    r.method = method_from_string(j.at("method").get<std::string>());
    r.rate = j.at("rate").get<double>();
    r.epsilon = j.at("epsilon").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.episode_rewards = j.at("episode_rewards").get<Vec>();
    r.episode_wins = j.at("episode_wins").get<std::vector<int>>();
    r.mean_reward = j.at("mean_reward").get<double>();
    r.stderr_reward = j.at("stderr_reward").get<double>();
    if (!j.at("win_rate").is_null()) r.win_rate = j.at("win_rate").get<double>();
    r.attacked_pairs = j.at("attacked_pairs").get<std::size_t>();
    r.targeted_attacks = j.at("targeted_attacks").get<std::size_t>();
    r.proxy_success_rate = j.at("proxy_success_rate").get<double>();
    r.victim_success_rate = j.at("victim_success_rate").get<double>();
    if (!j.at("reward_decrease").is_null()) c.clean_mean_reward = r.mean_reward + j.at("reward_decrease").get<double>();
    if (!j.at("win_rate_drop").is_null() && r.win_rate)
      c.clean_win_rate = *r.win_rate + j.at("win_rate_drop").get<double>();
    const auto& s = j.at("stealth");
    c.stealth.method = r.method;
    c.stealth.mean_linf = s.at("mean_linf").get<double>();
    c.stealth.p50_linf = s.at("p50_linf").get<double>();
    c.stealth.p95_linf = s.at("p95_linf").get<double>();
    c.stealth.max_linf = s.at("max_linf").get<double>();
    c.stealth.mean_l2 = s.at("mean_l2").get<double>();
    // Only the count matters for table assembly; magnitudes come from the summary fields.
    c.stealth.linf.assign(s.at("perturbations").get<std::size_t>(), c.stealth.mean_linf);
    if (const auto& d = j.at("detection"); !d.is_null()) {
      DetectionReport dr;
      dr.threshold = d.at("threshold").get<double>();
      dr.tp = d.at("tp").get<std::size_t>();
      dr.fp = d.at("fp").get<std::size_t>();
      dr.fn = d.at("fn").get<std::size_t>();
      dr.tn = d.at("tn").get<std::size_t>();
      dr.precision = d.at("precision").get<double>();
      dr.recall = d.at("recall").get<double>();
      dr.f1 = d.at("f1").get<double>();
      c.detection = dr;
    }
    return c;
  }

  std::vector<std::string> upstream_for(const std::vector<Method>& methods) const {
    std::vector<std::string> s{"victim"};
    bool proxies = false, selector = false;
    for (auto m : methods) {
      proxies |= m == Method::adapam || m == Method::fixed_targeted;
      selector |= m == Method::adapam;
    }
    if (proxies) s.push_back("proxy");
    if (selector) s.push_back("selector");
    return s;
  }

  Artifacts load_artifacts(const std::vector<Method>& methods) const {
    Artifacts a{load_victim(out() / "victim/victim.json"), {}, {}, {}};
    auto needs = upstream_for(methods);
    if (std::find(needs.begin(), needs.end(), "proxy") != needs.end()) {
      a.proxies = load_proxies(out() / "proxy/proxy.json");
      a.art.proxies = &a.proxies;
    }
    if (std::find(needs.begin(), needs.end(), "selector") != needs.end()) {
      a.selector = load_selector(out() / "selector/selector.json");
      a.art.selector = &a.selector;
    }
    return a;
  }

  AttackRunConfig attack_config(Method m, double rate, std::uint64_t seed) const {
    AttackRunConfig rc;
    rc.method = m;
    rc.rate = rate;
    rc.episodes = cfg_.eval.episodes;
    rc.seed = derive_seed(cfg_.seed, 0xe7a1, seed);
    rc.epsilon = cfg_.attack.epsilon;
    rc.cw = cfg_.attack.cw;
    rc.greedy_selector = cfg_.eval.greedy_selector;
    return rc;
  }

  fs::path begin(const std::string& stage) {
    fs::path dir = out() / stage;
    fs::create_directories(dir);
    log_ << "[" << stage << "] " << cfg_.env << " seed " << cfg_.seed << "\n";
    return dir;
  }

  fs::path emit(const fs::path& path, const std::string& bytes) {
    write_file(path, bytes);
    return path;
  }

  static std::vector<fs::path> group_files(const fs::path& manifest) {
    std::vector<fs::path> files{manifest};
    json m = json::parse(read_file(manifest));
    for (const auto& mem : m.at("members")) files.push_back(manifest.parent_path() / mem.at("file").get<std::string>());
    return files;
  }

  void finish(const std::string& stage, const fs::path& dir, std::vector<fs::path> arts,
              const std::vector<std::string>& inputs) {
    std::string cfg_text = dump_config(cfg_);
    arts.push_back(emit(dir / "config.json", cfg_text));
    manifest_.complete(stage, arts, inputs, sha256_hex(cfg_text));
  }

  ExperimentConfig cfg_;
  Env env_;
  PipelineManifest manifest_;
  std::ostream& log_;
};

}  // namespace adapam
