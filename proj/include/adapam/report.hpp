#pragma once

// Serialized evaluation outputs: run summaries, method tables, sweep curves.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adapam/evalkit.hpp"

namespace adapam {

inline constexpr const char* kRunFormat = "adapam-run-1";

/// Everything evaluated for one (method, rate, seed) cell.
struct CellReport {
  RunSummary run;
  StealthReport stealth;
  std::optional<DetectionReport> detection;
  std::optional<double> clean_mean_reward;
  std::optional<double> clean_win_rate;

  std::optional<double> reward_decrease() const {
    if (!clean_mean_reward) return std::nullopt;
    return *clean_mean_reward - run.mean_reward;
  }
  std::optional<double> win_rate_drop() const {
    if (!clean_win_rate || !run.win_rate) return std::nullopt;
    return *clean_win_rate - *run.win_rate;
  }
};

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline nlohmann::json to_json(const CellReport& c, const std::string& env) {
  using nlohmann::json;
  const auto& r = c.run;
  json j{{"format", kRunFormat},
         {"env", env},
         {"method", to_string(r.method)},
         {"rate", r.rate},
         {"epsilon", r.epsilon},
         {"seed", r.seed},
         {"episodes", r.episode_rewards.size()},
         {"mean_reward", r.mean_reward},
         {"stderr_reward", r.stderr_reward},
         {"win_rate", opt_json(r.win_rate)},
         {"reward_decrease", opt_json(c.reward_decrease())},
         {"win_rate_drop", opt_json(c.win_rate_drop())},
         {"episode_rewards", r.episode_rewards},
         {"episode_wins", r.episode_wins},
         {"attacked_pairs", r.attacked_pairs},
         {"targeted_attacks", r.targeted_attacks},
         {"proxy_success_rate", r.proxy_success_rate},
         {"victim_success_rate", r.victim_success_rate}};
  const auto& s = c.stealth;
  j["stealth"] = {{"perturbations", s.linf.size()}, {"mean_linf", s.mean_linf}, {"p50_linf", s.p50_linf},
                  {"p95_linf", s.p95_linf},         {"max_linf", s.max_linf},   {"mean_l2", s.mean_l2}};
  if (c.detection) {
    const auto& d = *c.detection;
    j["detection"] = {{"threshold", d.threshold}, {"tp", d.tp},           {"fp", d.fp},
                      {"fn", d.fn},               {"tn", d.tn},           {"precision", d.precision},
                      {"recall", d.recall},       {"f1", d.f1}};
  } else {
    j["detection"] = nullptr;
  }
  return j;
}

/// Fixed-precision number formatting so reports are byte-stable.
inline std::string fmt_num(double v, int digits = 6) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s == "-0." + std::string(static_cast<std::size_t>(digits), '0')) s.erase(0, 1);
  return s;
}

/// Mean and standard error of one metric across seeds, per method.
struct MetricCell {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

inline std::optional<MetricCell> aggregate(const Vec& xs) {
  if (xs.empty()) return std::nullopt;
  return MetricCell{stats::mean(xs), stats::stderr_of_mean(xs), xs.size()};
}

/// Metric rows x method columns; each metric contributes a `_mean` and a
/// `_stderr` row. Empty cells mark metrics that do not apply to a method.
inline std::string metric_table_csv(const std::vector<std::string>& methods,
                                    const std::vector<std::pair<std::string, std::vector<std::optional<MetricCell>>>>& rows) {
  std::ostringstream os;
  os << "metric";
  for (const auto& m : methods) os << "," << m;
  os << "\n";
  for (const auto& [name, cells] : rows) {
    for (int which = 0; which < 2; ++which) {
      os << name << (which == 0 ? "_mean" : "_stderr");
      for (const auto& c : cells) {
        os << ",";
        if (c) os << fmt_num(which == 0 ? c->mean : c->stderr_);
      }
      os << "\n";
    }
  }
  return os.str();
}

struct MethodTables {
  std::string performance;  // rewards, win rate, decrease
  std::string stealth;      // L-infinity magnitudes
  std::string detection;    // F1
  nlohmann::json json;
};

/// Builds the three method tables from per-seed cells of one rate.
inline MethodTables method_tables(const std::vector<CellReport>& cells) {
  std::vector<std::string> methods;
  for (const auto& c : cells) {
    std::string m = to_string(c.run.method);
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
  }
  auto collect = [&](auto&& get) {
    std::vector<std::optional<MetricCell>> out;
    for (const auto& m : methods) {
      Vec xs;
      for (const auto& c : cells)
        if (to_string(c.run.method) == m)
          if (std::optional<double> v = get(c)) xs.push_back(*v);
      out.push_back(aggregate(xs));
    }
    return out;
  };
  using Opt = std::optional<double>;
  auto perturbs = [](const CellReport& c) { return !c.stealth.linf.empty(); };
  std::vector<std::pair<std::string, std::vector<std::optional<MetricCell>>>> perf{
      {"mean_reward", collect([](const CellReport& c) -> Opt { return c.run.mean_reward; })},
      {"win_rate", collect([](const CellReport& c) -> Opt { return c.run.win_rate; })},
      {"reward_decrease", collect([](const CellReport& c) { return c.reward_decrease(); })},
      {"win_rate_drop", collect([](const CellReport& c) { return c.win_rate_drop(); })},
      {"victim_success_rate",
       collect([](const CellReport& c) -> Opt { return c.run.targeted_attacks ? Opt(c.run.victim_success_rate) : Opt(); })}};
  std::vector<std::pair<std::string, std::vector<std::optional<MetricCell>>>> stealth{
      {"mean_linf", collect([&](const CellReport& c) -> Opt { return perturbs(c) ? Opt(c.stealth.mean_linf) : Opt(); })},
      {"p95_linf", collect([&](const CellReport& c) -> Opt { return perturbs(c) ? Opt(c.stealth.p95_linf) : Opt(); })},
      {"max_linf", collect([&](const CellReport& c) -> Opt { return perturbs(c) ? Opt(c.stealth.max_linf) : Opt(); })},
      {"mean_l2", collect([&](const CellReport& c) -> Opt { return perturbs(c) ? Opt(c.stealth.mean_l2) : Opt(); })}};
  std::vector<std::pair<std::string, std::vector<std::optional<MetricCell>>>> det{
      {"f1", collect([](const CellReport& c) -> Opt { return c.detection ? Opt(c.detection->f1) : Opt(); })},
      {"precision", collect([](const CellReport& c) -> Opt { return c.detection ? Opt(c.detection->precision) : Opt(); })},
      {"recall", collect([](const CellReport& c) -> Opt { return c.detection ? Opt(c.detection->recall) : Opt(); })}};

  MethodTables t;
  t.performance = metric_table_csv(methods, perf);
  t.stealth = metric_table_csv(methods, stealth);
  t.detection = metric_table_csv(methods, det);
  nlohmann::json j = nlohmann::json::object();
  for (auto* group : {&perf, &stealth, &det})
    for (const auto& [name, row] : *group)
      for (std::size_t k = 0; k < methods.size(); ++k)
        if (row[k]) j[methods[k]][name] = {{"mean", row[k]->mean}, {"stderr", row[k]->stderr_}, {"n", row[k]->n}};
  t.json = std::move(j);
  return t;
}

inline std::string sweep_csv(const SweepResult& s) {
  std::ostringstream os;
  os << "method,rate,mean_decrease,stderr_decrease,seeds\n";
  for (const auto& r : s.rows)
    os << to_string(r.method) << "," << fmt_num(r.rate, 4) << "," << fmt_num(r.mean_decrease) << ","
       << fmt_num(r.stderr_decrease) << "," << r.decrease_per_seed.size() << "\n";
  return os.str();
}

inline nlohmann::json to_json(const SweepResult& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : s.rows)
    rows.push_back({{"method", to_string(r.method)},
                    {"rate", r.rate},
                    {"decrease_per_seed", r.decrease_per_seed},
                    {"mean_decrease", r.mean_decrease},
                    {"stderr_decrease", r.stderr_decrease},
                    {"win_rate_drop_per_seed", r.win_rate_decrease_per_seed}});
  nlohmann::json clean = nlohmann::json::object();
  for (const auto& [seed, r] : s.clean)
    clean[std::to_string(seed)] = {{"mean_reward", r.mean_reward}, {"win_rate", opt_json(r.win_rate)}};
  return {{"rows", rows}, {"clean", clean}};
}

/// Reward decrease against perturbation rate, one line per method, with
/// standard-error whiskers.
inline std::string sweep_svg(const SweepResult& s, const std::string& title) {
  constexpr double W = 640, H = 420, L = 70, R = 150, T = 40, B = 60;
  std::vector<std::string> methods;
  double lo = 0.0, hi = 0.0;
  for (const auto& r : s.rows) {
    std::string m = to_string(r.method);
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
    lo = std::min(lo, r.mean_decrease - r.stderr_decrease);
    hi = std::max(hi, r.mean_decrease + r.stderr_decrease);
  }
  if (hi - lo < 1e-9) hi = lo + 1.0;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto px = [&](double rate) { return L + rate * (W - L - R); };
  auto py = [&](double v) { return T + (hi - v) / (hi - lo) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    double rate = 0.25 * k;
    os << "<text x=\"" << fmt_num(px(rate), 1) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
       << fmt_num(rate, 2) << "</text>\n";
    double v = lo + (hi - lo) * k / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << fmt_num(py(v) + 4, 1) << "\" text-anchor=\"end\">" << fmt_num(v, 2)
       << "</text>\n";
  }
  os << "<text x=\"" << fmt_num(px(0.5), 1) << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">perturbation rate</text>\n";
  os << "<text x=\"18\" y=\"" << fmt_num((T + H - B) / 2, 1) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << fmt_num((T + H - B) / 2, 1) << ")\">reward decrease</text>\n";
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const char* color = colors[m % 6];
    std::ostringstream pts;
    for (const auto& r : s.rows) {
      if (to_string(r.method) != methods[m]) continue;
      double x = px(r.rate);
      pts << fmt_num(x, 1) << "," << fmt_num(py(r.mean_decrease), 1) << " ";
      os << "<line x1=\"" << fmt_num(x, 1) << "\" y1=\"" << fmt_num(py(r.mean_decrease - r.stderr_decrease), 1)
         << "\" x2=\"" << fmt_num(x, 1) << "\" y2=\"" << fmt_num(py(r.mean_decrease + r.stderr_decrease), 1)
         << "\" stroke=\"" << color << "\"/>\n";
      os << "<circle cx=\"" << fmt_num(x, 1) << "\" cy=\"" << fmt_num(py(r.mean_decrease), 1) << "\" r=\"3\" fill=\""
         << color << "\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts.str() << "\"/>\n";
    double ly = T + 10 + 20.0 * static_cast<double>(m);
    os << "<line x1=\"" << W - R + 15 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 35 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 40 << "\" y=\"" << ly + 4 << "\">" << methods[m] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace adapam
