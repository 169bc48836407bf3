#pragma once

// Targeted observation perturbation on a white-box proxy network.
//
// Minimizes ||delta||_2^2 + c * f(o + delta), where
//   f(x) = max(max_{a != target} Z(a|x) - Z(target|x) + kappa, 0)
// and Z are the proxy's logits. After every Adam step delta is projected onto
// the L-infinity ball of radius epsilon and o + delta is clipped to the
// observation box, so every iterate respects the budget.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "adapam/envs.hpp"
#include "adapam/errors.hpp"
#include "adapam/ndmath.hpp"

namespace adapam {

struct PerturbBudget {
  double epsilon = 0.3;
  double low = kObsLow;
  double high = kObsHigh;

  void validate() const {
    if (!(epsilon >= 0.0)) throw ConfigError("perturbation budget must be non-negative");
    if (!(low < high)) throw ConfigError("clip box is empty");
    if (epsilon > 0.5 * (high - low)) throw ConfigError("epsilon exceeds half the clip-box width");
  }

  /// clean + delta clipped to the box, pulled back by the ulp that rounding
  /// can add so that |result - clean| <= epsilon holds exactly.
  double apply(double clean, double delta) const {
    double x = std::clamp(clean + delta, low, high);
    while (std::abs(x - clean) > epsilon) x = std::nextafter(x, clean);
    return x;
  }
};

struct CwConfig {
  double c = 5.0;
  std::size_t max_iters = 500;
  double step_size = 0.01;
  double kappa = 0.0;
  bool early_stop = true;
  bool record_trace = false;

  void validate() const {
    if (!(c > 0.0)) throw ConfigError("C&W c must be positive");
    if (max_iters == 0) throw ConfigError("C&W max_iters must be positive");
    if (!(step_size > 0.0)) throw ConfigError("C&W step size must be positive");
    if (!(kappa >= 0.0)) throw ConfigError("C&W kappa must be non-negative");
  }
};

struct CwTracePoint {
  std::size_t iter;
  double f;
  double l2;
  double linf;
};

struct PerturbResult {
  Vec perturbed;
  bool success_on_proxy = false;
  double l2 = 0.0;
  double linf = 0.0;
  std::size_t iters_used = 0;
  double margin = 0.0;  // f at the returned iterate
  std::vector<CwTracePoint> trace;
};

/// max over coordinates of |b - a|.
inline double linf_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("linf_distance: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(b[i] - a[i]));
  return m;
}

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("l2_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (b[i] - a[i]) * (b[i] - a[i]);
  return std::sqrt(s);
}

/// Logit-margin objective term; zero iff `target` is a (weak, for kappa = 0)
/// argmax of the logits.
inline double margin_f(std::span<const double> logits, std::size_t target, double kappa = 0.0) {
  if (logits.size() < 2) throw ArgumentError("margin_f needs at least two actions");
  if (target >= logits.size()) throw ArgumentError("target action out of range");
  return cw_margin(logits, target, kappa);
}

/// Returns the iterate with the smallest margin term (ties: smallest L2).
/// Failure to reach the target is reported through success_on_proxy.
inline PerturbResult cw_attack(const Network& proxy, std::span<const double> obs, std::size_t target,
                               const PerturbBudget& budget, const CwConfig& cfg) {
  budget.validate();
  cfg.validate();
  const std::size_t d = obs.size();
  if (d != proxy.spec.input_dim()) throw ShapeError("observation does not match proxy input");
  if (target >= proxy.spec.output_dim()) throw ArgumentError("target action out of range");

  MlpTrace tr;
  Vec x(obs.begin(), obs.end());
  proxy.forward(x, tr);
  PerturbResult best;
  best.perturbed = x;
  best.margin = cw_margin(tr.logits(), target, cfg.kappa);
  if (cfg.record_trace) best.trace.push_back({0, best.margin, 0.0, 0.0});

  if (best.margin > 0.0 && budget.epsilon > 0.0) {
    CwObjectiveHead head{Vec(obs.begin(), obs.end()), target, cfg.c, cfg.kappa};
    Vec delta(d, 0.0), m(d, 0.0), v(d, 0.0), d_in(d);
    constexpr double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
    for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
      HeadValue hv = evaluate_head(head, tr.logits(), x);
      mlp_backward(proxy.params, proxy.spec, tr, hv.d_logits, nullptr, d_in);
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(it));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(it));
      for (std::size_t i = 0; i < d; ++i) {
        double g = d_in[i] + hv.d_input_direct[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        delta[i] -= cfg.step_size * (m[i] / c1) / (std::sqrt(v[i] / c2) + adam_eps);
        delta[i] = std::clamp(delta[i], -budget.epsilon, budget.epsilon);
        x[i] = budget.apply(obs[i], delta[i]);
        delta[i] = x[i] - obs[i];
      }
      proxy.forward(x, tr);
      double f = cw_margin(tr.logits(), target, cfg.kappa);
      double l2 = l2_distance(obs, x);
      if (cfg.record_trace) best.trace.push_back({it, f, l2, linf_distance(obs, x)});
      if (f < best.margin || (f == best.margin && l2 < best.l2)) {
        best.margin = f;
        best.l2 = l2;
        best.perturbed = x;
      }
      best.iters_used = it;
      if (cfg.early_stop && f == 0.0) break;
    }
  }

  best.l2 = l2_distance(obs, best.perturbed);
  best.linf = linf_distance(obs, best.perturbed);
  best.success_on_proxy = argmax(proxy.forward(best.perturbed)) == target;
  return best;
}

using PolicyQuery = std::function<std::size_t(std::span<const double>)>;

/// True iff the queried policy picks `target` on the perturbed observation.
inline bool verify(const PolicyQuery& policy, std::span<const double> perturbed, std::size_t target) {
  return policy(perturbed) == target;
}

}  // namespace adapam
