#pragma once

// Minimal numerical core: shaped arrays, dense feed-forward networks with
// reverse-mode gradients for parameters and inputs, Adam and Polyak updates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "adapam/errors.hpp"
#include "adapam/rng.hpp"

namespace adapam {

using Vec = std::vector<double>;

struct Array {
  std::vector<std::size_t> shape;
  Vec data;

  Array() = default;
  Array(std::vector<std::size_t> s, Vec d) : shape(std::move(s)), data(std::move(d)) {
    if (count(shape) != data.size()) throw ShapeError("array shape does not match data length");
  }

  static Array zeros(std::vector<std::size_t> s) {
    std::size_t n = count(s);
    return Array(std::move(s), Vec(n, 0.0));
  }
  static Array vector(Vec d) {
    std::size_t n = d.size();
    return Array({n}, std::move(d));
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  bool operator==(const Array&) const = default;
};

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

/// Ordered, named collection of arrays. Names are unique; order is the
/// serialization order.
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(std::uint64_t seed) : seed_(seed) {}

  void add(std::string name, Array value) {
    for (const auto& [n, _] : entries_)
      if (n == name) throw ArgumentError("duplicate parameter name: " + name);
    entries_.emplace_back(std::move(name), std::move(value));
  }

  std::size_t size() const { return entries_.size(); }
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Array& at(std::size_t i) { return entries_[i].second; }
  const Array& at(std::size_t i) const { return entries_[i].second; }

  const Array& get(const std::string& name) const {
    for (const auto& [n, a] : entries_)
      if (n == name) return a;
    throw ArgumentError("no parameter named " + name);
  }
  bool contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const auto& e) { return e.first == name; });
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  /// Same names and shapes, all zeros.
  ParameterSet zeros_like() const {
    ParameterSet z(seed_);
    for (const auto& [n, a] : entries_) z.entries_.emplace_back(n, Array::zeros(a.shape));
    return z;
  }

  bool same_layout(const ParameterSet& o) const {
    if (o.entries_.size() != entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].first != o.entries_[i].first ||
          entries_[i].second.shape != o.entries_[i].second.shape)
        return false;
    return true;
  }

  void fill(double v) {
    for (auto& e : entries_) std::fill(e.second.data.begin(), e.second.data.end(), v);
  }

  /// this += scale * other
  void add_scaled(const ParameterSet& other, double scale) {
    require_layout(other);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto& d = entries_[i].second.data;
      const auto& s = other.entries_[i].second.data;
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += scale * s[k];
    }
  }

  bool finite() const {
    return std::all_of(entries_.begin(), entries_.end(),
                       [](const auto& e) { return all_finite(e.second.data); });
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& e : entries_)
      for (double x : e.second.data) m = std::max(m, std::abs(x));
    return m;
  }

  void require_layout(const ParameterSet& o) const {
    if (!same_layout(o)) throw ShapeError("parameter sets differ in names or shapes");
  }

  bool operator==(const ParameterSet& o) const {
    return seed_ == o.seed_ && entries_ == o.entries_;
  }

 private:
  std::vector<std::pair<std::string, Array>> entries_;
  std::uint64_t seed_ = 0;
};

enum class Activation { tanh, relu };

inline const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw ConfigError("unknown activation: " + s);
}

/// Dense network shape. The output layer is always linear (logits).
struct MlpSpec {
  std::vector<std::size_t> layer_sizes;
  Activation hidden = Activation::tanh;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t layers() const { return layer_sizes.size() - 1; }

  void validate() const {
    if (layer_sizes.size() < 2) throw ConfigError("MLP needs at least two layer sizes");
    for (auto s : layer_sizes)
      if (s == 0) throw ConfigError("MLP layer size must be positive");
  }
  bool operator==(const MlpSpec&) const = default;
};

/// Weights W{k} are (fan_in x fan_out) row-major, drawn uniformly from
/// +-sqrt(6/(fan_in+fan_out)); biases b{k} are zero.
inline ParameterSet mlp_init(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParameterSet p(seed);
  for (std::size_t k = 0; k < spec.layers(); ++k) {
    std::size_t in = spec.layer_sizes[k], out = spec.layer_sizes[k + 1];
    double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    Array w = Array::zeros({in, out});
    for (auto& x : w.data) x = rng.uniform(-bound, bound);
    p.add("W" + std::to_string(k), std::move(w));
    p.add("b" + std::to_string(k), Array::zeros({out}));
  }
  return p;
}

inline void check_mlp_layout(const ParameterSet& p, const MlpSpec& spec) {
  if (p.size() != 2 * spec.layers()) throw ShapeError("parameter set does not match MLP spec");
  for (std::size_t k = 0; k < spec.layers(); ++k) {
    std::size_t in = spec.layer_sizes[k], out = spec.layer_sizes[k + 1];
    if (p.at(2 * k).shape != std::vector<std::size_t>{in, out} ||
        p.at(2 * k + 1).shape != std::vector<std::size_t>{out})
      throw ShapeError("parameter set does not match MLP spec");
  }
}

/// Per-layer activations kept for the backward pass. Reusable across calls
/// to avoid reallocations in inner loops.
struct MlpTrace {
  std::vector<Vec> acts;  // acts[0] = input, acts.back() = logits

  std::span<const double> logits() const { return acts.back(); }
};

inline void mlp_forward(const ParameterSet& p, const MlpSpec& spec, std::span<const double> input,
                        MlpTrace& trace) {
  if (input.size() != spec.input_dim()) throw ShapeError("MLP input has wrong dimension");
  const std::size_t L = spec.layers();
  trace.acts.resize(L + 1);
  trace.acts[0].assign(input.begin(), input.end());
  for (std::size_t k = 0; k < L; ++k) {
    const std::size_t in = spec.layer_sizes[k], out = spec.layer_sizes[k + 1];
    const double* W = p.at(2 * k).data.data();
    const Vec& x = trace.acts[k];
    Vec& z = trace.acts[k + 1];
    z.assign(p.at(2 * k + 1).data.begin(), p.at(2 * k + 1).data.end());
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = x[i];
      const double* row = W + i * out;
      for (std::size_t j = 0; j < out; ++j) z[j] += xi * row[j];
    }
    if (k + 1 < L) {
      if (spec.hidden == Activation::tanh)
        for (auto& v : z) v = std::tanh(v);
      else
        for (auto& v : z) v = v > 0.0 ? v : 0.0;
    }
  }
}

/// Logits of the network; a pure function of (params, input).
inline Array mlp_forward(const ParameterSet& p, const MlpSpec& spec, const Array& input) {
  check_mlp_layout(p, spec);
  MlpTrace t;
  mlp_forward(p, spec, input.data, t);
  return Array::vector(t.acts.back());
}

/// Accumulates d(loss)/d(params) into `d_params` given d(loss)/d(logits).
/// Writes d(loss)/d(input) into `d_input` when it is non-empty.
inline void mlp_backward(const ParameterSet& p, const MlpSpec& spec, const MlpTrace& trace,
                         std::span<const double> d_logits, ParameterSet* d_params,
                         std::span<double> d_input = {}) {
  const std::size_t L = spec.layers();
  Vec dz(d_logits.begin(), d_logits.end());
  Vec dx;
  for (std::size_t k = L; k-- > 0;) {
    const std::size_t in = spec.layer_sizes[k], out = spec.layer_sizes[k + 1];
    const Vec& x = trace.acts[k];
    const double* W = p.at(2 * k).data.data();
    if (d_params) {
      double* dW = d_params->at(2 * k).data.data();
      double* db = d_params->at(2 * k + 1).data.data();
      for (std::size_t i = 0; i < in; ++i) {
        const double xi = x[i];
        double* row = dW + i * out;
        for (std::size_t j = 0; j < out; ++j) row[j] += xi * dz[j];
      }
      for (std::size_t j = 0; j < out; ++j) db[j] += dz[j];
    }
    if (k == 0 && d_input.empty()) break;
    dx.assign(in, 0.0);
    for (std::size_t i = 0; i < in; ++i) {
      const double* row = W + i * out;
      double s = 0.0;
      for (std::size_t j = 0; j < out; ++j) s += row[j] * dz[j];
      dx[i] = s;
    }
    if (k > 0) {
      if (spec.hidden == Activation::tanh)
        for (std::size_t i = 0; i < in; ++i) dx[i] *= 1.0 - x[i] * x[i];
      else
        for (std::size_t i = 0; i < in; ++i) dx[i] = x[i] > 0.0 ? dx[i] : 0.0;
    }
    dz.swap(dx);
  }
  if (!d_input.empty()) {
    if (d_input.size() != spec.input_dim()) throw ShapeError("d_input has wrong dimension");
    std::copy(dz.begin(), dz.end(), d_input.begin());
  }
}

/// A network value: architecture plus parameters.
struct Network {
  MlpSpec spec;
  ParameterSet params;

  static Network create(MlpSpec spec, std::uint64_t seed) {
    auto p = mlp_init(spec, seed);
    return Network{std::move(spec), std::move(p)};
  }

  Vec forward(std::span<const double> input) const {
    MlpTrace t;
    mlp_forward(params, spec, input, t);
    return std::move(t.acts.back());
  }
  void forward(std::span<const double> input, MlpTrace& trace) const {
    mlp_forward(params, spec, input, trace);
  }
  bool operator==(const Network&) const = default;
};

// ---------------------------------------------------------------------------
// Softmax family

inline Vec softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax of empty input");
  double m = *std::max_element(logits.begin(), logits.end());
  Vec p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] = std::exp(logits[i] - m));
  for (auto& v : p) v /= s;
  return p;
}

inline Array softmax(const Array& logits) {
  if (logits.shape.size() != 1) throw ShapeError("softmax expects a 1-D array");
  return Array::vector(softmax(std::span<const double>(logits.data)));
}

inline Vec log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("log_softmax of empty input");
  double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double z : logits) s += std::exp(z - m);
  double lse = m + std::log(s);
  Vec out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

/// Backward through softmax: d_logits = p * (d_p - <d_p, p>).
inline Vec softmax_backward(std::span<const double> p, std::span<const double> d_p) {
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * d_p[i];
  Vec dz(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) dz[i] = p[i] * (d_p[i] - dot);
  return dz;
}

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

/// Lowest index among the maximal entries.
inline std::size_t argmax(std::span<const double> xs) {
  return static_cast<std::size_t>(std::max_element(xs.begin(), xs.end()) - xs.begin());
}
inline std::size_t argmin(std::span<const double> xs) {
  return static_cast<std::size_t>(std::min_element(xs.begin(), xs.end()) - xs.begin());
}

/// Logit-margin term: max(max_{a != target} z_a - z_target + kappa, 0).
inline double cw_margin(std::span<const double> logits, std::size_t target, double kappa = 0.0) {
  double best_other = -INFINITY;
  for (std::size_t a = 0; a < logits.size(); ++a)
    if (a != target) best_other = std::max(best_other, logits[a]);
  return std::max(best_other - logits[target] + kappa, 0.0);
}

// ---------------------------------------------------------------------------
// Registered scalar loss heads

/// -log softmax(z)[target]
struct CrossEntropyHead {
  std::size_t target;
};

/// Single-logit binary cross-entropy: -(y log sigmoid(z) + (1-y) log(1-sigmoid(z))).
struct BinaryCrossEntropyHead {
  double label;
};

/// 0.5 * (z[index] - target)^2
struct MseHead {
  std::size_t index;
  double target;
};

/// -weight * log softmax(z)[action] - entropy_weight * H(softmax(z))
struct WeightedLogProbHead {
  std::size_t action;
  double weight;
  double entropy_weight = 0.0;
};

/// ||x - original||_2^2 + c * margin(z(x), target, kappa); the only head with
/// a direct input term.
struct CwObjectiveHead {
  Vec original;
  std::size_t target;
  double c;
  double kappa = 0.0;
};

using LossHead =
    std::variant<CrossEntropyHead, BinaryCrossEntropyHead, MseHead, WeightedLogProbHead, CwObjectiveHead>;

struct HeadValue {
  double loss = 0.0;
  Vec d_logits;
  Vec d_input_direct;  // only for heads that depend on the input directly
};

inline HeadValue evaluate_head(const LossHead& head, std::span<const double> z,
                               std::span<const double> input) {
  HeadValue out;
  out.d_logits.assign(z.size(), 0.0);
  auto need_index = [&](std::size_t i) {
    if (i >= z.size()) throw ConfigError("loss head index out of range");
  };
  std::visit(
      [&](const auto& h) {
        using H = std::decay_t<decltype(h)>;
        if constexpr (std::is_same_v<H, CrossEntropyHead>) {
          need_index(h.target);
          Vec p = softmax(z);
          out.loss = -std::log(std::max(p[h.target], 1e-300));
          for (std::size_t i = 0; i < z.size(); ++i) out.d_logits[i] = p[i] - (i == h.target ? 1.0 : 0.0);
        } else if constexpr (std::is_same_v<H, BinaryCrossEntropyHead>) {
          if (z.size() != 1) throw ConfigError("binary cross-entropy needs a single logit");
          // -(y log s + (1-y) log(1-s)) = softplus(z) - y z
          out.loss = softplus(z[0]) - h.label * z[0];
          out.d_logits[0] = sigmoid(z[0]) - h.label;
        } else if constexpr (std::is_same_v<H, MseHead>) {
          need_index(h.index);
          double e = z[h.index] - h.target;
          out.loss = 0.5 * e * e;
          out.d_logits[h.index] = e;
        } else if constexpr (std::is_same_v<H, WeightedLogProbHead>) {
          need_index(h.action);
          Vec lp = log_softmax(z);
          Vec p(z.size());
          for (std::size_t i = 0; i < z.size(); ++i) p[i] = std::exp(lp[i]);
          double ent = 0.0;
          for (std::size_t i = 0; i < z.size(); ++i) ent -= p[i] * lp[i];
          out.loss = -h.weight * lp[h.action] - h.entropy_weight * ent;
          for (std::size_t i = 0; i < z.size(); ++i) {
            double d_logp = -h.weight * ((i == h.action ? 1.0 : 0.0) - p[i]);
            // dH/dz_i = -p_i (log p_i + H)
            double d_ent = -p[i] * (lp[i] + ent);
            out.d_logits[i] = d_logp - h.entropy_weight * d_ent;
          }
        } else {
          need_index(h.target);
          if (z.size() < 2) throw ArgumentError("margin needs at least two actions");
          if (h.original.size() != input.size()) throw ShapeError("C&W original has wrong dimension");
          double dist2 = 0.0;
          out.d_input_direct.assign(input.size(), 0.0);
          for (std::size_t i = 0; i < input.size(); ++i) {
            double d = input[i] - h.original[i];
            dist2 += d * d;
            out.d_input_direct[i] = 2.0 * d;
          }
          double f = cw_margin(z, h.target, h.kappa);
          out.loss = dist2 + h.c * f;
          if (f > 0.0) {
            std::size_t best = h.target == 0 ? 1 : 0;
            for (std::size_t a = 0; a < z.size(); ++a)
              if (a != h.target && z[a] > z[best]) best = a;
            out.d_logits[best] = h.c;
            out.d_logits[h.target] = -h.c;
          }
        }
      },
      head);
  return out;
}

struct GradResult {
  double loss = 0.0;
  ParameterSet d_params;
  Array d_input;
};

/// Loss of `head` composed with the network, and its gradients.
inline GradResult grad(const ParameterSet& params, const MlpSpec& spec, const Array& input,
                       const LossHead& head, bool want_input = true) {
  check_mlp_layout(params, spec);
  MlpTrace t;
  mlp_forward(params, spec, input.data, t);
  HeadValue hv = evaluate_head(head, t.logits(), input.data);
  GradResult r;
  r.loss = hv.loss;
  r.d_params = params.zeros_like();
  Vec d_in(want_input ? spec.input_dim() : 0);
  mlp_backward(params, spec, t, hv.d_logits, &r.d_params, d_in);
  if (want_input) {
    for (std::size_t i = 0; i < hv.d_input_direct.size(); ++i) d_in[i] += hv.d_input_direct[i];
    r.d_input = Array(input.shape, std::move(d_in));
  }
  if (!std::isfinite(r.loss)) throw NumericError("loss is not finite");
  return r;
}

// ---------------------------------------------------------------------------
// Optimizers

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ParameterSet m;
  ParameterSet v;
  std::uint64_t t = 0;

  static AdamState for_params(const ParameterSet& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
  bool operator==(const AdamState&) const = default;
};

/// In-place Adam update with bias correction.
inline void adam_update(ParameterSet& params, const ParameterSet& grads, AdamState& st, double lr,
                        const AdamConfig& cfg = {}) {
  params.require_layout(grads);
  params.require_layout(st.m);
  st.t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t e = 0; e < params.size(); ++e) {
    auto& w = params.at(e).data;
    const auto& g = grads.at(e).data;
    auto& m = st.m.at(e).data;
    auto& v = st.v.at(e).data;
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
  }
  if (!params.finite()) throw NumericError("parameters became non-finite");
}

inline std::pair<ParameterSet, AdamState> adam_step(ParameterSet params, const ParameterSet& grads,
                                                    AdamState state, double lr,
                                                    const AdamConfig& cfg = {}) {
  adam_update(params, grads, state, lr, cfg);
  return {std::move(params), std::move(state)};
}

/// Network paired with its optimizer state.
struct Trainable {
  Network net;
  AdamState opt;

  explicit Trainable(Network n) : net(std::move(n)), opt(AdamState::for_params(net.params)) {}
  void step(const ParameterSet& grads, double lr) { adam_update(net.params, grads, opt, lr); }
};

/// target' = mu * online + (1 - mu) * target, element-wise.
inline ParameterSet polyak_update(const ParameterSet& target, const ParameterSet& online, double mu) {
  target.require_layout(online);
  if (!(mu >= 0.0 && mu <= 1.0)) throw ArgumentError("polyak rate must lie in [0, 1]");
  ParameterSet out = target;
  for (std::size_t e = 0; e < out.size(); ++e) {
    auto& t = out.at(e).data;
    const auto& o = online.at(e).data;
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = mu * o[k] + (1.0 - mu) * t[k];
  }
  return out;
}

/// Scales `grads` down so its global L2 norm is at most `max_norm`.
inline void clip_grad_norm(ParameterSet& grads, double max_norm) {
  double s = 0.0;
  for (std::size_t e = 0; e < grads.size(); ++e)
    for (double g : grads.at(e).data) s += g * g;
  double n = std::sqrt(s);
  if (n > max_norm && n > 0.0) {
    double k = max_norm / n;
    for (std::size_t e = 0; e < grads.size(); ++e)
      for (double& g : grads.at(e).data) g *= k;
  }
}

}  // namespace adapam
