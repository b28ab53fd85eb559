/*
 * Copyright 2026 The speccal Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "speccal/gp_scaling.h"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "speccal/random.h"

namespace speccal {
namespace {

constexpr double kNugget = 1e-4;
constexpr int kPatience = 8;
constexpr double kMinImprovement = 1e-6;

// Sorts raw knot values and lifts them to a strictly increasing sequence.
// source[j] is the raw index whose value determines projected[j].
void project_monotone(std::span<const double> raw, std::span<const double> knots,
                      double min_slope, std::vector<double>& projected,
                      std::vector<int>& source) {
  const std::size_t g = raw.size();
  source.resize(g);
  std::iota(source.begin(), source.end(), 0);
  std::stable_sort(source.begin(), source.end(), [&](int a, int b) { return raw[a] < raw[b]; });
  projected.resize(g);
  projected[0] = raw[source[0]];
  for (std::size_t j = 1; j < g; ++j) {
    const double floor_value = projected[j - 1] + min_slope * (knots[j] - knots[j - 1]);
    if (raw[source[j]] < floor_value) {
      projected[j] = floor_value;
      source[j] = source[j - 1];
    } else {
      projected[j] = raw[source[j]];
    }
  }
}

// g(u) = (1 - w) f[lo] + w f[lo + 1] + offset.
struct InterpWeight {
  int lo = 0;
  double w = 0.0;
  double offset = 0.0;
};

InterpWeight interp_weight(std::span<const double> knots, double u) {
  const int g = static_cast<int>(knots.size());
  if (u <= knots.front()) return {0, 0.0, u - knots.front()};
  if (u >= knots.back()) return {g - 2, 1.0, u - knots.back()};
  const double h = (knots.back() - knots.front()) / (g - 1);
  int lo = std::min(static_cast<int>((u - knots.front()) / h), g - 2);
  // Equal spacing can put u a hair outside [knots[lo], knots[lo+1]].
  while (lo > 0 && u < knots[lo]) --lo;
  while (lo < g - 2 && u > knots[lo + 1]) ++lo;
  return {lo, (u - knots[lo]) / (knots[lo + 1] - knots[lo]), 0.0};
}

double eval_interp(const InterpWeight& iw, std::span<const double> f) {
  return (1.0 - iw.w) * f[iw.lo] + iw.w * f[iw.lo + 1] + iw.offset;
}

std::vector<std::vector<double>> draw_knot_samples(const GpScalingMap& map) {
  Rng rng(map.seed);
  const std::size_t g = map.knots.size();
  std::vector<double> raw(g);
  std::vector<int> source;
  std::vector<std::vector<double>> draws(map.samples);
  for (auto& f : draws) {
    for (std::size_t j = 0; j < g; ++j) {
      const double eps = rng.normal();
      raw[j] = map.mean[j] + std::sqrt(map.variance[j]) * eps;
    }
    project_monotone(raw, map.knots, map.min_slope, f, source);
  }
  return draws;
}

// Mean over draws of softmax(logit_scale * g(u)); writes into `out`.
void mixture_probs(const GpScalingMap& map, const std::vector<std::vector<double>>& draws,
                   std::span<const double> logits, std::vector<double>& out) {
  const std::size_t k = logits.size();
  thread_local std::vector<InterpWeight> iw;
  thread_local std::vector<double> z;
  iw.resize(k);
  z.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    iw[c] = interp_weight(map.knots, (logits[c] - map.logit_mean) / map.logit_scale);
  }
  out.assign(k, 0.0);
  for (const auto& f : draws) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      z[c] = map.logit_scale * eval_interp(iw[c], f);
      m = std::max(m, z[c]);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      z[c] = std::exp(z[c] - m);
      sum += z[c];
    }
    for (std::size_t c = 0; c < k; ++c) out[c] += z[c] / sum;
  }
  const double inv = 1.0 / static_cast<double>(draws.size());
  double total = 0.0;
  for (double& p : out) {
    p *= inv;
    total += p;
  }
  for (double& p : out) p /= total;
}

double validation_nll(const GpScalingMap& map, const LogitDataset& data) {
  const auto draws = draw_knot_samples(map);
  std::vector<double> p;
  double total = 0.0;
  for (const auto& r : data.records) {
    mixture_probs(map, draws, r.logits, p);
    total -= std::log(std::max(p[r.label], 1e-300));
  }
  return total / static_cast<double>(data.records.size());
}

double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct Adam {
  explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
  void step(std::vector<double>& x, const std::vector<double>& grad, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(0.9, t);
    const double c2 = 1.0 - std::pow(0.999, t);
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * grad[i];
      v[i] = 0.999 * v[i] + 0.001 * grad[i] * grad[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-8);
    }
  }
  std::vector<double> m, v;
  int t = 0;
};

}  // namespace

GpScalingMap fit_gp_scaling(const LogitDataset& validation, const GpFitOptions& options,
                            GpFitDiagnostics* diagnostics) {
  require_fit_split(validation, "GP scaling");
  if (options.knots < 5) throw ValidationError("GP scaling needs at least 5 knots");
  if (options.samples < 1) throw ValidationError("GP scaling needs at least one sample");
  if (options.steps < 0) throw ValidationError("negative step budget");

  GpScalingMap map;
  map.num_classes = validation.num_classes;
  map.samples = options.samples;
  map.seed = options.seed;

  std::vector<double> all;
  all.reserve(validation.records.size() * validation.num_classes);
  for (const auto& r : validation.records) all.insert(all.end(), r.logits.begin(), r.logits.end());
  const double n_all = static_cast<double>(all.size());
  map.logit_mean = std::accumulate(all.begin(), all.end(), 0.0) / n_all;
  double ss = 0.0;
  for (double z : all) ss += (z - map.logit_mean) * (z - map.logit_mean);
  map.logit_scale = std::sqrt(ss / n_all);
  if (!(map.logit_scale > 0.0)) throw ValidationError("validation logits are constant");

  std::vector<double> u(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) u[i] = (all[i] - map.logit_mean) / map.logit_scale;
  std::sort(u.begin(), u.end());
  const auto distinct = static_cast<std::size_t>(std::unique(u.begin(), u.end()) - u.begin());
  if (distinct < static_cast<std::size_t>(options.knots)) {
    throw ValidationError("GP scaling: " + std::to_string(options.knots) +
                          " knots but only " + std::to_string(distinct) +
                          " distinct logit values");
  }
  for (std::size_t i = 0; i < all.size(); ++i) u[i] = (all[i] - map.logit_mean) / map.logit_scale;
  std::sort(u.begin(), u.end());
  const double lo = percentile(u, 0.01);
  const double hi = percentile(u, 0.99);
  if (!(hi > lo)) throw ValidationError("GP scaling: degenerate logit range");

  const int g = options.knots;
  map.knots.resize(g);
  for (int j = 0; j < g; ++j) map.knots[j] = lo + (hi - lo) * j / (g - 1);
  map.length_scale = options.length_scale > 0.0 ? options.length_scale : (hi - lo) / 4.0;
  map.signal_variance = options.signal_variance;

  // Prior N(knots, K) with an RBF kernel plus a small nugget.
  Eigen::MatrixXd kernel(g, g);
  for (int a = 0; a < g; ++a) {
    for (int b = 0; b < g; ++b) {
      const double d = map.knots[a] - map.knots[b];
      kernel(a, b) = map.signal_variance * std::exp(-0.5 * d * d / (map.length_scale * map.length_scale));
    }
    kernel(a, a) += kNugget * map.signal_variance;
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(kernel);
  if (llt.info() != Eigen::Success) throw ValidationError("GP prior covariance is not SPD");
  const Eigen::MatrixXd k_inv = llt.solve(Eigen::MatrixXd::Identity(g, g));

  std::vector<double> mu(map.knots);
  std::vector<double> log_sd(g, std::log(options.initial_stddev));
  auto to_map = [&](GpScalingMap& out) {
    out.mean = mu;
    out.variance.resize(g);
    for (int j = 0; j < g; ++j) out.variance[j] = std::exp(2.0 * log_sd[j]);
  };
  to_map(map);

  GpFitDiagnostics diag;
  diag.initial_nll = validation_nll(map, validation);
  diag.best_nll = diag.initial_nll;

  const std::size_t n = validation.records.size();
  const std::size_t k = static_cast<std::size_t>(validation.num_classes);
  const int s_count = options.samples;

  std::vector<InterpWeight> weights(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      weights[i * k + c] = interp_weight(
          map.knots, (validation.records[i].logits[c] - map.logit_mean) / map.logit_scale);
    }
  }

  Rng rng(mix_seed(options.seed, 1));
  Adam adam_mu(g), adam_sd(g);
  std::vector<std::vector<double>> eps(s_count, std::vector<double>(g));
  std::vector<std::vector<double>> f(s_count);
  std::vector<std::vector<int>> src(s_count);
  std::vector<double> probs(static_cast<std::size_t>(s_count) * n * k);
  std::vector<double> raw(g), grad_mu(g), grad_sd(g), grad_f(g);
  std::vector<double> z(k);
  GpScalingMap best = map;
  int stale = 0;

  for (int step = 1; step <= options.steps; ++step) {
    for (int s = 0; s < s_count; ++s) {
      for (int j = 0; j < g; ++j) {
        eps[s][j] = rng.normal();
        raw[j] = mu[j] + std::exp(log_sd[j]) * eps[s][j];
      }
      project_monotone(raw, map.knots, map.min_slope, f[s], src[s]);
      for (std::size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
          z[c] = map.logit_scale * eval_interp(weights[i * k + c], f[s]);
          m = std::max(m, z[c]);
        }
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          z[c] = std::exp(z[c] - m);
          sum += z[c];
        }
        double* p = &probs[(static_cast<std::size_t>(s) * n + i) * k];
        for (std::size_t c = 0; c < k; ++c) p[c] = z[c] / sum;
      }
    }

    std::fill(grad_mu.begin(), grad_mu.end(), 0.0);
    std::fill(grad_sd.begin(), grad_sd.end(), 0.0);
    std::vector<double> resp(s_count);
    std::vector<std::vector<double>> grad_fs(s_count, std::vector<double>(g, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      const int y = validation.records[i].label;
      double total = 0.0;
      for (int s = 0; s < s_count; ++s) {
        resp[s] = probs[(static_cast<std::size_t>(s) * n + i) * k + y];
        total += resp[s];
      }
      if (!(total > 0.0)) continue;
      for (int s = 0; s < s_count; ++s) {
        const double w = resp[s] / total;
        const double* p = &probs[(static_cast<std::size_t>(s) * n + i) * k];
        for (std::size_t c = 0; c < k; ++c) {
          const double d_logit = w * (p[c] - (static_cast<int>(c) == y ? 1.0 : 0.0)) /
                                 static_cast<double>(n);
          const double d_g = map.logit_scale * d_logit;
          const auto& iw = weights[i * k + c];
          grad_fs[s][iw.lo] += (1.0 - iw.w) * d_g;
          grad_fs[s][iw.lo + 1] += iw.w * d_g;
        }
      }
    }
    for (int s = 0; s < s_count; ++s) {
      for (int j = 0; j < g; ++j) {
        const int r = src[s][j];
        const double gr = grad_fs[s][j];
        grad_mu[r] += gr;
        grad_sd[r] += gr * eps[s][r] * std::exp(log_sd[r]);
      }
    }
    // KL(q || p) gradients, scaled like the mean NLL.
    const double inv_n = 1.0 / static_cast<double>(n);
    for (int a = 0; a < g; ++a) {
      double acc = 0.0;
      for (int b = 0; b < g; ++b) acc += k_inv(a, b) * (mu[b] - map.knots[b]);
      grad_mu[a] += acc * inv_n;
      grad_sd[a] += (k_inv(a, a) * std::exp(2.0 * log_sd[a]) - 1.0) * inv_n;
    }
    adam_mu.step(mu, grad_mu, options.step_size);
    adam_sd.step(log_sd, grad_sd, options.step_size);
    diag.steps_run = step;

    if (step % options.eval_every == 0 || step == options.steps) {
      GpScalingMap candidate = map;
      to_map(candidate);
      const double nll = validation_nll(candidate, validation);
      if (nll < diag.best_nll - kMinImprovement) {
        diag.best_nll = nll;
        diag.best_step = step;
        best = std::move(candidate);
        stale = 0;
      } else if (++stale >= kPatience) {
        diag.converged = true;
        break;
      }
    }
  }
  if (options.steps == 0) diag.converged = true;
  if (!diag.converged) {
    diag.warnings.push_back("GP scaling did not converge within " +
                            std::to_string(options.steps) + " steps; returning best iterate");
  }
  if (diagnostics) *diagnostics = diag;
  return best;
}

ProbVector apply_gp_scaling(const GpScalingMap& map, std::span<const double> logits) {
  if (static_cast<int>(logits.size()) != map.num_classes) {
    throw ValidationError("GP map fitted for K=" + std::to_string(map.num_classes) +
                          " applied to " + std::to_string(logits.size()) + " logits");
  }
  for (double z : logits) {
    if (!std::isfinite(z)) throw ValidationError("non-finite logit passed to GP scaling");
  }
  const auto draws = draw_knot_samples(map);
  std::vector<double> p;
  mixture_probs(map, draws, logits, p);
  return ProbVector(std::move(p));
}

double gp_mean_function(const GpScalingMap& map, double standardized_logit) {
  std::vector<double> f;
  std::vector<int> source;
  project_monotone(map.mean, map.knots, map.min_slope, f, source);
  return eval_interp(interp_weight(map.knots, standardized_logit), f);
}

GpScaling::GpScaling(GpScalingMap map) : map_(std::move(map)) {
  const std::size_t g = map_.knots.size();
  if (g < 2 || map_.mean.size() != g || map_.variance.size() != g) {
    throw ValidationError("GP map: knot, mean and variance lengths differ");
  }
  for (std::size_t j = 1; j < g; ++j) {
    if (!(map_.knots[j] > map_.knots[j - 1])) {
      throw ValidationError("GP map: knots must be strictly increasing");
    }
  }
  for (double v : map_.variance) {
    if (!(v >= 0.0)) throw ValidationError("GP map: negative variance");
  }
  if (map_.samples < 1 || !(map_.logit_scale > 0.0)) {
    throw ValidationError("GP map: bad sample count or logit scale");
  }
}

std::string GpScaling::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = kind();
  j["K"] = map_.num_classes;
  j["fit_split"] = fit_split().to_string();
  j["logit_mean"] = map_.logit_mean;
  j["logit_scale"] = map_.logit_scale;
  j["knots"] = map_.knots;
  j["mean"] = map_.mean;
  j["variance"] = map_.variance;
  j["length_scale"] = map_.length_scale;
  j["signal_variance"] = map_.signal_variance;
  j["samples"] = map_.samples;
  j["seed"] = map_.seed;
  j["min_slope"] = map_.min_slope;
  return j.dump(2);
}

}  // namespace speccal
