// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fq/error.hpp"
#include "fq/rng.hpp"

namespace fq {

enum class Component : std::uint8_t { kMinus = 0, kPlus = 1 };

inline const char* to_string(Component c) { return c == Component::kMinus ? "minus" : "plus"; }

struct Gaussian {
  double mean = 0.0;
  double stddev = 1.0;
  double weight = 0.5;

  double log_density(double x) const {
    const double z = (x - mean) / stddev;
    return -0.5 * z * z - std::log(stddev) - 0.5 * std::log(2.0 * std::numbers::pi);
  }

  friend bool operator==(const Gaussian&, const Gaussian&) = default;
};

// Two-component 1-D Gaussian mixture over a layer's unpruned weights.
struct MixtureModel {
  Gaussian minus;
  Gaussian plus;
  double log_likelihood = 0.0;
  int iterations = 0;
  std::vector<double> log_likelihood_trace;  // one entry per evaluated parameter set

  const Gaussian& component(Component c) const { return c == Component::kMinus ? minus : plus; }
  Gaussian& component(Component c) { return c == Component::kMinus ? minus : plus; }
};

struct EmOptions {
  int max_iters = 200;
  double tol = 1e-7;  // on the mean per-sample log-likelihood
  double sigma_floor = 1e-8;
};

namespace detail {

struct MomentSummary {
  double mean = 0.0;
  double stddev = 0.0;
};

inline MomentSummary moments(std::span<const double> v) {
  MomentSummary s;
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

inline double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double log_weight(double w) {
  return w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
}

struct EStep {
  double log_likelihood = 0.0;
  double n[2] = {0.0, 0.0};
  double sx[2] = {0.0, 0.0};
};

inline EStep expectation(const MixtureModel& m, std::span<const double> values) {
  EStep e;
  const double lw_minus = log_weight(m.minus.weight);
  const double lw_plus = log_weight(m.plus.weight);
  for (double x : values) {
    const double lm = lw_minus + m.minus.log_density(x);
    const double lp = lw_plus + m.plus.log_density(x);
    const double lse = log_sum_exp(lm, lp);
    e.log_likelihood += lse;
    const double r_minus = std::exp(lm - lse);
    const double r_plus = std::exp(lp - lse);
    e.n[0] += r_minus;
    e.n[1] += r_plus;
    e.sx[0] += r_minus * x;
    e.sx[1] += r_plus * x;
  }
  return e;
}

}  // namespace detail

// EM for the two-component mixture. Initialisation: each component from the
// moments of the negative / positive values with equal mixing weights; if one
// sign is absent, the sorted values are split at the median instead.
inline MixtureModel fit_em(std::span<const double> values, const EmOptions& opt = {}) {
  require(values.size() >= 2, ErrorKind::kDegenerateInput, "EM needs at least 2 values");
  {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    require(*lo != *hi, ErrorKind::kDegenerateInput, "EM needs at least 2 distinct values");
  }
  for (double v : values) require(std::isfinite(v), ErrorKind::kInvalidArgument, "non-finite value in EM input");

  std::vector<double> neg, pos;
  for (double v : values) {
    if (v < 0.0) neg.push_back(v);
    if (v > 0.0) pos.push_back(v);
  }
  if (neg.empty() || pos.empty()) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t half = sorted.size() / 2;
    neg.assign(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(half));
    pos.assign(sorted.begin() + static_cast<std::ptrdiff_t>(half), sorted.end());
  }
  const auto init_neg = detail::moments(neg);
  const auto init_pos = detail::moments(pos);

  MixtureModel m;
  m.minus = {init_neg.mean, std::max(init_neg.stddev, opt.sigma_floor), 0.5};
  m.plus = {init_pos.mean, std::max(init_pos.stddev, opt.sigma_floor), 0.5};

  const double count = static_cast<double>(values.size());
  auto e = detail::expectation(m, values);
  m.log_likelihood = e.log_likelihood;
  m.log_likelihood_trace.push_back(e.log_likelihood);

  for (int it = 0; it < opt.max_iters; ++it) {
    MixtureModel next = m;
    for (int c = 0; c < 2; ++c) {
      Gaussian& g = next.component(static_cast<Component>(c));
      g.weight = e.n[c] / count;
      if (e.n[c] <= 0.0) continue;  // vanished component keeps its location
      g.mean = e.sx[c] / e.n[c];
    }
    // Second pass for the variances around the updated means.
    double ss[2] = {0.0, 0.0};
    const double lw_minus = detail::log_weight(m.minus.weight);
    const double lw_plus = detail::log_weight(m.plus.weight);
    for (double x : values) {
      const double lm = lw_minus + m.minus.log_density(x);
      const double lp = lw_plus + m.plus.log_density(x);
      const double lse = detail::log_sum_exp(lm, lp);
      ss[0] += std::exp(lm - lse) * (x - next.minus.mean) * (x - next.minus.mean);
      ss[1] += std::exp(lp - lse) * (x - next.plus.mean) * (x - next.plus.mean);
    }
    for (int c = 0; c < 2; ++c) {
      if (e.n[c] <= 0.0) continue;
      Gaussian& g = next.component(static_cast<Component>(c));
      g.stddev = std::max(std::sqrt(ss[c] / e.n[c]), opt.sigma_floor);
    }
    next.plus.weight = 1.0 - next.minus.weight;

    auto e_next = detail::expectation(next, values);
    next.log_likelihood = e_next.log_likelihood;
    next.log_likelihood_trace.push_back(e_next.log_likelihood);
    next.iterations = it + 1;
    const double gain = (e_next.log_likelihood - m.log_likelihood) / count;
    m = std::move(next);
    e = e_next;
    if (gain < opt.tol) break;
  }
  return m;
}

inline MixtureModel fit_em(std::span<const float> values, const EmOptions& opt = {}) {
  std::vector<double> v(values.begin(), values.end());
  return fit_em(std::span<const double>(v), opt);
}

// Posterior component probabilities lambda_c f(x | c) / q_mix(x). When both
// weighted densities underflow to zero in double precision the value is
// assigned to the nearer mean outright.
inline std::pair<double, double> responsibilities(const MixtureModel& m, double x) {
  const double lm = detail::log_weight(m.minus.weight) + m.minus.log_density(x);
  const double lp = detail::log_weight(m.plus.weight) + m.plus.log_density(x);
  constexpr double kLogSmallest = -745.1332191019411;  // log(denorm_min)
  if (std::max(lm, lp) < kLogSmallest) {
    const bool plus = std::fabs(x - m.plus.mean) < std::fabs(x - m.minus.mean);
    return plus ? std::pair{0.0, 1.0} : std::pair{1.0, 0.0};
  }
  const double lse = detail::log_sum_exp(lm, lp);
  return {std::exp(lm - lse), std::exp(lp - lse)};
}

// Per-position component choice m_theta. Entries at pruned positions are
// carried along but never read.
struct AssignmentMask {
  std::vector<Component> component;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return component.size(); }
  friend bool operator==(const AssignmentMask&, const AssignmentMask&) = default;
};

// Draws m_theta for every position i from its categorical posterior using the
// uniform variate uniform_at(seed, i): plus iff u < p_plus.
template <typename T>
AssignmentMask sample_assignments(const MixtureModel& m, std::span<const T> values, std::uint64_t seed) {
  AssignmentMask mask;
  mask.seed = seed;
  mask.component.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double p_plus = responsibilities(m, static_cast<double>(values[i])).second;
    mask.component[i] = uniform_at(seed, i) < p_plus ? Component::kPlus : Component::kMinus;
  }
  return mask;
}

inline double population_variance(std::span<const double> v) {
  const auto s = detail::moments(v);
  return s.stddev * s.stddev;
}

// ((mu1 - mu2)^2 + (sigma1 - sigma2)^2) / sigma^2 with sigma^2 the variance of
// the whole (unpruned) weight distribution.
inline double wasserstein_separation(const MixtureModel& m, double total_variance) {
  require(total_variance > 0.0 && std::isfinite(total_variance), ErrorKind::kInvalidArgument,
          "total variance must be positive");
  const double dm = m.minus.mean - m.plus.mean;
  const double ds = m.minus.stddev - m.plus.stddev;
  return (dm * dm + ds * ds) / total_variance;
}

}  // namespace fq
