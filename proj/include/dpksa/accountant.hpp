// Copyright 2026 The DP-KSA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpksa {

// Renyi privacy-loss curve alpha -> eps(alpha), in nats, on a fixed grid of
// orders (all > 1). Composition is pointwise addition of curves.
struct RdpCurve {
  std::vector<double> orders;
  std::vector<double> eps;
};

// RDP that holds outside a failure event of mass delta1. delta1 = 0 is plain
// RDP. Failure masses add under composition.
struct ApproxRdpGuarantee {
  RdpCurve curve;
  double delta1 = 0.0;
};

struct DpGuarantee {
  double epsilon = 0.0;
  double delta = 0.0;
};

// Conversion output: the (eps, delta) guarantee plus the order that attained
// the minimum.
struct DpConversion {
  DpGuarantee guarantee;
  double alpha_star = 0.0;
};

struct CalibrationResult {
  double sigma = 0.0;
  double epsilon_em = 0.0;
  double alpha_star = 0.0;
  DpGuarantee achieved;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Log-spaced order grid. The conversion optimum for the EM + Gaussian-PTR
// composition at delta = 1e-4 falls well inside this range for every budget
// in the supported grid.
inline const std::vector<double>& default_rdp_orders() {
  static const std::vector<double> orders = {
      1.0 + 1.0 / 16.0, 1.25, 1.5, 2.0, 3.0,  4.0,  6.0,   8.0,   12.0,
      16.0,             24.0, 32.0, 48.0, 64.0, 128.0, 256.0, 512.0};
  return orders;
}

namespace detail {

// log(sinh(x)) without overflow: sinh overflows past x ~ 710, so switch to
// x - log 2 + log1p(-e^{-2x}) in the large regime.
inline double log_sinh(double x) {
  if (x > 30.0) return x - std::log(2.0) + std::log1p(-std::exp(-2.0 * x));
  return std::log(std::sinh(x));
}

inline void check_orders(const std::vector<double>& orders) {
  if (orders.empty()) throw std::invalid_argument("order grid is empty");
  for (double a : orders) {
    if (!(a > 1.0)) throw std::invalid_argument("all RDP orders must be > 1");
  }
}

}  // namespace detail

// RDP curve of a pure epsilon-DP mechanism (the exponential mechanism here):
//   eps(alpha) = min( alpha eps^2 / 2,
//                     log((sinh(alpha eps) - sinh((alpha-1) eps)) / sinh(eps))
//                       / (alpha - 1) ).
// The sinh expression is evaluated in log space so large alpha*eps is exact
// rather than overflowing; the first branch is always finite.
inline RdpCurve em_rdp_curve(double epsilon_pure,
                             const std::vector<double>& orders) {
  if (!(epsilon_pure > 0.0)) {
    throw std::invalid_argument("em_rdp_curve: epsilon must be > 0");
  }
  detail::check_orders(orders);
  RdpCurve curve;
  curve.orders = orders;
  curve.eps.reserve(orders.size());
  for (double alpha : orders) {
    const double quadratic = alpha * epsilon_pure * epsilon_pure / 2.0;
    const double log_a = detail::log_sinh(alpha * epsilon_pure);
    const double log_b = detail::log_sinh((alpha - 1.0) * epsilon_pure);
    const double log_diff = log_a + std::log1p(-std::exp(log_b - log_a));
    const double sinh_branch =
        (log_diff - detail::log_sinh(epsilon_pure)) / (alpha - 1.0);
    curve.eps.push_back(std::min(quadratic, sinh_branch));
  }
  return curve;
}

// RDP curve of releasing the PTR noisy threshold: eps(alpha) = alpha/(2 sigma^2).
inline RdpCurve gaussian_ptr_rdp_curve(double sigma,
                                       const std::vector<double>& orders) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("gaussian_ptr_rdp_curve: sigma must be > 0");
  }
  detail::check_orders(orders);
  RdpCurve curve;
  curve.orders = orders;
  curve.eps.reserve(orders.size());
  for (double alpha : orders) {
    curve.eps.push_back(alpha / (2.0 * sigma * sigma));
  }
  return curve;
}

inline RdpCurve zero_rdp_curve(const std::vector<double>& orders) {
  detail::check_orders(orders);
  return RdpCurve{orders, std::vector<double>(orders.size(), 0.0)};
}

// Sequential composition: curves add pointwise, failure masses add.
inline ApproxRdpGuarantee compose(const ApproxRdpGuarantee& a,
                                  const ApproxRdpGuarantee& b) {
  if (a.curve.orders != b.curve.orders) {
    throw std::invalid_argument("compose: mismatched order grids");
  }
  ApproxRdpGuarantee out;
  out.curve.orders = a.curve.orders;
  out.curve.eps.reserve(a.curve.eps.size());
  for (std::size_t i = 0; i < a.curve.eps.size(); ++i) {
    out.curve.eps.push_back(a.curve.eps[i] + b.curve.eps[i]);
  }
  out.delta1 = a.delta1 + b.delta1;
  return out;
}

// Conversion to (eps, delta)-DP, minimized over the order grid:
//   eps = min_alpha eps(alpha) + log(1/delta_conv)/(alpha - 1),
//   delta = delta_conv + delta1.
inline DpConversion to_dp(const ApproxRdpGuarantee& g, double delta_conv) {
  if (!(delta_conv > 0.0 && delta_conv < 1.0)) {
    throw std::invalid_argument("to_dp: delta_conv must be in (0, 1)");
  }
  detail::check_orders(g.curve.orders);
  double best = std::numeric_limits<double>::infinity();
  double best_alpha = g.curve.orders.front();
  const double log_inv_delta = std::log(1.0 / delta_conv);
  for (std::size_t i = 0; i < g.curve.orders.size(); ++i) {
    const double alpha = g.curve.orders[i];
    const double eps = g.curve.eps[i] + log_inv_delta / (alpha - 1.0);
    if (eps < best) {
      best = eps;
      best_alpha = alpha;
    }
  }
  return DpConversion{DpGuarantee{best, delta_conv + g.delta1}, best_alpha};
}

// Forward accounting for one DP-KSA query: EM (pure eps_em) composed with the
// Gaussian PTR test at scale sigma, delta split evenly between the PTR
// failure mass and the conversion slack.
inline DpConversion account_query(double epsilon_em, double sigma,
                                  double delta_total,
                                  const std::vector<double>& orders) {
  const double half_delta = delta_total / 2.0;
  ApproxRdpGuarantee em{em_rdp_curve(epsilon_em, orders), 0.0};
  ApproxRdpGuarantee ptr{gaussian_ptr_rdp_curve(sigma, orders), half_delta};
  return to_dp(compose(em, ptr), half_delta);
}

// Inverse calibration: fixes eps_em = em_fraction * target.epsilon and
// delta1 = delta_conv = target.delta / 2, then binary-searches the PTR sigma
// in [0.05, 200] until forward accounting meets target.epsilon within 1e-3.
// If even the largest sigma cannot get under the target, the EM budget plus
// conversion overhead is the binding constraint and calibration fails. If the
// smallest sigma already lands below the target (very lax budgets), that
// sigma is returned and the guarantee is simply tighter than requested.
inline CalibrationResult calibrate(const DpGuarantee& target,
                                   double em_fraction,
                                   const std::vector<double>& orders) {
  if (!(target.epsilon > 0.0)) {
    throw std::invalid_argument("calibrate: target epsilon must be > 0");
  }
  if (!(target.delta > 0.0 && target.delta < 1.0)) {
    throw std::invalid_argument("calibrate: target delta must be in (0, 1)");
  }
  if (!(em_fraction > 0.0 && em_fraction < 1.0)) {
    throw std::invalid_argument("calibrate: em_fraction must be in (0, 1)");
  }
  constexpr double kSigmaMin = 0.05;
  constexpr double kSigmaMax = 200.0;
  constexpr double kTolerance = 1e-3;

  const double epsilon_em = em_fraction * target.epsilon;
  auto forward = [&](double sigma) {
    return account_query(epsilon_em, sigma, target.delta, orders);
  };

  const DpConversion at_max = forward(kSigmaMax);
  if (at_max.guarantee.epsilon > target.epsilon) {
    // No sigma helps: report how much the EM + conversion floor already costs.
    const double half_delta = target.delta / 2.0;
    const DpConversion em_only =
        to_dp(ApproxRdpGuarantee{em_rdp_curve(epsilon_em, orders), 0.0},
              half_delta);
    std::ostringstream msg;
    msg << "calibrate: target epsilon " << target.epsilon
        << " unreachable; EM budget " << epsilon_em
        << " plus RDP->DP conversion costs at least "
        << em_only.guarantee.epsilon << " (at alpha " << em_only.alpha_star
        << ") before any PTR noise";
    throw CalibrationError(msg.str());
  }

  const DpConversion at_min = forward(kSigmaMin);
  double sigma;
  DpConversion achieved;
  if (at_min.guarantee.epsilon <= target.epsilon) {
    // Even the least noise over-achieves the target; no equality solution.
    sigma = kSigmaMin;
    achieved = at_min;
  } else {
    double lo = kSigmaMin;  // forward(lo) > target
    double hi = kSigmaMax;  // forward(hi) <= target
    for (int iter = 0; iter < 200 && hi - lo > 1e-12 * hi; ++iter) {
      const double mid = 0.5 * (lo + hi);
      if (forward(mid).guarantee.epsilon > target.epsilon) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    sigma = hi;  // smallest bracketed sigma whose guarantee is <= target
    achieved = forward(sigma);
    if (target.epsilon - achieved.guarantee.epsilon > kTolerance) {
      std::ostringstream msg;
      msg << "calibrate: binary search failed to meet target " << target.epsilon
          << " within " << kTolerance << " (achieved "
          << achieved.guarantee.epsilon << ")";
      throw CalibrationError(msg.str());
    }
  }

  CalibrationResult result;
  result.sigma = sigma;
  result.epsilon_em = epsilon_em;
  result.alpha_star = achieved.alpha_star;
  result.achieved = achieved.guarantee;
  return result;
}

}  // namespace dpksa
