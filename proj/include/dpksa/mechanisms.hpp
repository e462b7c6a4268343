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

#include <algorithm>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpksa/histogram.hpp"
#include "dpksa/random.hpp"

namespace dpksa {

// Admissible keyword-count window. Acts as the data-independent regularizer:
// utility is -inf outside [k_min, k_max].
struct KRange {
  int k_min = 15;
  int k_max = 30;
};

// Gaussian scale and test failure probability for the propose-test-release
// threshold test.
struct PtrParams {
  double sigma = 1.0;
  double delta = 1e-4;

  void validate() const {
    if (!(sigma > 0.0)) throw std::invalid_argument("PtrParams: sigma must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) {
      throw std::invalid_argument("PtrParams: delta must be in (0, 1)");
    }
  }
};

// Exponential-mechanism parameters for selecting k. The gap utility has
// sensitivity 2, and Gumbel-max with scale 2*sensitivity/epsilon realizes the
// epsilon-DP exponential mechanism for that utility, so the default scale is
// 4/epsilon_em. gumbel_scale may be overridden (0 gives the noiseless limit).
struct EmParams {
  double epsilon_em = 1.0;
  double sensitivity = 2.0;
  double gumbel_scale = 4.0;

  static EmParams for_epsilon(double epsilon_em) {
    if (!(epsilon_em > 0.0)) {
      throw std::invalid_argument("EmParams: epsilon_em must be > 0");
    }
    EmParams em;
    em.epsilon_em = epsilon_em;
    em.gumbel_scale = 2.0 * em.sensitivity / epsilon_em;
    return em;
  }

  static EmParams noiseless() {
    EmParams em;
    em.epsilon_em = std::numeric_limits<double>::infinity();
    em.gumbel_scale = 0.0;
    return em;
  }
};

// Result of the private selection step: either the exact top-k token list or
// a refusal. A refusal carries no token information by construction.
struct KeywordRelease {
  bool released = false;
  std::vector<std::string> tokens;
  int k = 0;

  static KeywordRelease release(std::vector<std::string> tokens, int k) {
    KeywordRelease r;
    r.released = true;
    r.tokens = std::move(tokens);
    r.k = k;
    return r;
  }

  static KeywordRelease refusal() { return KeywordRelease{}; }
};

// Selects k-hat = argmax over the admissible range of d_k + Gumbel noise.
// Range endpoints are clamped to [1, support]; an empty admissible set yields
// nullopt, which callers treat like a PTR refusal. Exact ties (possible only
// in the noiseless limit) go to the smaller k.
inline std::optional<int> find_best_k(const GapProfile& profile,
                                      const KRange& range, const EmParams& em,
                                      NoiseSource& noise) {
  const int support = static_cast<int>(profile.gaps.size());
  const int lo = std::max(range.k_min, 1);
  const int hi = std::min(range.k_max, support);
  if (lo > hi) return std::nullopt;

  int best_k = lo;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int k = lo; k <= hi; ++k) {
    double score = static_cast<double>(profile.gaps[k - 1]);
    if (em.gumbel_scale > 0.0) score += em.gumbel_scale * noise.gumbel();
    if (score > best_score) {
      best_score = score;
      best_k = k;
    }
  }
  return best_k;
}

// Propose-test-release for the top-k token list:
//   d_hat = max(2, d_k) + N(0, 4 sigma^2) - quantile(1 - delta; 0, 2 sigma)
// releases the exact top-k tokens iff d_hat > 2. When d_k <= 2 the release
// probability is exactly delta. `injected_gaussian` is a test seam replacing
// the N(0, 4 sigma^2) draw, letting the deterministic cases execute.
inline KeywordRelease top_k_with_ptr(
    const TokenHistogram& h, int k, const PtrParams& ptr, NoiseSource& noise,
    std::optional<double> injected_gaussian = std::nullopt) {
  if (k < 1) throw std::invalid_argument("top_k_with_ptr: k must be >= 1");
  ptr.validate();

  const GapProfile profile = gap_profile(h);
  const double d_k = (static_cast<std::size_t>(k) <= profile.gaps.size())
                         ? static_cast<double>(profile.gaps[k - 1])
                         : 0.0;
  const double g = injected_gaussian ? *injected_gaussian
                                     : 2.0 * ptr.sigma * noise.gaussian();
  const double shift = gaussian_quantile(1.0 - ptr.delta, 0.0, 2.0 * ptr.sigma);
  const double d_hat = std::max(2.0, d_k) + g - shift;
  if (d_hat > 2.0) {
    return KeywordRelease::release(top_k_tokens(h, k), k);
  }
  return KeywordRelease::refusal();
}

}  // namespace dpksa
