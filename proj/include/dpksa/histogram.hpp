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
#include <map>
#include <string>
#include <vector>

#include "dpksa/tokenize.hpp"

namespace dpksa {

// Per-token response counts over an ensemble. counts[t] is the number of
// responses whose token set contains t, so 1 <= counts[t] <= ensemble_size
// and replacing one response moves any single count by at most 1.
struct TokenHistogram {
  std::map<std::string, int> counts;
  int ensemble_size = 0;
};

// Counts sorted non-increasing plus the gap sequence
// gaps[k-1] = H_(k) - H_(k+1) for k = 1..support, where H_(support+1) = 0.
struct GapProfile {
  std::vector<int> sorted_counts;
  std::vector<int> gaps;
};

inline TokenHistogram build_histogram(const std::vector<TokenSet>& responses) {
  TokenHistogram h;
  h.ensemble_size = static_cast<int>(responses.size());
  for (const TokenSet& response : responses) {
    for (const std::string& token : response) {
      ++h.counts[token];
    }
  }
  return h;
}

inline GapProfile gap_profile(const TokenHistogram& h) {
  GapProfile profile;
  profile.sorted_counts.reserve(h.counts.size());
  for (const auto& [token, count] : h.counts) {
    profile.sorted_counts.push_back(count);
  }
  std::sort(profile.sorted_counts.begin(), profile.sorted_counts.end(),
            std::greater<int>());
  const std::size_t n = profile.sorted_counts.size();
  profile.gaps.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int next = (i + 1 < n) ? profile.sorted_counts[i + 1] : 0;
    profile.gaps[i] = profile.sorted_counts[i] - next;
  }
  return profile;
}

// The deterministic token order used everywhere a ranking is needed:
// count descending, then token ascending.
inline std::vector<std::string> tokens_by_count(const TokenHistogram& h) {
  std::vector<std::pair<std::string, int>> entries(h.counts.begin(),
                                                   h.counts.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(entries.size());
  for (auto& [token, count] : entries) tokens.push_back(std::move(token));
  return tokens;
}

// The k highest-count tokens under the deterministic order; the full support
// if k exceeds it. This is the non-private release used by the KSA baseline.
inline std::vector<std::string> top_k_tokens(const TokenHistogram& h, int k) {
  if (k <= 0) return {};
  std::vector<std::string> ranked = tokens_by_count(h);
  if (static_cast<std::size_t>(k) < ranked.size()) {
    ranked.resize(static_cast<std::size_t>(k));
  }
  return ranked;
}

}  // namespace dpksa
