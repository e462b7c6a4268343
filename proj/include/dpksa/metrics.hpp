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
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dpksa/tokenize.hpp"

namespace dpksa {

// F1 / ROUGE-1 / ROUGE-L / normalized Levenshtein similarity, each in [0, 1].
struct EvalScores {
  double f1 = 0.0;
  double rouge1 = 0.0;
  double rougeL = 0.0;
  double lev = 0.0;
};

namespace detail {

// Scoring normalization: lowercase, delete punctuation characters, collapse
// whitespace. Articles are NOT removed here; only token_f1 removes them (the
// extractive-QA convention), because ROUGE and Levenshtein score the surface
// string including articles.
inline std::string normalize_answer(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  std::size_t i = 0;
  while (i < raw.size()) {
    std::uint32_t cp = decode_utf8(raw, i);
    if (is_space(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (is_strip_punct(cp)) continue;
    if (cp >= 'A' && cp <= 'Z') cp += 'a' - 'A';
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    append_utf8(out, cp);
  }
  return out;
}

inline std::vector<std::string> split_words(const std::string& normalized) {
  std::vector<std::string> words;
  std::size_t start = 0;
  while (start < normalized.size()) {
    std::size_t end = normalized.find(' ', start);
    if (end == std::string::npos) end = normalized.size();
    if (end > start) words.push_back(normalized.substr(start, end - start));
    start = end + 1;
  }
  return words;
}

inline bool is_article(const std::string& word) {
  return word == "a" || word == "an" || word == "the";
}

// Multiset overlap: sum over tokens of min(count in a, count in b).
inline int overlap_count(const std::vector<std::string>& a,
                         const std::vector<std::string>& b) {
  std::map<std::string, int> counts;
  for (const auto& w : a) ++counts[w];
  int overlap = 0;
  for (const auto& w : b) {
    auto it = counts.find(w);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return overlap;
}

inline double f_measure(double precision, double recall) {
  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

// Unigram-overlap F1 with the degenerate conventions shared by the token
// metrics: both sides empty -> 1, exactly one empty -> 0.
inline double unigram_f1(const std::vector<std::string>& pred,
                         const std::vector<std::string>& ref) {
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;
  const int overlap = overlap_count(pred, ref);
  const double precision = static_cast<double>(overlap) / pred.size();
  const double recall = static_cast<double>(overlap) / ref.size();
  return f_measure(precision, recall);
}

template <typename T>
inline int lcs_length(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<int> prev(b.size() + 1, 0), curr(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1]) {
        curr[j] = prev[j - 1] + 1;
      } else {
        curr[j] = std::max(prev[j], curr[j - 1]);
      }
    }
    std::swap(prev, curr);
  }
  return prev[b.size()];
}

inline std::vector<std::uint32_t> codepoints(const std::string& s) {
  std::vector<std::uint32_t> cps;
  std::size_t i = 0;
  while (i < s.size()) cps.push_back(decode_utf8(s, i));
  return cps;
}

template <typename T>
inline int edit_distance(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<int> prev(b.size() + 1), curr(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    curr[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      curr[j] = std::min({prev[j] + 1, curr[j - 1] + 1, sub});
    }
    std::swap(prev, curr);
  }
  return prev[b.size()];
}

}  // namespace detail

// SQuAD-style token F1: normalized tokens with articles (a/an/the) removed,
// harmonic mean of multiset precision and recall.
inline double token_f1(std::string_view prediction, std::string_view reference) {
  auto pred = detail::split_words(detail::normalize_answer(prediction));
  auto ref = detail::split_words(detail::normalize_answer(reference));
  std::erase_if(pred, detail::is_article);
  std::erase_if(ref, detail::is_article);
  return detail::unigram_f1(pred, ref);
}

// ROUGE-1: unigram-overlap F-measure over normalized tokens (articles kept).
inline double rouge1(std::string_view prediction, std::string_view reference) {
  return detail::unigram_f1(
      detail::split_words(detail::normalize_answer(prediction)),
      detail::split_words(detail::normalize_answer(reference)));
}

// ROUGE-L: F-measure of LCS length over the normalized token sequences.
inline double rougeL(std::string_view prediction, std::string_view reference) {
  auto pred = detail::split_words(detail::normalize_answer(prediction));
  auto ref = detail::split_words(detail::normalize_answer(reference));
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;
  const int lcs = detail::lcs_length(pred, ref);
  const double precision = static_cast<double>(lcs) / pred.size();
  const double recall = static_cast<double>(lcs) / ref.size();
  return detail::f_measure(precision, recall);
}

// 1 - editDistance / max(len, len) over code points of the normalized strings.
inline double levenshtein_similarity(std::string_view prediction,
                                     std::string_view reference) {
  const auto pred = detail::codepoints(detail::normalize_answer(prediction));
  const auto ref = detail::codepoints(detail::normalize_answer(reference));
  const std::size_t longest = std::max(pred.size(), ref.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(detail::edit_distance(pred, ref)) /
                   static_cast<double>(longest);
}

inline EvalScores score_single(std::string_view prediction,
                               std::string_view reference) {
  EvalScores s;
  s.f1 = token_f1(prediction, reference);
  s.rouge1 = rouge1(prediction, reference);
  s.rougeL = rougeL(prediction, reference);
  s.lev = levenshtein_similarity(prediction, reference);
  return s;
}

// Per-metric max over the reference set.
inline EvalScores score_against_references(
    std::string_view prediction, const std::vector<std::string>& references) {
  if (references.empty()) {
    throw std::invalid_argument("score_against_references: no references");
  }
  EvalScores best;
  bool first = true;
  for (const std::string& reference : references) {
    const EvalScores s = score_single(prediction, reference);
    if (first) {
      best = s;
      first = false;
    } else {
      best.f1 = std::max(best.f1, s.f1);
      best.rouge1 = std::max(best.rouge1, s.rouge1);
      best.rougeL = std::max(best.rougeL, s.rougeL);
      best.lev = std::max(best.lev, s.lev);
    }
  }
  return best;
}

}  // namespace dpksa
