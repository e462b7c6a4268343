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
#include <array>
#include <string_view>

namespace dpksa {

// Embedded English stopword list used by the histogram tokenizer. The list is
// fixed (not configurable) so that token histograms are reproducible across
// runs and machines. Must stay sorted: lookups use binary search.
inline constexpr std::array<std::string_view, 131> kStopwords = {
    "a",        "about",   "above",      "after",   "again",      "against",
    "all",      "also",    "am",         "an",      "and",        "any",
    "are",      "as",      "at",         "be",      "because",    "been",
    "before",   "being",   "below",      "between", "both",       "but",
    "by",       "can",     "cannot",     "could",   "did",        "do",
    "does",     "doing",   "down",       "during",  "each",       "few",
    "for",      "from",    "further",    "had",     "has",        "have",
    "having",   "he",      "her",        "here",    "hers",       "herself",
    "him",      "himself", "his",        "how",     "i",          "if",
    "in",       "into",    "is",         "it",      "its",        "itself",
    "just",     "may",     "me",         "might",   "more",       "most",
    "must",     "my",      "myself",     "no",      "nor",        "not",
    "now",      "of",      "off",        "on",      "once",       "only",
    "or",       "other",   "our",        "ours",    "ourselves",  "out",
    "over",     "own",     "same",       "she",     "should",     "so",
    "some",     "such",    "than",       "that",    "the",        "their",
    "theirs",   "them",    "themselves", "then",    "there",      "these",
    "they",     "this",    "those",      "through", "to",         "too",
    "under",    "until",   "up",         "very",    "was",        "we",
    "were",     "what",    "when",       "where",   "which",      "while",
    "who",      "whom",    "why",        "will",    "with",       "would",
    "you",      "your",    "yours",      "yourself", "yourselves",
};

inline bool is_stopword(std::string_view word) {
  return std::binary_search(kStopwords.begin(), kStopwords.end(), word);
}

}  // namespace dpksa
