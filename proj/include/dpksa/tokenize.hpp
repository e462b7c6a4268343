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

#include <cstdint>
#include <set>
#include <string>
#include <string_view>

#include "dpksa/stopwords.hpp"

namespace dpksa {

// One model response reduced to its set of normalized word tokens. Set
// semantics is load-bearing: it caps each response's contribution to any
// histogram bin at 1, which is what makes the gap statistic 2-sensitive.
using TokenSet = std::set<std::string>;

namespace detail {

// Decodes one UTF-8 code point starting at s[i]; advances i past it.
// Malformed bytes are consumed one at a time and returned as-is.
inline std::uint32_t decode_utf8(std::string_view s, std::size_t& i) {
  const auto byte = [&](std::size_t j) -> std::uint32_t {
    return static_cast<unsigned char>(s[j]);
  };
  std::uint32_t b0 = byte(i);
  if (b0 < 0x80) {
    i += 1;
    return b0;
  }
  auto cont = [&](std::size_t j) {
    return j < s.size() && (byte(j) & 0xC0) == 0x80;
  };
  if ((b0 & 0xE0) == 0xC0 && cont(i + 1)) {
    std::uint32_t cp = ((b0 & 0x1F) << 6) | (byte(i + 1) & 0x3F);
    i += 2;
    return cp;
  }
  if ((b0 & 0xF0) == 0xE0 && cont(i + 1) && cont(i + 2)) {
    std::uint32_t cp = ((b0 & 0x0F) << 12) | ((byte(i + 1) & 0x3F) << 6) |
                       (byte(i + 2) & 0x3F);
    i += 3;
    return cp;
  }
  if ((b0 & 0xF8) == 0xF0 && cont(i + 1) && cont(i + 2) && cont(i + 3)) {
    std::uint32_t cp = ((b0 & 0x07) << 18) | ((byte(i + 1) & 0x3F) << 12) |
                       ((byte(i + 2) & 0x3F) << 6) | (byte(i + 3) & 0x3F);
    i += 4;
    return cp;
  }
  i += 1;
  return b0;
}

inline void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// The punctuation strip set: all ASCII punctuation plus the common Unicode
// punctuation encountered in web text (curly quotes, dashes, ellipsis,
// guillemets, inverted marks). Stripped characters act as word separators.
inline bool is_strip_punct(std::uint32_t cp) {
  if (cp < 0x80) {
    return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
           (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E);
  }
  switch (cp) {
    case 0x00A1:  // inverted exclamation
    case 0x00AB:  // left guillemet
    case 0x00B7:  // middle dot
    case 0x00BB:  // right guillemet
    case 0x00BF:  // inverted question mark
      return true;
    default:
      break;
  }
  // General punctuation block (en/em dashes, curly quotes, ellipsis, ...).
  return cp >= 0x2010 && cp <= 0x205E;
}

inline bool is_space(std::uint32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\v' ||
         cp == '\f' || cp == 0x00A0 || cp == 0x3000;
}

inline std::size_t codepoint_length(std::string_view word) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < word.size(); ++n) decode_utf8(word, i);
  return n;
}

}  // namespace detail

// Normalizes one raw model response into its token set:
// lowercase (ASCII) -> punctuation mapped to separators -> whitespace split
// -> drop tokens shorter than 2 code points -> drop stopwords -> deduplicate.
inline TokenSet normalize_and_tokenize(std::string_view raw) {
  TokenSet tokens;
  std::string current;
  std::size_t current_cps = 0;
  auto flush = [&] {
    if (current_cps >= 2 && !is_stopword(current)) {
      tokens.insert(current);
    }
    current.clear();
    current_cps = 0;
  };
  std::size_t i = 0;
  while (i < raw.size()) {
    std::uint32_t cp = detail::decode_utf8(raw, i);
    if (detail::is_space(cp) || detail::is_strip_punct(cp)) {
      flush();
      continue;
    }
    if (cp >= 'A' && cp <= 'Z') cp += 'a' - 'A';
    detail::append_utf8(current, cp);
    ++current_cps;
  }
  flush();
  return tokens;
}

}  // namespace dpksa
