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
#include <cmath>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "dpksa/random.hpp"

namespace dpksa {

struct Document {
  std::string id;
  std::string text;
  std::vector<double> embedding;
};

// Immutable after ingestion; all embeddings share `dimension`.
struct Corpus {
  std::vector<Document> documents;
  int dimension = 0;
};

struct ScoredDocument {
  std::size_t index = 0;  // position within Corpus::documents
  std::string id;
  double score = 0.0;
};

// Ranked by inner product, non-increasing; ties broken by id ascending.
struct RetrievalResult {
  std::vector<ScoredDocument> ranked;
};

class CorpusFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Deterministic stand-in for a learned text encoder: a hash-seeded unit-norm
// Gaussian vector. Identical text always maps to the identical vector.
inline std::vector<double> mock_embed(std::string_view text, int dimension) {
  if (dimension < 1) {
    throw std::invalid_argument("mock_embed: dimension must be >= 1");
  }
  // FNV-1a 64 over the text bytes seeds the draw.
  std::uint64_t hash = 1469598103934665603ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  NoiseSource noise(hash);
  std::vector<double> v(static_cast<std::size_t>(dimension));
  double norm_sq = 0.0;
  for (double& x : v) {
    x = noise.gaussian();
    norm_sq += x * x;
  }
  if (norm_sq == 0.0) {
    v[0] = 1.0;
    return v;
  }
  const double inv_norm = 1.0 / std::sqrt(norm_sq);
  for (double& x : v) x *= inv_norm;
  return v;
}

// Loads a line-delimited corpus. Each line is a JSON record {id, text,
// embedding?}; an optional leading header line {"dimension": d} pins the
// dimension, otherwise it is inferred from the first embedded record (or
// falls back to `fallback_dimension` when no record carries an embedding).
// Records without an embedding are filled in by the mock embedder. Every
// validation failure names the offending line.
inline Corpus ingest_corpus(const std::string& path,
                            int fallback_dimension = 64) {
  std::ifstream in(path);
  if (!in) {
    throw CorpusFormatError("cannot open corpus file: " + path);
  }
  Corpus corpus;
  std::unordered_set<std::string> seen_ids;
  std::vector<std::pair<std::size_t, int>> pending_mock;  // (doc idx, line)
  std::string line;
  int line_no = 0;
  bool saw_record = false;

  auto fail = [&](int at_line, const std::string& what) -> void {
    throw CorpusFormatError(path + ":" + std::to_string(at_line) + ": " + what);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!record.is_object()) fail(line_no, "record is not a JSON object");

    if (!saw_record && !record.contains("id") && record.contains("dimension")) {
      // Header line.
      if (!record["dimension"].is_number_integer() ||
          record["dimension"].get<int>() < 1) {
        fail(line_no, "header dimension must be a positive integer");
      }
      corpus.dimension = record["dimension"].get<int>();
      continue;
    }
    saw_record = true;

    if (!record.contains("id") || !record["id"].is_string()) {
      fail(line_no, "missing string field \"id\"");
    }
    if (!record.contains("text") || !record["text"].is_string()) {
      fail(line_no, "missing string field \"text\"");
    }
    Document doc;
    doc.id = record["id"].get<std::string>();
    doc.text = record["text"].get<std::string>();
    if (!seen_ids.insert(doc.id).second) {
      fail(line_no, "duplicate document id \"" + doc.id + "\"");
    }

    if (record.contains("embedding")) {
      const auto& emb = record["embedding"];
      if (!emb.is_array() || emb.empty()) {
        fail(line_no, "embedding must be a non-empty array of numbers");
      }
      doc.embedding.reserve(emb.size());
      for (const auto& x : emb) {
        if (!x.is_number()) fail(line_no, "embedding entries must be numbers");
        doc.embedding.push_back(x.get<double>());
      }
      const int dim = static_cast<int>(doc.embedding.size());
      if (corpus.dimension == 0) {
        corpus.dimension = dim;
      } else if (dim != corpus.dimension) {
        fail(line_no, "embedding dimension " + std::to_string(dim) +
                          " != corpus dimension " +
                          std::to_string(corpus.dimension));
      }
    } else {
      pending_mock.emplace_back(corpus.documents.size(), line_no);
    }
    corpus.documents.push_back(std::move(doc));
  }

  if (!pending_mock.empty()) {
    if (corpus.dimension == 0) {
      if (fallback_dimension < 1) {
        fail(pending_mock.front().second,
             "record has no embedding and no dimension is declared");
      }
      corpus.dimension = fallback_dimension;
    }
    for (const auto& [idx, at_line] : pending_mock) {
      corpus.documents[idx].embedding =
          mock_embed(corpus.documents[idx].text, corpus.dimension);
    }
  }
  return corpus;
}

inline double inner_product(std::span<const double> a,
                            std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

// Exact top-n by inner product over a full scan. Fewer than n documents
// returns all of them, ranked. Deterministic: ties go to the smaller id.
inline RetrievalResult top_n(const Corpus& corpus,
                             std::span<const double> query_embedding, int n) {
  if (corpus.documents.empty()) {
    throw std::invalid_argument("top_n: corpus is empty");
  }
  if (static_cast<int>(query_embedding.size()) != corpus.dimension) {
    throw std::invalid_argument(
        "top_n: query dimension " + std::to_string(query_embedding.size()) +
        " != corpus dimension " + std::to_string(corpus.dimension));
  }
  if (n < 1) throw std::invalid_argument("top_n: n must be >= 1");

  std::vector<ScoredDocument> scored;
  scored.reserve(corpus.documents.size());
  for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
    scored.push_back(ScoredDocument{
        i, corpus.documents[i].id,
        inner_product(corpus.documents[i].embedding, query_embedding)});
  }
  const std::size_t keep =
      std::min<std::size_t>(static_cast<std::size_t>(n), scored.size());
  auto better = [](const ScoredDocument& a, const ScoredDocument& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  };
  std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(),
                    better);
  scored.resize(keep);
  return RetrievalResult{std::move(scored)};
}

}  // namespace dpksa
