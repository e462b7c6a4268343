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

#include <atomic>
#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dpksa/accountant.hpp"
#include "dpksa/generation.hpp"
#include "dpksa/histogram.hpp"
#include "dpksa/mechanisms.hpp"
#include "dpksa/metrics.hpp"
#include "dpksa/retrieval.hpp"

namespace dpksa {

enum class RunMode { DPKSA, KSA, RAG_TOP2, NONRAG };

inline std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::DPKSA: return "dpksa";
    case RunMode::KSA: return "ksa";
    case RunMode::RAG_TOP2: return "rag-top2";
    case RunMode::NONRAG: return "nonrag";
  }
  throw std::logic_error("unknown run mode");
}

inline RunMode parse_run_mode(std::string_view name) {
  if (name == "dpksa") return RunMode::DPKSA;
  if (name == "ksa") return RunMode::KSA;
  if (name == "rag-top2") return RunMode::RAG_TOP2;
  if (name == "nonrag") return RunMode::NONRAG;
  throw std::invalid_argument("unknown mode: " + std::string(name));
}

// Full experiment description. Defaults follow the standard evaluation
// setup: delta 1e-4, 80 ensembles, k in [15, 30], epsilon grid {1,2,3,5,8},
// even epsilon/delta split between selection and test.
struct RunConfig {
  std::vector<double> epsilon_grid = {1.0, 2.0, 3.0, 5.0, 8.0};
  double delta = 1e-4;
  int ensemble_size = 80;
  KRange k_range;
  double em_fraction = 0.5;
  std::string corpus_path;
  std::string queries_path;
  std::optional<GeneratorEndpointConfig> endpoint;
  std::optional<MockBehavior> mock;
  PromptTemplate with_document = PromptTemplate::default_for(TemplateKind::WithDocument);
  PromptTemplate with_keywords = PromptTemplate::default_for(TemplateKind::WithKeywords);
  PromptTemplate zero_shot = PromptTemplate::default_for(TemplateKind::ZeroShot);
  std::uint64_t seed = 0;
  std::vector<RunMode> modes = {RunMode::DPKSA};
  int max_tokens = 64;
  double temperature = 0.0;
  std::optional<double> gumbel_scale_override;
  int corpus_fallback_dim = 64;

  bool needs_corpus() const {
    for (RunMode m : modes) {
      if (m != RunMode::NONRAG) return true;
    }
    return false;
  }

  void validate() const {
    if (queries_path.empty()) {
      throw std::invalid_argument("config: queries path is required");
    }
    if (needs_corpus() && corpus_path.empty()) {
      throw std::invalid_argument("config: corpus path is required for retrieval modes");
    }
    if (endpoint.has_value() == mock.has_value()) {
      throw std::invalid_argument(
          "config: exactly one of endpoint or mock generator must be set");
    }
    if (ensemble_size < 1) {
      throw std::invalid_argument("config: ensemble size must be >= 1");
    }
    if (!(delta > 0.0 && delta < 1.0)) {
      throw std::invalid_argument("config: delta must be in (0, 1)");
    }
    if (modes.empty()) throw std::invalid_argument("config: no modes selected");
    for (RunMode m : modes) {
      if (m == RunMode::DPKSA && epsilon_grid.empty()) {
        throw std::invalid_argument("config: dpksa mode needs an epsilon grid");
      }
    }
  }
};

struct QueryRecord {
  std::string question;
  std::vector<std::string> references;
};

// Loads line-delimited {question, references} records. Records whose
// reference list is empty (or all-blank) are dropped, mirroring how empty
// ground-truth questions are filtered before scoring.
inline std::vector<QueryRecord> load_queries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open queries file: " + path);
  std::vector<QueryRecord> queries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": invalid JSON: " + e.what());
    }
    if (!record.contains("question") || !record["question"].is_string()) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": missing string field \"question\"");
    }
    QueryRecord q;
    q.question = record["question"].get<std::string>();
    if (record.contains("references") && record["references"].is_array()) {
      for (const auto& ref : record["references"]) {
        if (ref.is_string() && !ref.get<std::string>().empty()) {
          q.references.push_back(ref.get<std::string>());
        }
      }
    }
    if (q.references.empty()) continue;  // filtered, not an error
    queries.push_back(std::move(q));
  }
  return queries;
}

struct QueryRow {
  int query_index = 0;
  RunMode mode = RunMode::DPKSA;
  std::optional<double> epsilon;  // DP-KSA rows only
  std::string question;
  std::string outcome;  // released | refused | n/a | error
  int k_hat = 0;
  int released_count = 0;
  std::vector<std::string> keywords;
  std::string answer;
  EvalScores scores;
  std::optional<double> achieved_epsilon;
  std::optional<double> achieved_delta;
  bool privacy_scan_ok = true;
  std::string note;
};

struct GroupAggregate {
  RunMode mode = RunMode::DPKSA;
  std::optional<double> epsilon;
  int rows = 0;
  int released = 0;
  double ptr_pass_rate = 0.0;
  // Mean metric scores x100, refusal rows included.
  double f1 = 0.0, rouge1 = 0.0, rougeL = 0.0, lev = 0.0;
};

struct RunReport {
  nlohmann::ordered_json header;
  std::vector<QueryRow> rows;
  std::vector<GroupAggregate> groups;
  long long retrieval_calls = 0;
  double wall_clock_seconds = 0.0;  // console-only; kept out of the file bytes
};

// Either transport, one call surface. Mock generation is pure; HTTP
// generation is capped and retried by HttpGenerator.
class Generator {
 public:
  explicit Generator(const RunConfig& config) {
    if (config.endpoint) {
      http_.emplace(*config.endpoint);
    } else if (config.mock) {
      mock_ = *config.mock;
    } else {
      throw std::invalid_argument("no generator configured");
    }
  }

  std::string generate(const GenerationRequest& request) {
    if (http_) return http_->generate(request);
    return mock_generate(request, mock_);
  }

  bool concurrent() const { return http_.has_value(); }
  int max_parallel() const { return http_ ? http_->config().max_parallel : 1; }

 private:
  std::optional<HttpGenerator> http_;
  MockBehavior mock_;
};

// Runs a batch of requests, concurrently for HTTP transports. Failed slots
// come back empty with the error text in `errors`; order is preserved.
inline std::vector<std::optional<std::string>> generate_batch(
    Generator& generator, const std::vector<GenerationRequest>& requests,
    std::vector<std::string>& errors) {
  std::vector<std::optional<std::string>> out(requests.size());
  errors.assign(requests.size(), {});
  const int workers = generator.concurrent()
                          ? std::min<int>(generator.max_parallel(),
                                          static_cast<int>(requests.size()))
                          : 1;
  if (workers <= 1) {
    for (std::size_t i = 0; i < requests.size(); ++i) {
      try {
        out[i] = generator.generate(requests[i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
    return out;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < requests.size();
         i = next.fetch_add(1)) {
      try {
        out[i] = generator.generate(requests[i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return out;
}

namespace detail {

inline void collect_tokens(std::string_view text, TokenSet& into) {
  for (const std::string& token : normalize_and_tokenize(text)) {
    into.insert(token);
  }
}

}  // namespace detail

// End-to-end privacy boundary check for a keyword/zero-shot prompt: every
// normalized token of the final prompt must come from the template, the
// question, or the released keywords, and no retrieved document may appear
// verbatim. Anything else would be corpus content outside the DP release.
inline bool privacy_boundary_ok(const std::string& final_prompt,
                                const std::string& question,
                                const std::vector<std::string>& template_texts,
                                const std::vector<std::string>& released_keywords,
                                const std::vector<std::string>& document_texts) {
  TokenSet allowed;
  detail::collect_tokens(question, allowed);
  for (const std::string& t : template_texts) detail::collect_tokens(t, allowed);
  for (const std::string& kw : released_keywords) {
    detail::collect_tokens(kw, allowed);
    allowed.insert(kw);
  }
  for (const std::string& token : normalize_and_tokenize(final_prompt)) {
    if (!allowed.count(token)) return false;
  }
  for (const std::string& doc : document_texts) {
    if (doc.size() >= 16 && final_prompt.find(doc) != std::string::npos) {
      return false;
    }
  }
  return true;
}

namespace detail {

struct QueryContext {
  const Corpus* corpus = nullptr;
  Generator* generator = nullptr;
  const CalibrationResult* calibration = nullptr;  // DPKSA only
  long long* retrieval_calls = nullptr;
};

inline GenerationRequest make_request(const RunConfig& config,
                                      std::string prompt,
                                      std::uint64_t seed) {
  GenerationRequest req;
  req.prompt = std::move(prompt);
  req.max_tokens = config.max_tokens;
  req.temperature = config.temperature;
  req.seed = seed;
  return req;
}

// Deterministic per-query seeds: stream 0 feeds the mechanism noise, stream 1
// the final generation (shared with the zero-shot baseline so refusal rows
// reproduce it exactly), streams 2.. the ensemble generations.
struct QuerySeeds {
  std::uint64_t key;
  explicit QuerySeeds(std::uint64_t master, int query_index)
      : key(NoiseSource::derive(master, static_cast<std::uint64_t>(query_index))) {}
  std::uint64_t noise() const { return NoiseSource::derive(key, 0); }
  std::uint64_t final_generation() const { return NoiseSource::derive(key, 1); }
  std::uint64_t ensemble(int i) const {
    return NoiseSource::derive(key, 2 + static_cast<std::uint64_t>(i));
  }
};

// Retrieves, generates the ensemble, and aggregates the token histogram.
// Dropped generations shrink the effective ensemble (a missing response can
// only lower counts, so the sensitivity argument is unaffected); the note
// records how many were lost.
inline TokenHistogram ensemble_histogram(const RunConfig& config,
                                         const QueryContext& ctx,
                                         const QueryRecord& query,
                                         const QuerySeeds& seeds,
                                         std::vector<std::string>& doc_texts,
                                         std::string& note) {
  const std::vector<double> query_embedding =
      mock_embed(query.question, ctx.corpus->dimension);
  if (ctx.retrieval_calls) ++*ctx.retrieval_calls;
  const RetrievalResult retrieved =
      top_n(*ctx.corpus, query_embedding, config.ensemble_size);

  std::vector<GenerationRequest> requests;
  requests.reserve(retrieved.ranked.size());
  for (std::size_t i = 0; i < retrieved.ranked.size(); ++i) {
    const Document& doc = ctx.corpus->documents[retrieved.ranked[i].index];
    doc_texts.push_back(doc.text);
    requests.push_back(make_request(
        config,
        render_prompt(config.with_document, query.question, doc.text,
                      std::nullopt),
        seeds.ensemble(static_cast<int>(i))));
  }

  std::vector<std::string> errors;
  const auto responses = generate_batch(*ctx.generator, requests, errors);
  std::vector<TokenSet> token_sets;
  token_sets.reserve(responses.size());
  int dropped = 0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (responses[i]) {
      token_sets.push_back(normalize_and_tokenize(*responses[i]));
    } else {
      ++dropped;
      std::cerr << "warning: ensemble generation " << i
                << " dropped: " << errors[i] << "\n";
    }
  }
  if (dropped > 0) {
    note += "dropped " + std::to_string(dropped) +
            " ensemble generations; effective ensemble " +
            std::to_string(token_sets.size());
  }
  return build_histogram(token_sets);
}

}  // namespace detail

// Executes one query in one mode and returns its report row. Baseline modes
// reuse the same retrieval ranking and the same final-generation seed, which
// is what makes refusal rows comparable to the zero-shot baseline.
inline QueryRow run_query(const RunConfig& config, RunMode mode,
                          std::optional<double> epsilon,
                          const detail::QueryContext& ctx,
                          const QueryRecord& query, int query_index) {
  QueryRow row;
  row.query_index = query_index;
  row.mode = mode;
  row.epsilon = epsilon;
  row.question = query.question;
  row.outcome = "n/a";

  const detail::QuerySeeds seeds(config.seed, query_index);
  NoiseSource noise(seeds.noise());

  try {
    std::string final_prompt;
    std::vector<std::string> doc_texts;
    bool check_boundary = false;

    switch (mode) {
      case RunMode::NONRAG: {
        final_prompt = render_prompt(config.zero_shot, query.question,
                                     std::nullopt, std::nullopt);
        break;
      }
      case RunMode::RAG_TOP2: {
        const std::vector<double> query_embedding =
            mock_embed(query.question, ctx.corpus->dimension);
        if (ctx.retrieval_calls) ++*ctx.retrieval_calls;
        const RetrievalResult retrieved = top_n(*ctx.corpus, query_embedding, 2);
        std::string joined;
        for (const ScoredDocument& sd : retrieved.ranked) {
          if (!joined.empty()) joined += "\n\n";
          joined += ctx.corpus->documents[sd.index].text;
        }
        final_prompt = render_prompt(config.with_document, query.question,
                                     joined, std::nullopt);
        break;
      }
      case RunMode::KSA:
      case RunMode::DPKSA: {
        const TokenHistogram histogram = detail::ensemble_histogram(
            config, ctx, query, seeds, doc_texts, row.note);
        const GapProfile profile = gap_profile(histogram);

        if (mode == RunMode::KSA) {
          // Non-private variant: noiseless k, exact top-k, no PTR test.
          EmParams em = EmParams::noiseless();
          const std::optional<int> k = find_best_k(profile, config.k_range, em, noise);
          if (k) {
            row.k_hat = *k;
            row.keywords = top_k_tokens(histogram, *k);
            row.released_count = static_cast<int>(row.keywords.size());
            row.outcome = "released";
            final_prompt = render_prompt(config.with_keywords, query.question,
                                         std::nullopt, row.keywords);
          } else {
            row.outcome = "refused";
            final_prompt = render_prompt(config.zero_shot, query.question,
                                         std::nullopt, std::nullopt);
          }
          break;
        }

        // DP-KSA: calibrated exponential mechanism + PTR.
        EmParams em = EmParams::for_epsilon(ctx.calibration->epsilon_em);
        if (config.gumbel_scale_override) {
          em.gumbel_scale = *config.gumbel_scale_override;
        }
        const std::optional<int> k = find_best_k(profile, config.k_range, em, noise);
        KeywordRelease release = KeywordRelease::refusal();
        if (k) {
          row.k_hat = *k;
          const PtrParams ptr{ctx.calibration->sigma, config.delta / 2.0};
          release = top_k_with_ptr(histogram, *k, ptr, noise);
        }
        if (release.released) {
          row.outcome = "released";
          row.keywords = release.tokens;
          row.released_count = static_cast<int>(release.tokens.size());
          final_prompt = render_prompt(config.with_keywords, query.question,
                                       std::nullopt, row.keywords);
        } else {
          row.outcome = "refused";
          final_prompt = render_prompt(config.zero_shot, query.question,
                                       std::nullopt, std::nullopt);
        }
        row.achieved_epsilon = ctx.calibration->achieved.epsilon;
        row.achieved_delta = ctx.calibration->achieved.delta;
        check_boundary = true;
        break;
      }
    }

    const GenerationRequest final_request =
        detail::make_request(config, final_prompt, seeds.final_generation());
    row.answer = ctx.generator->generate(final_request);
    row.scores = score_against_references(row.answer, query.references);

    if (check_boundary) {
      row.privacy_scan_ok = privacy_boundary_ok(
          final_prompt, query.question,
          {config.with_keywords.text, config.zero_shot.text}, row.keywords,
          doc_texts);
    }
  } catch (const std::exception& e) {
    row.outcome = "error";
    row.note += std::string(row.note.empty() ? "" : "; ") + e.what();
  }
  return row;
}

namespace detail {

inline nlohmann::ordered_json scores_json(const EvalScores& s) {
  return nlohmann::ordered_json{
      {"f1", s.f1}, {"rouge1", s.rouge1}, {"rougeL", s.rougeL}, {"lev", s.lev}};
}

inline nlohmann::ordered_json row_json(const QueryRow& row) {
  nlohmann::ordered_json j;
  j["type"] = "row";
  j["query_index"] = row.query_index;
  j["mode"] = to_string(row.mode);
  if (row.epsilon) j["epsilon"] = *row.epsilon; else j["epsilon"] = nullptr;
  j["question"] = row.question;
  j["outcome"] = row.outcome;
  j["k_hat"] = row.k_hat;
  j["released_count"] = row.released_count;
  j["keywords"] = row.keywords;
  j["answer"] = row.answer;
  j["scores"] = scores_json(row.scores);
  if (row.achieved_epsilon) {
    j["achieved_epsilon"] = *row.achieved_epsilon;
    j["achieved_delta"] = *row.achieved_delta;
  }
  j["privacy_scan_ok"] = row.privacy_scan_ok;
  j["note"] = row.note;
  return j;
}

}  // namespace detail

inline std::vector<GroupAggregate> aggregate_rows(
    const std::vector<QueryRow>& rows) {
  std::vector<GroupAggregate> groups;
  auto find_group = [&](RunMode mode,
                        const std::optional<double>& eps) -> GroupAggregate& {
    for (GroupAggregate& g : groups) {
      if (g.mode == mode && g.epsilon == eps) return g;
    }
    groups.push_back(GroupAggregate{mode, eps});
    return groups.back();
  };
  for (const QueryRow& row : rows) {
    GroupAggregate& g = find_group(row.mode, row.epsilon);
    ++g.rows;
    if (row.outcome == "released") ++g.released;
    g.f1 += row.scores.f1;
    g.rouge1 += row.scores.rouge1;
    g.rougeL += row.scores.rougeL;
    g.lev += row.scores.lev;
  }
  for (GroupAggregate& g : groups) {
    if (g.rows > 0) {
      const double inv = 1.0 / g.rows;
      g.f1 *= 100.0 * inv;
      g.rouge1 *= 100.0 * inv;
      g.rougeL *= 100.0 * inv;
      g.lev *= 100.0 * inv;
      g.ptr_pass_rate = static_cast<double>(g.released) / g.rows;
    }
  }
  return groups;
}

// Serializes header, rows, and summary as deterministic JSON lines. Wall
// clock stays out so identical (config, seed) runs produce identical bytes.
inline std::string report_to_jsonl(const RunReport& report) {
  std::ostringstream out;
  out << report.header.dump() << "\n";
  for (const QueryRow& row : report.rows) {
    out << detail::row_json(row).dump() << "\n";
  }
  nlohmann::ordered_json summary;
  summary["type"] = "summary";
  summary["groups"] = nlohmann::ordered_json::array();
  for (const GroupAggregate& g : report.groups) {
    nlohmann::ordered_json gj;
    gj["mode"] = to_string(g.mode);
    if (g.epsilon) gj["epsilon"] = *g.epsilon; else gj["epsilon"] = nullptr;
    gj["rows"] = g.rows;
    gj["released"] = g.released;
    gj["ptr_pass_rate"] = g.ptr_pass_rate;
    gj["f1"] = g.f1;
    gj["rouge1"] = g.rouge1;
    gj["rougeL"] = g.rougeL;
    gj["lev"] = g.lev;
    summary["groups"].push_back(gj);
  }
  summary["retrieval_calls"] = report.retrieval_calls;
  out << summary.dump() << "\n";
  return out.str();
}

// Runs queries x epsilon grid x modes and assembles the report. Deterministic
// given (config, seed) with the mock generator and embedder.
inline RunReport run_experiment(const RunConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();

  const std::vector<QueryRecord> queries = load_queries(config.queries_path);
  if (queries.empty()) {
    throw std::runtime_error("no usable queries in " + config.queries_path);
  }
  Corpus corpus;
  if (config.needs_corpus()) {
    corpus = ingest_corpus(config.corpus_path, config.corpus_fallback_dim);
  }
  Generator generator(config);

  RunReport report;
  report.header["type"] = "header";
  report.header["modes"] = nlohmann::ordered_json::array();
  for (RunMode m : config.modes) report.header["modes"].push_back(to_string(m));
  report.header["epsilon_grid"] = config.epsilon_grid;
  report.header["delta"] = config.delta;
  report.header["ensemble_size"] = config.ensemble_size;
  report.header["k_min"] = config.k_range.k_min;
  report.header["k_max"] = config.k_range.k_max;
  report.header["em_fraction"] = config.em_fraction;
  report.header["seed"] = config.seed;
  report.header["queries"] = static_cast<int>(queries.size());
  // Refused queries fall back to zero-shot answers and stay in the metric
  // means as well as the pass rate.
  report.header["refusals_included_in_metrics"] = true;

  detail::QueryContext ctx;
  ctx.corpus = config.needs_corpus() ? &corpus : nullptr;
  ctx.generator = &generator;
  ctx.retrieval_calls = &report.retrieval_calls;

  for (RunMode mode : config.modes) {
    if (mode == RunMode::DPKSA) {
      for (double epsilon : config.epsilon_grid) {
        const CalibrationResult calibration =
            calibrate(DpGuarantee{epsilon, config.delta}, config.em_fraction,
                      default_rdp_orders());
        ctx.calibration = &calibration;
        for (std::size_t qi = 0; qi < queries.size(); ++qi) {
          report.rows.push_back(run_query(config, mode, epsilon, ctx,
                                          queries[qi], static_cast<int>(qi)));
        }
        ctx.calibration = nullptr;
      }
    } else {
      for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        report.rows.push_back(run_query(config, mode, std::nullopt, ctx,
                                        queries[qi], static_cast<int>(qi)));
      }
    }
  }

  report.groups = aggregate_rows(report.rows);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

// ---------------------------------------------------------------------------
// PTR pass-rate simulation on synthetic histogram families.
// ---------------------------------------------------------------------------

// Parametric histogram generators for the pass-rate experiment. FixedGap puts
// `strong` tokens at the full ensemble count and the rest `gap` below it;
// Degenerate gives every token the same count (all in-range gaps are 0);
// Bernoulli draws each token's count as a sum of inclusion coin flips.
struct SyntheticFamily {
  enum class Kind { FixedGap, Degenerate, Bernoulli };
  Kind kind = Kind::FixedGap;
  int ensemble_size = 80;
  int vocab = 50;
  int strong = 20;
  int gap = 26;
  double p_strong = 0.5;
  double p_weak = 0.1;

  TokenHistogram sample(NoiseSource& noise) const {
    TokenHistogram h;
    h.ensemble_size = ensemble_size;
    auto token_name = [](int j) {
      char buf[8];
      std::snprintf(buf, sizeof buf, "w%03d", j);
      return std::string(buf);
    };
    switch (kind) {
      case Kind::Degenerate:
        for (int j = 0; j < vocab; ++j) h.counts[token_name(j)] = ensemble_size;
        break;
      case Kind::FixedGap: {
        const int low = ensemble_size - gap;
        for (int j = 0; j < vocab; ++j) {
          const int count = j < strong ? ensemble_size : low;
          if (count > 0) h.counts[token_name(j)] = count;
        }
        break;
      }
      case Kind::Bernoulli:
        for (int j = 0; j < vocab; ++j) {
          const double p = j < strong ? p_strong : p_weak;
          int count = 0;
          for (int i = 0; i < ensemble_size; ++i) {
            if (noise.uniform() < p) ++count;
          }
          if (count > 0) h.counts[token_name(j)] = count;
        }
        break;
    }
    return h;
  }
};

struct PtrSimPoint {
  double epsilon = 0.0;
  double sigma = 0.0;
  int trials = 0;
  int passes = 0;
  double pass_rate = 0.0;
  double std_error = 0.0;
};

// For each epsilon: calibrate, then run select-and-test on `trials` sampled
// histograms and report the release fraction. Trial t reuses the same child
// seed across epsilons, so the per-trial noise is coupled and the monotone
// trend in epsilon is not washed out by Monte Carlo error. `fixed_k` skips
// the selection step and tests the given k directly.
inline std::vector<PtrSimPoint> simulate_ptr_pass_rate(
    const SyntheticFamily& family, const std::vector<double>& epsilon_grid,
    double delta, int trials, double em_fraction, const KRange& k_range,
    std::uint64_t seed, std::optional<int> fixed_k = std::nullopt) {
  if (trials < 1000) {
    throw std::invalid_argument("simulate_ptr_pass_rate: trials must be >= 1000");
  }
  std::vector<PtrSimPoint> points;
  points.reserve(epsilon_grid.size());
  for (double epsilon : epsilon_grid) {
    const CalibrationResult calibration = calibrate(
        DpGuarantee{epsilon, delta}, em_fraction, default_rdp_orders());
    const EmParams em = EmParams::for_epsilon(calibration.epsilon_em);
    const PtrParams ptr{calibration.sigma, delta / 2.0};
    int passes = 0;
    for (int t = 0; t < trials; ++t) {
      NoiseSource noise(NoiseSource::derive(seed, static_cast<std::uint64_t>(t)));
      const TokenHistogram h = family.sample(noise);
      const GapProfile profile = gap_profile(h);
      std::optional<int> k = fixed_k;
      if (!k) k = find_best_k(profile, k_range, em, noise);
      if (k && top_k_with_ptr(h, *k, ptr, noise).released) ++passes;
    }
    PtrSimPoint point;
    point.epsilon = epsilon;
    point.sigma = calibration.sigma;
    point.trials = trials;
    point.passes = passes;
    point.pass_rate = static_cast<double>(passes) / trials;
    point.std_error =
        std::sqrt(point.pass_rate * (1.0 - point.pass_rate) / trials);
    points.push_back(point);
  }
  return points;
}

// ---------------------------------------------------------------------------
// Report rescoring (the `evaluate` subcommand).
// ---------------------------------------------------------------------------

// Re-reads a serialized report, recomputes every row's metric scores against
// the given queries (joined by query_index), and rebuilds the summary.
inline std::string rescore_report_jsonl(const std::string& report_jsonl,
                                        const std::vector<QueryRecord>& queries) {
  std::istringstream in(report_jsonl);
  std::ostringstream out;
  std::string line;
  std::vector<QueryRow> rows;
  nlohmann::ordered_json header;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(line);
    const std::string type = j.value("type", "");
    if (type == "header") {
      header = j;
      continue;
    }
    if (type != "row") continue;  // old summary is recomputed below
    QueryRow row;
    row.query_index = j.at("query_index").get<int>();
    row.mode = parse_run_mode(j.at("mode").get<std::string>());
    if (!j.at("epsilon").is_null()) row.epsilon = j.at("epsilon").get<double>();
    row.question = j.at("question").get<std::string>();
    row.outcome = j.at("outcome").get<std::string>();
    row.k_hat = j.at("k_hat").get<int>();
    row.released_count = j.at("released_count").get<int>();
    row.keywords = j.at("keywords").get<std::vector<std::string>>();
    row.answer = j.at("answer").get<std::string>();
    if (j.contains("achieved_epsilon")) {
      row.achieved_epsilon = j.at("achieved_epsilon").get<double>();
      row.achieved_delta = j.at("achieved_delta").get<double>();
    }
    row.privacy_scan_ok = j.at("privacy_scan_ok").get<bool>();
    row.note = j.at("note").get<std::string>();
    if (row.query_index < 0 ||
        static_cast<std::size_t>(row.query_index) >= queries.size()) {
      throw std::runtime_error("rescore: row query_index " +
                               std::to_string(row.query_index) +
                               " has no matching query");
    }
    row.scores = score_against_references(
        row.answer, queries[static_cast<std::size_t>(row.query_index)].references);
    rows.push_back(std::move(row));
  }
  RunReport report;
  report.header = header.is_null() ? nlohmann::ordered_json{{"type", "header"}}
                                   : header;
  report.rows = std::move(rows);
  report.groups = aggregate_rows(report.rows);
  return report_to_jsonl(report);
}

}  // namespace dpksa
