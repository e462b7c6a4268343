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

#include <chrono>
#include <cstdlib>
#include <optional>
#include <semaphore>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "dpksa/tokenize.hpp"

namespace dpksa {

enum class TemplateKind { WithDocument, WithKeywords, ZeroShot };

// Prompt shape with {question} / {document} / {keywords} placeholders. The
// defaults carry "Document:" / "Keywords:" marker lines that the mock
// generator relies on; edited templates only need to keep the placeholders.
struct PromptTemplate {
  TemplateKind kind = TemplateKind::ZeroShot;
  std::string text;

  static PromptTemplate default_for(TemplateKind kind) {
    switch (kind) {
      case TemplateKind::WithDocument:
        return {kind,
                "Answer the question using only the document.\n"
                "Document: {document}\n"
                "Question: {question}\n"
                "Short answer:"};
      case TemplateKind::WithKeywords:
        return {kind,
                "Answer the question. Some of these keywords may be "
                "relevant.\n"
                "Keywords: {keywords}\n"
                "Question: {question}\n"
                "Short answer:"};
      case TemplateKind::ZeroShot:
        return {kind,
                "Answer the question.\n"
                "Question: {question}\n"
                "Short answer:"};
    }
    throw std::logic_error("unknown template kind");
  }
};

struct GenerationRequest {
  std::string prompt;
  int max_tokens = 64;
  double temperature = 0.0;
  std::optional<std::uint64_t> seed;
};

struct RetryPolicy {
  int max_attempts = 3;
  double backoff_seconds = 0.5;  // doubled after each failed attempt
};

struct GeneratorEndpointConfig {
  std::string base_url;          // e.g. http://127.0.0.1:8000
  std::string model;             // model name passed through to the endpoint
  std::string auth_token_env;    // name of the env var holding the bearer token
  double timeout_seconds = 30.0;
  int max_parallel = 4;
  RetryPolicy retry;

  void validate() const {
    if (base_url.empty()) {
      throw std::invalid_argument("endpoint: base_url is required");
    }
    if (max_parallel < 1) {
      throw std::invalid_argument("endpoint: max_parallel must be >= 1");
    }
    if (!(timeout_seconds > 0.0)) {
      throw std::invalid_argument("endpoint: timeout must be > 0");
    }
  }
};

class GenerationError : public std::runtime_error {
 public:
  enum class Kind { Timeout, HttpStatus, MalformedResponse, Transport };

  GenerationError(Kind kind, const std::string& what, int status = 0)
      : std::runtime_error(what), kind(kind), status(status) {}

  Kind kind;
  int status;
};

inline std::string render_prompt(
    const PromptTemplate& tmpl, std::string_view question,
    const std::optional<std::string>& document,
    const std::optional<std::vector<std::string>>& keywords) {
  const bool wants_document = tmpl.kind == TemplateKind::WithDocument;
  const bool wants_keywords = tmpl.kind == TemplateKind::WithKeywords;
  if (document.has_value() && !wants_document) {
    throw std::invalid_argument(
        "render_prompt: document supplied but the template takes none");
  }
  if (keywords.has_value() && !wants_keywords) {
    throw std::invalid_argument(
        "render_prompt: keywords supplied but the template takes none");
  }
  if (wants_document && !document.has_value()) {
    throw std::invalid_argument("render_prompt: missing document");
  }
  if (wants_keywords && !keywords.has_value()) {
    throw std::invalid_argument("render_prompt: missing keywords");
  }

  std::string joined_keywords;
  if (wants_keywords) {
    for (std::size_t i = 0; i < keywords->size(); ++i) {
      if (i > 0) joined_keywords += ", ";
      joined_keywords += (*keywords)[i];
    }
  }

  std::string out = tmpl.text;
  auto substitute = [&](std::string_view placeholder, std::string_view value) {
    std::size_t pos;
    while ((pos = out.find(placeholder)) != std::string::npos) {
      out.replace(pos, placeholder.size(), value);
    }
  };
  substitute("{question}", question);
  if (wants_document) substitute("{document}", *document);
  if (wants_keywords) substitute("{keywords}", joined_keywords);

  const std::size_t leftover = out.find('{');
  if (leftover != std::string::npos && out.find('}', leftover) != std::string::npos) {
    for (std::string_view ph : {"{question}", "{document}", "{keywords}"}) {
      if (out.find(ph) != std::string::npos) {
        throw std::invalid_argument("render_prompt: unresolved placeholder " +
                                    std::string(ph));
      }
    }
  }
  if (out.empty()) throw std::invalid_argument("render_prompt: empty prompt");
  return out;
}

// Chat-completion HTTP client. Wire format:
//   POST {base_url}/v1/chat/completions
//   {"model": ..., "messages": [{"role": "user", "content": prompt}],
//    "max_tokens": ..., "temperature": ..., "seed": ...}
// and the completion text is read from choices[0].message.content. Retries
// run on timeouts, transport errors, 429 and 5xx with exponential backoff;
// other statuses fail immediately. At most `max_parallel` requests are in
// flight across all threads sharing one client.
class HttpGenerator {
 public:
  explicit HttpGenerator(GeneratorEndpointConfig config)
      : config_(std::move(config)), slots_(config_.max_parallel) {
    config_.validate();
  }

  std::string generate(const GenerationRequest& request) {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    const nlohmann::json body = make_body(request);
    std::string last_error = "no attempts made";
    GenerationError::Kind last_kind = GenerationError::Kind::Transport;
    int last_status = 0;

    for (int attempt = 0; attempt < config_.retry.max_attempts; ++attempt) {
      if (attempt > 0) {
        const double sleep_s =
            config_.retry.backoff_seconds * std::pow(2.0, attempt - 1);
        std::this_thread::sleep_for(
            std::chrono::duration<double>(sleep_s));
      }
      httplib::Client client(config_.base_url);
      set_timeouts(client);
      httplib::Headers headers;
      if (!config_.auth_token_env.empty()) {
        if (const char* token = std::getenv(config_.auth_token_env.c_str())) {
          headers.emplace("Authorization", std::string("Bearer ") + token);
        }
      }
      auto result = client.Post("/v1/chat/completions", headers, body.dump(),
                                "application/json");
      if (!result) {
        const bool timed_out =
            result.error() == httplib::Error::ConnectionTimeout ||
            result.error() == httplib::Error::Read ||
            result.error() == httplib::Error::Write;
        last_kind = timed_out ? GenerationError::Kind::Timeout
                              : GenerationError::Kind::Transport;
        last_error = std::string("transport error: ") +
                     httplib::to_string(result.error());
        continue;  // retryable
      }
      const int status = result->status;
      if (status == 429 || (status >= 500 && status < 600)) {
        last_kind = GenerationError::Kind::HttpStatus;
        last_status = status;
        last_error = "retryable HTTP status " + std::to_string(status);
        continue;
      }
      if (status != 200) {
        throw GenerationError(GenerationError::Kind::HttpStatus,
                              "HTTP status " + std::to_string(status), status);
      }
      return parse_completion(result->body);
    }
    throw GenerationError(last_kind,
                          "generate failed after " +
                              std::to_string(config_.retry.max_attempts) +
                              " attempts: " + last_error,
                          last_status);
  }

  const GeneratorEndpointConfig& config() const { return config_; }

 private:
  nlohmann::json make_body(const GenerationRequest& request) const {
    nlohmann::json body = {
        {"model", config_.model},
        {"messages",
         nlohmann::json::array(
             {{{"role", "user"}, {"content", request.prompt}}})},
        {"max_tokens", request.max_tokens},
        {"temperature", request.temperature},
    };
    if (request.seed) body["seed"] = *request.seed;
    return body;
  }

  void set_timeouts(httplib::Client& client) const {
    const auto usec = static_cast<time_t>(config_.timeout_seconds * 1e6);
    client.set_connection_timeout(0, usec);
    client.set_read_timeout(0, usec);
    client.set_write_timeout(0, usec);
  }

  static std::string parse_completion(const std::string& body) {
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error&) {
      throw GenerationError(GenerationError::Kind::MalformedResponse,
                            "response body is not JSON");
    }
    if (!parsed.contains("choices") || !parsed["choices"].is_array() ||
        parsed["choices"].empty()) {
      throw GenerationError(GenerationError::Kind::MalformedResponse,
                            "response has no choices");
    }
    const auto& first = parsed["choices"][0];
    if (!first.contains("message") || !first["message"].contains("content") ||
        !first["message"]["content"].is_string()) {
      throw GenerationError(GenerationError::Kind::MalformedResponse,
                            "response has no message content");
    }
    return first["message"]["content"].get<std::string>();
  }

  GeneratorEndpointConfig config_;
  std::counting_semaphore<> slots_;
};

// Hermetic generator behaviors for tests and offline runs.
enum class MockKind {
  EchoDocumentKeywords,  // normalized tokens of the prompt's document section
  AnswerFromKeywords,    // the prompt's keyword list, verbatim
  FixedString,
};

struct MockBehavior {
  MockKind kind = MockKind::FixedString;
  std::string fixed;
};

namespace detail {

// Pulls the section after `marker` up to the next "\nQuestion:" line (or the
// end). Only meaningful for the default templates, which keep those markers.
inline std::string prompt_section(const std::string& prompt,
                                  std::string_view marker) {
  const std::size_t at = prompt.find(marker);
  if (at == std::string::npos) return {};
  const std::size_t begin = at + marker.size();
  std::size_t end = prompt.find("\nQuestion:", begin);
  if (end == std::string::npos) end = prompt.size();
  return prompt.substr(begin, end - begin);
}

}  // namespace detail

// Pure function of (prompt, behavior); the request seed is accepted for
// signature parity with the HTTP generator but deterministic mocks ignore it.
inline std::string mock_generate(const GenerationRequest& request,
                                 const MockBehavior& behavior) {
  switch (behavior.kind) {
    case MockKind::FixedString:
      return behavior.fixed;
    case MockKind::AnswerFromKeywords: {
      std::string keywords =
          detail::prompt_section(request.prompt, "Keywords:");
      const std::size_t first = keywords.find_first_not_of(" \t\n");
      if (first == std::string::npos) return {};
      const std::size_t last = keywords.find_last_not_of(" \t\n");
      return keywords.substr(first, last - first + 1);
    }
    case MockKind::EchoDocumentKeywords: {
      const std::string document =
          detail::prompt_section(request.prompt, "Document:");
      const TokenSet tokens = normalize_and_tokenize(document);
      std::string out;
      int emitted = 0;
      for (const std::string& token : tokens) {
        if (emitted >= request.max_tokens) break;
        if (!out.empty()) out += ' ';
        out += token;
        ++emitted;
      }
      return out;
    }
  }
  throw std::logic_error("unknown mock kind");
}

}  // namespace dpksa
