#pragma once

#include "gptc/common.hpp"
#include "gptc/decoder.hpp"
#include "gptc/lexnorm.hpp"
#include "gptc/model.hpp"
#include "gptc/suggest.hpp"
#include "gptc/vocab.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gptc::service {

inline constexpr std::string_view kSchema = "v1";
inline constexpr std::size_t kMaxContextChars = 100000;
inline constexpr std::size_t kMaxBeamWidth = 32;
inline constexpr std::size_t kMaxLen = 64;

/// Wire fields: context, language, beam_width, max_len, alpha, kappa, mode.
struct CompletionRequest {
    std::string context;
    Language language = Language::toy_py;
    std::size_t beam_width = 5;
    std::size_t max_len = 10;
    double alpha = suggest::kDefaultAlpha;
    double kappa = suggest::kDefaultKappa;
    decoder::Mode mode = decoder::Mode::cached;
};

/// Malformed request; carries the HTTP status to answer with.
class RequestError : public Error {
public:
    RequestError(int status, std::string code, const std::string& message);
    int status() const noexcept { return status_; }
    const std::string& code() const noexcept { return code_; }

private:
    int status_;
    std::string code_;
};

CompletionRequest parse_request(const nlohmann::json& body);
CompletionRequest parse_request(std::string_view body);
nlohmann::json to_json(const CompletionRequest& request);

struct Suggestion {
    std::vector<std::string> subtokens;
    /// exp(cumulative log-prob) after each subtoken.
    std::vector<double> scores;
    double score = 0.0;
    /// Text to insert after what the user already typed.
    std::string display_text;
    std::vector<suggest::Placeholder> placeholders;
};

struct CompletionResponse {
    std::vector<Suggestion> suggestions;
    /// Trie already pruned by `typed`.
    suggest::CompletionTrie trie;
    /// Trailing partial identifier of the context, treated as typed characters.
    std::string typed;
    /// traverse_greedy of `trie` with the request's alpha and kappa.
    std::string ghost_text;
    bool truncated = false;
    bool trie_miss = false;
    std::size_t context_subtokens = 0;
    decoder::CallStats call_stats;
    double latency_ms = 0.0;
};

nlohmann::json to_json(const CompletionResponse& response);

struct ServiceOptions {
    /// Requests beyond this many in flight are answered with 429.
    std::size_t max_in_flight = 4;
    int retry_after_seconds = 1;
};

struct HttpReply {
    int status = 200;
    std::string body;
    std::optional<int> retry_after;
};

/// Stateless completion engine over read-only parameters.
class CompletionService {
public:
    CompletionService(model::ModelParams<float> params, vocab::SubtokenVocabulary vocab, ServiceOptions options = {});

    CompletionResponse complete(const CompletionRequest& request) const;
    nlohmann::json health() const;
    const std::string& model_digest() const noexcept { return digest_; }
    const model::ModelParams<float>& params() const noexcept { return params_; }
    const vocab::SubtokenVocabulary& vocabulary() const noexcept { return vocab_; }

    HttpReply handle_completion(std::string_view body);
    HttpReply handle_health() const;

private:
    model::ModelParams<float> params_;
    vocab::SubtokenVocabulary vocab_;
    lexnorm::LiteralTable literals_;
    ServiceOptions options_;
    std::string digest_;
    std::atomic<std::size_t> in_flight_{0};
};

/// Serves /v1/completions and /v1/health until stop() is called.
class HttpServer {
public:
    explicit HttpServer(CompletionService& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds `host:port` (port 0 picks a free port) and returns the bound port.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void listen();
    void stop();

private:
    struct Impl;
    Impl* impl_;
};

}  // namespace gptc::service
