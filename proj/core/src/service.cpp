#include "gptc/service.hpp"

#include "gptc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

namespace gptc::service {

using nlohmann::json;

RequestError::RequestError(int status, std::string code, const std::string& message)
    : Error(message), status_(status), code_(std::move(code)) {}

namespace {

RequestError bad(const std::string& message) {
    return RequestError(400, "bad_request", message);
}

std::size_t size_field(const json& body, const char* key, std::size_t fallback, std::size_t lo, std::size_t hi) {
    if (!body.contains(key)) {
        return fallback;
    }
    const auto& v = body.at(key);
    if (!v.is_number_integer()) {
        throw bad(std::string(key) + " must be an integer");
    }
    const auto n = v.get<long long>();
    if (n < static_cast<long long>(lo) || n > static_cast<long long>(hi)) {
        throw bad(std::string(key) + " must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    return static_cast<std::size_t>(n);
}

double real_field(const json& body, const char* key, double fallback, double lo, double hi) {
    if (!body.contains(key)) {
        return fallback;
    }
    const auto& v = body.at(key);
    if (!v.is_number()) {
        throw bad(std::string(key) + " must be a number");
    }
    const double x = v.get<double>();
    if (!std::isfinite(x) || x < lo || x > hi) {
        throw bad(std::string(key) + " out of range");
    }
    return x;
}

bool is_ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

/// Display text of a hypothesis along the trie, and the subtokens and scores it passes.
bool walk(const suggest::TrieNode& root, const decoder::Hypothesis& h, Suggestion& s) {
    const suggest::TrieNode* node = &root;
    for (TokenId id : h.ids) {
        const auto it = std::find_if(node->children.begin(), node->children.end(),
                                     [&](const suggest::TrieNode& c) { return c.id == id; });
        if (it == node->children.end()) {
            continue;  // structural tokens have no node
        }
        node = &*it;
        if (node->is_break) {
            break;
        }
        s.subtokens.push_back(node->subtoken);
        s.scores.push_back(node->score);
        s.display_text += node->text;
    }
    return !s.subtokens.empty();
}

}  // namespace

CompletionRequest parse_request(const json& body) {
    if (!body.is_object()) {
        throw bad("request body must be an object");
    }
    static const std::set<std::string> kKnown = {"context", "language", "beam_width", "max_len",
                                                 "alpha",   "kappa",    "mode"};
    for (const auto& [key, value] : body.items()) {
        if (kKnown.count(key) == 0) {
            throw bad("unknown field '" + key + "'");
        }
    }
    CompletionRequest r;
    if (!body.contains("context") || !body.at("context").is_string()) {
        throw bad("context must be a string");
    }
    r.context = body.at("context").get<std::string>();
    if (r.context.size() > kMaxContextChars) {
        throw bad("context exceeds " + std::to_string(kMaxContextChars) + " characters");
    }
    if (!body.contains("language") || !body.at("language").is_string()) {
        throw bad("language must be a string");
    }
    const auto lang = body.at("language").get<std::string>();
    if (!is_registered_language(lang)) {
        throw bad("unknown language '" + lang + "'");
    }
    r.language = parse_language(lang);
    r.beam_width = size_field(body, "beam_width", r.beam_width, 1, kMaxBeamWidth);
    r.max_len = size_field(body, "max_len", r.max_len, 1, kMaxLen);
    r.alpha = real_field(body, "alpha", r.alpha, 0.0, 1.0);
    r.kappa = real_field(body, "kappa", r.kappa, 1e-9, 1e9);
    if (body.contains("mode")) {
        if (!body.at("mode").is_string()) {
            throw bad("mode must be a string");
        }
        try {
            r.mode = decoder::parse_mode(body.at("mode").get<std::string>());
        } catch (const Error& e) {
            throw bad(e.what());
        }
    }
    return r;
}

CompletionRequest parse_request(std::string_view body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw bad(std::string("malformed JSON: ") + e.what());
    }
    return parse_request(j);
}

json to_json(const CompletionRequest& r) {
    return {{"context", r.context},
            {"language", std::string(to_string(r.language))},
            {"beam_width", r.beam_width},
            {"max_len", r.max_len},
            {"alpha", r.alpha},
            {"kappa", r.kappa},
            {"mode", std::string(decoder::to_string(r.mode))}};
}

json to_json(const CompletionResponse& r) {
    json suggestions = json::array();
    for (const auto& s : r.suggestions) {
        json spans = json::array();
        for (const auto& p : s.placeholders) {
            spans.push_back({p.begin, p.end});
        }
        suggestions.push_back({{"subtokens", s.subtokens},
                               {"scores", s.scores},
                               {"score", s.score},
                               {"display_text", s.display_text},
                               {"placeholders", spans}});
    }
    return {{"schema", std::string(kSchema)},
            {"suggestions", suggestions},
            {"trie", suggest::trie_to_json(r.trie)},
            {"typed", r.typed},
            {"ghost_text", r.ghost_text},
            {"truncated", r.truncated},
            {"trie_miss", r.trie_miss},
            {"context_subtokens", r.context_subtokens},
            {"call_stats",
             {{"model_calls", r.call_stats.model_calls},
              {"steps", r.call_stats.steps},
              {"rows", r.call_stats.rows},
              {"mode", std::string(decoder::to_string(r.call_stats.mode))}}},
            {"latency_ms", r.latency_ms}};
}

CompletionService::CompletionService(model::ModelParams<float> params, vocab::SubtokenVocabulary vocab,
                                     ServiceOptions options)
    : params_(std::move(params)), vocab_(std::move(vocab)), options_(options) {
    if (params_.config.vocab_size != vocab_.size()) {
        throw Error("checkpoint vocabulary size " + std::to_string(params_.config.vocab_size) +
                    " does not match vocabulary file size " + std::to_string(vocab_.size()));
    }
    literals_ = pipeline::kept_table(vocab_);
    digest_ = to_hex(model::params_digest(params_));
}

CompletionResponse CompletionService::complete(const CompletionRequest& request) const {
    const auto start = std::chrono::steady_clock::now();
    CompletionResponse resp;

    lexnorm::TokenStream raw;
    try {
        raw = lexnorm::lex(request.context, request.language, lexnorm::LexOptions{false});
    } catch (const lexnorm::LexError& e) {
        throw bad(std::string("context does not lex: ") + e.what());
    }
    auto stream = lexnorm::normalize(raw, literals_);
    auto& toks = stream.tokens;
    if (!request.context.empty() && is_ident_char(request.context.back()) && !toks.empty() &&
        (toks.back().kind == lexnorm::TokenKind::identifier || toks.back().kind == lexnorm::TokenKind::keyword)) {
        resp.typed = toks.back().text;
        toks.pop_back();
    }
    const auto line_start = request.context.find_last_of('\n');
    const std::size_t column = request.context.size() - (line_start == std::string::npos ? 0 : line_start + 1);
    const std::size_t root_position = column - std::min(column, resp.typed.size());

    const auto ids = vocab::encode(std::span<const lexnorm::Token>(toks), vocab_);
    pipeline::ContextPolicy policy{params_.config.lang_mode, params_.config.n_ctx};
    pipeline::PreparedContext prepared;
    try {
        prepared = pipeline::prepare_context(ids, request.language, vocab_, policy, request.max_len);
    } catch (const Error& e) {
        throw bad(e.what());
    }
    resp.truncated = prepared.truncated;
    resp.context_subtokens = prepared.ids.size();

    const int lang = params_.config.lang_mode == model::LangMode::embedding
                         ? pipeline::language_index(request.language)
                         : -1;
    decoder::TransformerModel lm(params_, lang);
    decoder::DecodeRequest dreq;
    dreq.context_ids = prepared.ids;
    dreq.beam_width = request.beam_width;
    dreq.max_len = request.max_len;
    dreq.break_ids = decoder::default_break_ids(vocab_, request.language);
    dreq.mode = request.mode;
    decoder::DecodeResult result;
    try {
        result = decoder::beam_search(lm, dreq);
    } catch (const model::ContextLengthError& e) {
        throw bad(e.what());
    }
    resp.call_stats = result.stats;

    const lexnorm::Token* prev = toks.empty() ? nullptr : &toks.back();
    const auto full = suggest::build_trie(result.hypotheses, vocab_, request.language, prev, root_position);
    // Whitespace typed after the last complete token on this line stands for the
    // single separating space of the trie text.
    const auto& ctx = request.context;
    std::size_t ws = ctx.size() - resp.typed.size();
    while (ws > 0 && (ctx[ws - 1] == ' ' || ctx[ws - 1] == '\t')) {
        --ws;
    }
    const bool spaced = ws < ctx.size() - resp.typed.size() && ws > 0 && ctx[ws - 1] != '\n';
    std::vector<std::string> candidates;
    if (spaced) {
        candidates.push_back(" " + resp.typed);
    }
    candidates.push_back(resp.typed);
    std::string consumed = candidates.front();
    std::optional<suggest::CompletionTrie> pruned;
    for (const auto& c : candidates) {
        pruned = suggest::prune_on_text(full, c);
        if (pruned) {
            consumed = c;
            break;
        }
    }
    if (!pruned) {
        resp.trie_miss = true;
        resp.trie.root_position = root_position;
    } else {
        resp.trie = std::move(*pruned);
        resp.ghost_text = suggest::steps_text(suggest::traverse_greedy(resp.trie, request.alpha, request.kappa));
    }

    for (const auto& h : result.hypotheses) {
        Suggestion s;
        if (!walk(full.root, h, s) || s.display_text.rfind(consumed, 0) != 0) {
            continue;
        }
        s.score = std::exp(h.log_prob);
        const auto pp = suggest::postprocess(h.ids, vocab_, request.language);
        const std::size_t lead = s.display_text.size() >= pp.text.size() ? s.display_text.size() - pp.text.size() : 0;
        for (const auto& p : pp.placeholders) {
            if (p.begin + lead >= consumed.size()) {
                s.placeholders.push_back({p.begin + lead - consumed.size(), p.end + lead - consumed.size()});
            }
        }
        s.display_text.erase(0, consumed.size());
        resp.suggestions.push_back(std::move(s));
    }
    std::stable_sort(resp.suggestions.begin(), resp.suggestions.end(),
                     [](const Suggestion& a, const Suggestion& b) { return a.score > b.score; });

    resp.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return resp;
}

json CompletionService::health() const {
    return {{"schema", std::string(kSchema)},
            {"status", "ok"},
            {"model_digest", digest_},
            {"vocab_size", vocab_.size()},
            {"n_ctx", params_.config.n_ctx},
            {"lang_mode", std::string(model::to_string(params_.config.lang_mode))}};
}

HttpReply CompletionService::handle_health() const {
    return {200, health().dump(), std::nullopt};
}

HttpReply CompletionService::handle_completion(std::string_view body) {
    const std::size_t before = in_flight_.fetch_add(1);
    struct Release {
        std::atomic<std::size_t>& n;
        ~Release() { n.fetch_sub(1); }
    } release{in_flight_};
    auto error = [](int status, const std::string& code, const std::string& message) {
        json j = {{"schema", std::string(kSchema)},
                  {"error", {{"status", status}, {"code", code}, {"message", message}}}};
        return j.dump();
    };
    if (before >= options_.max_in_flight) {
        return {429, error(429, "overloaded", "too many requests in flight"), options_.retry_after_seconds};
    }
    try {
        const auto request = parse_request(body);
        return {200, to_json(complete(request)).dump(), std::nullopt};
    } catch (const RequestError& e) {
        return {e.status(), error(e.status(), e.code(), e.what()), std::nullopt};
    } catch (const Error& e) {
        return {500, error(500, "internal", e.what()), std::nullopt};
    }
}

}  // namespace gptc::service
