#include "gptc/evalkit.hpp"

#include "gptc/suggest.hpp"
#include "gptc/vocab.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

namespace gptc::evalkit {

using lexnorm::TokenKind;

std::size_t lcs_length(std::string_view a, std::string_view b) {
    std::vector<std::size_t> row(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = 0;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = a[i - 1] == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
            diag = up;
        }
    }
    return row[b.size()];
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
    std::vector<std::size_t> row(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) {
        row[j] = j;
    }
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row[b.size()];
}

std::string normalize_whitespace(std::string_view text) {
    std::string out;
    bool pending = false;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c)) != 0) {
            pending = !out.empty();
            continue;
        }
        if (pending) {
            out += ' ';
            pending = false;
        }
        out += c;
    }
    return out;
}

RougeL rouge_l(std::string_view candidate, std::string_view reference) {
    const std::string c = normalize_whitespace(candidate);
    const std::string r = normalize_whitespace(reference);
    RougeL out;
    if (c.empty()) {
        out.empty_candidate = true;
        return out;
    }
    const auto lcs = static_cast<double>(lcs_length(c, r));
    out.precision = lcs / static_cast<double>(c.size());
    out.recall = r.empty() ? 0.0 : lcs / static_cast<double>(r.size());
    return out;
}

double edit_similarity(std::string_view candidate, std::string_view reference) {
    const std::size_t longest = std::max(candidate.size(), reference.size());
    if (longest == 0) {
        return 100.0;
    }
    return 100.0 * (1.0 - static_cast<double>(levenshtein(candidate, reference)) / static_cast<double>(longest));
}

Perplexity perplexity_from_log_probs(std::span<const double> log_probs) {
    Perplexity p;
    p.positions = log_probs.size();
    if (log_probs.empty()) {
        return p;
    }
    double nll = 0.0;
    for (double lp : log_probs) {
        if (!std::isfinite(lp)) {
            p.infinite = true;
            p.value = std::numeric_limits<double>::infinity();
            return p;
        }
        nll -= lp;
    }
    p.value = std::exp(nll / static_cast<double>(log_probs.size()));
    return p;
}

Perplexity perplexity(decoder::DecoderModel& model, std::span<const std::vector<TokenId>> sequences) {
    std::vector<double> all;
    for (const auto& s : sequences) {
        const auto lp = model.score_sequence(s);
        all.insert(all.end(), lp.begin(), lp.end());
    }
    return perplexity_from_log_probs(all);
}

bool syntax_valid(std::string_view text, Language lang) {
    lexnorm::TokenStream stream;
    try {
        stream = lexnorm::lex(text, lang);
    } catch (const lexnorm::LexError&) {
        return false;
    }
    if (stream.has_errors()) {
        return false;
    }
    const std::uint32_t last_line = static_cast<std::uint32_t>(std::count(text.begin(), text.end(), '\n')) + 1;
    int braces = 0;
    int parens = 0;
    int brackets = 0;
    for (const auto& t : stream.tokens) {
        if (t.kind != TokenKind::punct) {
            continue;
        }
        if (t.text == "{") ++braces;
        else if (t.text == "}") --braces;
        if (braces < 0) {
            return false;
        }
        if (t.line != last_line) {
            continue;
        }
        if (t.text == "(") ++parens;
        else if (t.text == ")") --parens;
        else if (t.text == "[") ++brackets;
        else if (t.text == "]") --brackets;
        if (parens < 0 || brackets < 0) {
            return false;
        }
    }
    return parens == 0 && brackets == 0;
}

double syntax_valid_rate(std::span<const std::pair<std::string, std::string>> pairs, Language lang) {
    if (pairs.empty()) {
        return 0.0;
    }
    std::size_t ok = 0;
    for (const auto& [context, suggestion] : pairs) {
        ok += syntax_valid(context + suggestion, lang) ? 1 : 0;
    }
    return 100.0 * static_cast<double>(ok) / static_cast<double>(pairs.size());
}

std::vector<DisplayLine> display_lines(const lexnorm::TokenStream& stream) {
    std::vector<DisplayLine> lines;
    const auto& toks = stream.tokens;
    int level = 0;
    int brace_depth = 0;
    std::size_t i = 0;
    if (i < toks.size() && toks[i].kind == TokenKind::bof) {
        ++i;
    }
    while (i < toks.size() && toks[i].kind != TokenKind::eof) {
        DisplayLine line;
        line.begin = i;
        while (i < toks.size() && toks[i].kind != TokenKind::eol && toks[i].kind != TokenKind::eof) {
            ++i;
        }
        line.end = i;
        const bool at_eof = i >= toks.size() || toks[i].kind == TokenKind::eof;
        if (at_eof && std::all_of(toks.begin() + static_cast<std::ptrdiff_t>(line.begin),
                                  toks.begin() + static_cast<std::ptrdiff_t>(line.end),
                                  [](const lexnorm::Token& t) { return lexnorm::is_structural(t.kind); })) {
            break;
        }
        int indent_level = -1;
        for (std::size_t j = line.begin; j < line.end; ++j) {
            const auto& t = toks[j];
            if (t.kind == TokenKind::indent) {
                ++level;
            } else if (t.kind == TokenKind::dedent) {
                --level;
            } else if (!lexnorm::is_structural(t.kind) && indent_level < 0) {
                indent_level = level;
            }
        }
        const std::span<const lexnorm::Token> span(toks.data() + line.begin, line.end - line.begin);
        int indent = std::max(indent_level, 0);
        if (stream.language == Language::toy_c) {
            indent = brace_depth;
            for (const auto& t : span) {
                if (!lexnorm::is_structural(t.kind)) {
                    if (t.kind == TokenKind::punct && t.text == "}") {
                        indent = std::max(0, indent - 1);
                    }
                    break;
                }
            }
            for (const auto& t : span) {
                if (t.kind == TokenKind::punct && t.text == "{") {
                    ++brace_depth;
                } else if (t.kind == TokenKind::punct && t.text == "}") {
                    brace_depth = std::max(0, brace_depth - 1);
                }
            }
        }
        std::vector<std::pair<std::size_t, std::size_t>> spans;
        std::string body = lexnorm::render_line(span, stream.language, lexnorm::RenderStyle::display, &spans);
        line.indent = body.empty() ? 0 : static_cast<std::size_t>(indent) * 4;
        line.text = std::string(line.indent, ' ') + body;
        for (auto& [b, e] : spans) {
            line.spans.emplace_back(b + line.indent, e + line.indent);
        }
        lines.push_back(std::move(line));
        if (i < toks.size() && toks[i].kind == TokenKind::eol) {
            ++i;
        }
    }
    return lines;
}

std::string EvalConfig::digest_text() const {
    std::ostringstream os;
    os << "beam=" << beam_width << " max_len=" << max_len << " alpha=" << alpha << " kappa=" << kappa
       << " seed=" << seed << " mode=" << decoder::to_string(mode) << " lang_mode=" << model::to_string(policy.mode)
       << " max_context=" << policy.max_context << " max_samples=" << max_samples;
    return os.str();
}

std::string EvalReport::to_key_values() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "model=" << model_id << '\n' << "corpus=" << corpus_id << '\n' << "config_digest=" << config_digest << '\n';
    os << "perplexity=" << (perplexity.infinite ? std::string("inf") : std::to_string(perplexity.value)) << '\n';
    os << "perplexity_positions=" << perplexity.positions << '\n';
    os << "rouge_l_precision=" << rouge_precision << '\n' << "rouge_l_recall=" << rouge_recall << '\n';
    os << "edit_similarity_pct=" << edit_similarity_pct << '\n' << "syntax_valid_pct=" << syntax_valid_pct << '\n';
    os << "samples=" << samples << '\n' << "skipped=" << skipped << '\n' << "trie_misses=" << trie_misses << '\n';
    return os.str();
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["model"] = model_id;
    j["corpus"] = corpus_id;
    j["config_digest"] = config_digest;
    j["perplexity"] = perplexity.infinite ? nlohmann::json("inf") : nlohmann::json(perplexity.value);
    j["perplexity_positions"] = perplexity.positions;
    j["rouge_l"] = {{"precision", rouge_precision}, {"recall", rouge_recall}};
    j["edit_similarity_pct"] = edit_similarity_pct;
    j["syntax_valid_pct"] = syntax_valid_pct;
    j["samples"] = samples;
    j["skipped"] = skipped;
    j["trie_misses"] = trie_misses;
    j["records"] = nlohmann::json::array();
    for (const auto& r : records) {
        j["records"].push_back({{"path", r.path},
                                {"line", r.line},
                                {"cut", r.cut},
                                {"typed", r.typed},
                                {"suggestion", r.suggestion},
                                {"reference", r.reference},
                                {"edit_similarity", r.edit_similarity},
                                {"syntax_valid", r.syntax_valid},
                                {"trie_miss", r.trie_miss}});
    }
    return j;
}

namespace {

bool ident_like(TokenKind k) {
    return k == TokenKind::identifier || k == TokenKind::keyword;
}

}  // namespace

EvalReport evaluate(decoder::DecoderModel& model, const vocab::SubtokenVocabulary& vocab,
                    std::span<const pipeline::Document> docs, std::span<const std::vector<TokenId>> ppl_sequences,
                    const EvalConfig& config) {
    if (docs.empty()) {
        throw Error("evaluation needs a non-empty test split");
    }
    EvalReport report;
    report.model_id = config.model_id;
    report.corpus_id = config.corpus_id;
    report.config_digest = to_hex(fnv1a(config.digest_text()));
    report.perplexity = perplexity(model, ppl_sequences);

    std::mt19937_64 rng(config.seed);
    double rouge_p = 0.0;
    double rouge_r = 0.0;
    double edit = 0.0;
    std::size_t valid = 0;

    for (const auto& doc : docs) {
        const auto& toks = doc.stream.tokens;
        const auto lines = display_lines(doc.stream);
        std::string previous_text;
        for (std::size_t li = 0; li < lines.size(); ++li) {
            const auto& line = lines[li];
            if (line.text.size() <= line.indent) {
                previous_text += line.text + "\n";
                continue;
            }
            if (config.max_samples != 0 && report.samples + report.skipped >= config.max_samples) {
                break;
            }
            const std::size_t width = line.text.size() - line.indent;
            const std::size_t cut = line.indent + static_cast<std::size_t>(rng() % width);

            std::size_t q_index = line.end;
            std::size_t query = line.indent;
            for (std::size_t j = line.begin; j < line.end; ++j) {
                const auto& t = toks[j];
                if (lexnorm::is_structural(t.kind)) {
                    continue;
                }
                const auto [b, e] = line.spans[j - line.begin];
                if (e < cut || (e == cut && !ident_like(t.kind))) {
                    query = e;
                    continue;
                }
                q_index = j;
                break;
            }
            SampleRecord rec;
            rec.path = doc.path;
            rec.line = li + 1;
            rec.cut = cut;
            rec.typed = line.text.substr(query, cut - query);
            rec.reference = line.text.substr(cut);
            try {
                const std::span<const lexnorm::Token> ctx_tokens(toks.data(), q_index);
                const auto ids = vocab::encode(ctx_tokens, vocab);
                const auto prepared = pipeline::prepare_context(ids, doc.language, vocab, config.policy, config.max_len);
                rec.truncated_context = prepared.truncated;
                decoder::DecodeRequest req;
                req.context_ids = prepared.ids;
                req.beam_width = config.beam_width;
                req.max_len = config.max_len;
                req.break_ids = decoder::default_break_ids(vocab, doc.language);
                req.mode = config.mode;
                const auto result = decoder::beam_search(model, req);
                const lexnorm::Token* prev = q_index > 0 ? &toks[q_index - 1] : nullptr;
                const auto trie = suggest::build_trie(result.hypotheses, vocab, doc.language, prev, query);
                if (config.keep_records) {
                    for (const auto& h : result.hypotheses) {
                        rec.hypotheses.push_back(suggest::postprocess(h.ids, vocab, doc.language).text);
                    }
                }
                const auto pruned = suggest::prune_on_text(trie, rec.typed);
                if (pruned) {
                    rec.suggestion = suggest::steps_text(suggest::traverse_greedy(*pruned, config.alpha, config.kappa));
                } else {
                    rec.trie_miss = true;
                    ++report.trie_misses;
                }
            } catch (const Error&) {
                ++report.skipped;
                previous_text += line.text + "\n";
                continue;
            }
            rec.edit_similarity = edit_similarity(rec.suggestion, rec.reference);
            const auto rouge = rouge_l(rec.suggestion, rec.reference);
            rec.syntax_valid = syntax_valid(previous_text + line.text.substr(0, cut) + rec.suggestion, doc.language);
            rouge_p += rouge.precision;
            rouge_r += rouge.recall;
            edit += rec.edit_similarity;
            valid += rec.syntax_valid ? 1 : 0;
            ++report.samples;
            if (config.keep_records) {
                report.records.push_back(std::move(rec));
            }
            previous_text += line.text + "\n";
        }
    }
    if (report.samples > 0) {
        const auto n = static_cast<double>(report.samples);
        report.rouge_precision = rouge_p / n;
        report.rouge_recall = rouge_r / n;
        report.edit_similarity_pct = edit / n;
        report.syntax_valid_pct = 100.0 * static_cast<double>(valid) / n;
    }
    return report;
}

}  // namespace gptc::evalkit
