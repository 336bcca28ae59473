#include "gptc/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <ostream>
#include <set>

namespace gptc::vocab {

using lexnorm::TokenKind;

namespace {

std::string merge_key(std::string_view left, std::string_view right) {
    std::string key;
    key.reserve(left.size() + right.size() + 1);
    key.append(left);
    key.push_back('\0');
    key.append(right);
    return key;
}

std::string final_image(char c) {
    std::string s(1, c);
    s.append(kEndOfToken);
    return s;
}

std::vector<std::string> base_symbols() {
    std::vector<std::string> out;
    for (int c = 0x21; c <= 0x7e; ++c) {
        out.emplace_back(1, static_cast<char>(c));
        out.push_back(final_image(static_cast<char>(c)));
    }
    return out;
}

}  // namespace

bool is_base_char(char c) noexcept {
    const auto u = static_cast<unsigned char>(c);
    return u >= 0x21 && u <= 0x7e;
}

std::vector<std::string> special_images(std::span<const std::string> extra) {
    std::vector<std::string> out = {std::string(lexnorm::kBof),    std::string(lexnorm::kEof),
                                    std::string(lexnorm::kEol),    std::string(lexnorm::kIndent),
                                    std::string(lexnorm::kDedent), std::string(lexnorm::kStrLit),
                                    std::string(lexnorm::kNumLit), std::string(lexnorm::kComment),
                                    std::string(lexnorm::kSep)};
    for (auto lang : kAllLanguages) {
        out.push_back(lexnorm::lang_prefix_image(lang));
    }
    std::set<std::string> seen(out.begin(), out.end());
    for (const auto& image : extra) {
        if (seen.insert(image).second) {
            out.push_back(image);
        }
    }
    return out;
}

SubtokenVocabulary SubtokenVocabulary::from_parts(Scheme scheme, std::vector<std::string> subtokens,
                                                  std::size_t special_count, std::size_t base_count,
                                                  std::vector<std::pair<std::string, std::string>> merges) {
    SubtokenVocabulary v;
    v.scheme_ = scheme;
    v.subtokens_ = std::move(subtokens);
    v.special_count_ = special_count;
    v.base_count_ = base_count;
    v.merges_ = std::move(merges);
    v.index();
    return v;
}

void SubtokenVocabulary::index() {
    ids_.clear();
    for (std::size_t i = 0; i < subtokens_.size(); ++i) {
        if (!ids_.emplace(subtokens_[i], static_cast<TokenId>(i)).second) {
            throw VocabError("duplicate subtoken '" + escape_field(subtokens_[i]) + "'");
        }
    }
    merge_rank_.clear();
    for (std::size_t r = 0; r < merges_.size(); ++r) {
        merge_rank_.emplace(merge_key(merges_[r].first, merges_[r].second), r);
    }
}

std::optional<TokenId> SubtokenVocabulary::find(std::string_view subtoken) const {
    auto it = ids_.find(std::string(subtoken));
    if (it == ids_.end()) {
        return std::nullopt;
    }
    return it->second;
}

TokenId SubtokenVocabulary::id_of(std::string_view subtoken) const {
    if (auto id = find(subtoken)) {
        return *id;
    }
    throw VocabError("unknown subtoken '" + escape_field(subtoken) + "'");
}

const std::string& SubtokenVocabulary::subtoken(TokenId id) const {
    if (id >= subtokens_.size()) {
        throw VocabError("subtoken id " + std::to_string(id) + " out of range (|V|=" +
                         std::to_string(subtokens_.size()) + ")");
    }
    return subtokens_[id];
}

std::optional<TokenId> SubtokenVocabulary::lang_prefix(Language lang) const {
    return find(lexnorm::lang_prefix_image(lang));
}

std::pair<std::string_view, bool> strip_end_marker(std::string_view subtoken) noexcept {
    if (subtoken.size() > kEndOfToken.size() && subtoken.ends_with(kEndOfToken)) {
        return {subtoken.substr(0, subtoken.size() - kEndOfToken.size()), true};
    }
    return {subtoken, false};
}

// ---------------------------------------------------------------------------
// Training

namespace {

void require_normalized(const lexnorm::Token& tok) {
    if (tok.kind == TokenKind::string_literal || tok.kind == TokenKind::number_literal ||
        tok.kind == TokenKind::comment) {
        throw VocabError("stream is not normalized: raw " + std::string(lexnorm::to_string(tok.kind)) +
                         " token at " + std::to_string(tok.line) + ":" + std::to_string(tok.column));
    }
}

bool splits_into_subtokens(TokenKind kind) noexcept {
    return kind == TokenKind::identifier || kind == TokenKind::keyword || kind == TokenKind::punct;
}

void check_chars(std::string_view word) {
    for (char c : word) {
        if (!is_base_char(c)) {
            throw VocabError("character outside the base set: '" + escape_field(std::string_view(&c, 1)) + "'");
        }
    }
}

std::vector<std::string> collect_specials(std::span<const lexnorm::TokenStream> streams,
                                          const TrainOptions& options) {
    std::vector<std::string> extra = options.kept_images;
    std::set<std::string> seen_kept;
    for (const auto& s : streams) {
        for (const auto& t : s.tokens) {
            if (t.kind == TokenKind::kept_literal) {
                seen_kept.insert(t.text);
            }
        }
    }
    extra.insert(extra.end(), seen_kept.begin(), seen_kept.end());
    return special_images(extra);
}

std::map<std::string, std::uint64_t> word_counts(std::span<const lexnorm::TokenStream> streams) {
    std::map<std::string, std::uint64_t> words;
    for (const auto& s : streams) {
        for (const auto& t : s.tokens) {
            require_normalized(t);
            if (splits_into_subtokens(t.kind)) {
                check_chars(t.text);
                ++words[t.text];
            }
        }
    }
    return words;
}

}  // namespace

SubtokenVocabulary train_bpe(std::span<const lexnorm::TokenStream> streams, const TrainOptions& options) {
    std::vector<std::string> symbols = collect_specials(streams, options);
    const std::size_t special_count = symbols.size();
    for (auto& b : base_symbols()) {
        symbols.push_back(std::move(b));
    }
    const std::size_t base_count = symbols.size() - special_count;
    if (options.target_size < symbols.size()) {
        throw VocabError("target size " + std::to_string(options.target_size) +
                         " is below base characters + specials (" + std::to_string(symbols.size()) + ")");
    }

    std::unordered_map<std::string, int> symbol_id;
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        symbol_id.emplace(symbols[i], static_cast<int>(i));
    }

    struct Word {
        std::vector<int> symbols;
        std::uint64_t count;
    };
    std::vector<Word> words;
    for (const auto& [text, count] : word_counts(streams)) {
        Word w{{}, count};
        for (std::size_t i = 0; i < text.size(); ++i) {
            const std::string image = i + 1 == text.size() ? final_image(text[i]) : std::string(1, text[i]);
            w.symbols.push_back(symbol_id.at(image));
        }
        words.push_back(std::move(w));
    }

    std::vector<std::pair<std::string, std::string>> merges;
    std::vector<std::string> warnings;
    while (symbols.size() < options.target_size) {
        std::map<std::pair<int, int>, std::uint64_t> pairs;
        for (const auto& w : words) {
            for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
                pairs[{w.symbols[i], w.symbols[i + 1]}] += w.count;
            }
        }
        const std::pair<int, int>* best = nullptr;
        std::uint64_t best_count = 0;
        std::string best_concat;
        for (const auto& [pair, count] : pairs) {
            if (count < best_count) {
                continue;
            }
            std::string concat = symbols[static_cast<std::size_t>(pair.first)] + symbols[static_cast<std::size_t>(pair.second)];
            if (count > best_count || concat < best_concat ||
                (concat == best_concat && symbols[static_cast<std::size_t>(pair.first)] <
                                              symbols[static_cast<std::size_t>(best->first)])) {
                best = &pair;
                best_count = count;
                best_concat = std::move(concat);
            }
        }
        if (best == nullptr || best_count < 2) {
            warnings.push_back("corpus too small: stopped at |V|=" + std::to_string(symbols.size()) + " of target " +
                               std::to_string(options.target_size));
            break;
        }
        const auto [left, right] = *best;
        merges.emplace_back(symbols[static_cast<std::size_t>(left)], symbols[static_cast<std::size_t>(right)]);
        int merged;
        if (auto it = symbol_id.find(best_concat); it != symbol_id.end()) {
            merged = it->second;
        } else {
            merged = static_cast<int>(symbols.size());
            symbols.push_back(best_concat);
            symbol_id.emplace(best_concat, merged);
        }
        for (auto& w : words) {
            std::vector<int> next;
            next.reserve(w.symbols.size());
            for (std::size_t i = 0; i < w.symbols.size(); ++i) {
                if (i + 1 < w.symbols.size() && w.symbols[i] == left && w.symbols[i + 1] == right) {
                    next.push_back(merged);
                    ++i;
                } else {
                    next.push_back(w.symbols[i]);
                }
            }
            w.symbols = std::move(next);
        }
    }

    auto v = SubtokenVocabulary::from_parts(Scheme::bpe, std::move(symbols), special_count, base_count, std::move(merges));
    v.warnings = std::move(warnings);
    return v;
}

namespace {

struct Piece {
    std::string text;
    bool final;
};

std::vector<Piece> casing_pieces(std::string_view word, TokenKind kind) {
    std::vector<Piece> pieces;
    if (kind == TokenKind::punct) {
        pieces.push_back({std::string(word), true});
        return pieces;
    }
    const CasingSplit split = split_by_casing(word);
    for (std::size_t i = 0; i < split.parts.size(); ++i) {
        for (char c : split.separators[i]) {
            pieces.push_back({std::string(1, c), false});
        }
        pieces.push_back({split.parts[i], false});
    }
    for (char c : split.separators.back()) {
        pieces.push_back({std::string(1, c), false});
    }
    if (!pieces.empty()) {
        pieces.back().final = true;
    }
    return pieces;
}

std::string piece_image(const Piece& p) {
    return p.final ? p.text + std::string(kEndOfToken) : p.text;
}

}  // namespace

SubtokenVocabulary train_casing(std::span<const lexnorm::TokenStream> streams, const TrainOptions& options) {
    std::vector<std::string> symbols = collect_specials(streams, options);
    const std::size_t special_count = symbols.size();
    for (auto& b : base_symbols()) {
        symbols.push_back(std::move(b));
    }
    const std::size_t base_count = symbols.size() - special_count;
    if (options.target_size < symbols.size()) {
        throw VocabError("target size below base characters + specials");
    }
    std::set<std::string> present(symbols.begin(), symbols.end());

    std::map<std::string, std::uint64_t> piece_counts;
    for (const auto& s : streams) {
        for (const auto& t : s.tokens) {
            require_normalized(t);
            if (!splits_into_subtokens(t.kind)) {
                continue;
            }
            check_chars(t.text);
            for (const auto& p : casing_pieces(t.text, t.kind)) {
                const std::string image = piece_image(p);
                if (present.count(image) == 0) {
                    ++piece_counts[image];
                }
            }
        }
    }
    std::vector<std::pair<std::string, std::uint64_t>> ranked(piece_counts.begin(), piece_counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    std::vector<std::string> warnings;
    for (const auto& [image, count] : ranked) {
        if (symbols.size() >= options.target_size) {
            break;
        }
        symbols.push_back(image);
    }
    if (symbols.size() < options.target_size) {
        warnings.push_back("corpus too small: stopped at |V|=" + std::to_string(symbols.size()) + " of target " +
                           std::to_string(options.target_size));
    }
    auto v = SubtokenVocabulary::from_parts(Scheme::casing, std::move(symbols), special_count, base_count, {});
    v.warnings = std::move(warnings);
    return v;
}

// ---------------------------------------------------------------------------
// Encoding

std::vector<TokenId> encode_word(std::string_view word, const SubtokenVocabulary& vocab) {
    check_chars(word);
    std::vector<std::string> parts;
    for (std::size_t i = 0; i < word.size(); ++i) {
        parts.push_back(i + 1 == word.size() ? final_image(word[i]) : std::string(1, word[i]));
    }
    while (parts.size() > 1) {
        std::size_t best_rank = SIZE_MAX;
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            auto it = vocab.merge_rank_.find(merge_key(parts[i], parts[i + 1]));
            if (it != vocab.merge_rank_.end() && it->second < best_rank) {
                best_rank = it->second;
            }
        }
        if (best_rank == SIZE_MAX) {
            break;
        }
        const auto& [left, right] = vocab.merges_[best_rank];
        std::vector<std::string> next;
        next.reserve(parts.size());
        for (std::size_t i = 0; i < parts.size(); ++i) {
            if (i + 1 < parts.size() && parts[i] == left && parts[i + 1] == right) {
                next.push_back(left + right);
                ++i;
            } else {
                next.push_back(std::move(parts[i]));
            }
        }
        parts = std::move(next);
    }
    std::vector<TokenId> ids;
    ids.reserve(parts.size());
    for (const auto& p : parts) {
        ids.push_back(vocab.id_of(p));
    }
    return ids;
}

namespace {

std::vector<TokenId> encode_casing(const lexnorm::Token& tok, const SubtokenVocabulary& vocab) {
    check_chars(tok.text);
    std::vector<TokenId> ids;
    for (const auto& p : casing_pieces(tok.text, tok.kind)) {
        if (auto id = vocab.find(piece_image(p))) {
            ids.push_back(*id);
            continue;
        }
        for (std::size_t i = 0; i < p.text.size(); ++i) {
            const bool last = p.final && i + 1 == p.text.size();
            ids.push_back(vocab.id_of(last ? final_image(p.text[i]) : std::string(1, p.text[i])));
        }
    }
    return ids;
}

}  // namespace

std::optional<TokenId> special_id(const lexnorm::Token& token, const SubtokenVocabulary& vocab) {
    switch (token.kind) {
    case TokenKind::bof:
    case TokenKind::eof:
    case TokenKind::eol:
    case TokenKind::indent:
    case TokenKind::dedent:
    case TokenKind::str_lit_sentinel:
    case TokenKind::num_lit_sentinel:
    case TokenKind::comment_sentinel:
    case TokenKind::lang_prefix:
        return vocab.id_of(token.text);
    case TokenKind::kept_literal:
        if (auto id = vocab.find(token.text)) {
            return *id;
        }
        return vocab.id_of(lexnorm::is_kept_string_image(token.text) ? lexnorm::kStrLit : lexnorm::kNumLit);
    default:
        return std::nullopt;
    }
}

std::vector<TokenId> encode(std::span<const lexnorm::Token> tokens, const SubtokenVocabulary& vocab) {
    std::vector<TokenId> ids;
    ids.reserve(tokens.size() * 2);
    for (const auto& tok : tokens) {
        require_normalized(tok);
        if (auto id = special_id(tok, vocab)) {
            ids.push_back(*id);
            continue;
        }
        const auto pieces = vocab.scheme() == Scheme::bpe ? encode_word(tok.text, vocab) : encode_casing(tok, vocab);
        ids.insert(ids.end(), pieces.begin(), pieces.end());
    }
    return ids;
}

std::vector<TokenId> encode(const lexnorm::TokenStream& stream, const SubtokenVocabulary& vocab) {
    return encode(std::span<const lexnorm::Token>(stream.tokens), vocab);
}

std::string decode(std::span<const TokenId> ids, const SubtokenVocabulary& vocab) {
    std::string out;
    for (TokenId id : ids) {
        const auto& image = vocab.subtoken(id);
        if (vocab.is_special(id)) {
            out += image;
        } else {
            out += strip_end_marker(image).first;
        }
    }
    return out;
}

std::vector<std::string> decode_tokens(std::span<const TokenId> ids, const SubtokenVocabulary& vocab) {
    std::vector<std::string> tokens;
    std::string current;
    for (TokenId id : ids) {
        const auto& image = vocab.subtoken(id);
        if (vocab.is_special(id)) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
            tokens.push_back(image);
            continue;
        }
        const auto [text, final] = strip_end_marker(image);
        current += text;
        if (final) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    return tokens;
}

// ---------------------------------------------------------------------------
// Casing split

std::string CasingSplit::reconstruct() const {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        out += separators[i];
        out += parts[i];
    }
    out += separators.back();
    return out;
}

CasingSplit split_by_casing(std::string_view identifier) {
    CasingSplit result;
    std::string sep;
    std::string part;
    auto flush = [&] {
        if (!part.empty()) {
            result.separators.push_back(std::move(sep));
            result.parts.push_back(std::move(part));
            sep.clear();
            part.clear();
        }
    };
    auto is_upper = [](char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; };
    auto is_lower = [](char c) { return std::islower(static_cast<unsigned char>(c)) != 0; };
    auto is_digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
    for (std::size_t i = 0; i < identifier.size(); ++i) {
        const char c = identifier[i];
        if (c == '_') {
            flush();
            sep += c;
            continue;
        }
        if (!part.empty() && is_upper(c)) {
            const char prev = part.back();
            const bool lower_to_upper = is_lower(prev) || is_digit(prev);
            const bool acronym_end = is_upper(prev) && i + 1 < identifier.size() && is_lower(identifier[i + 1]);
            if (lower_to_upper || acronym_end) {
                flush();
            }
        }
        part += c;
    }
    flush();
    result.separators.push_back(std::move(sep));
    return result;
}

// ---------------------------------------------------------------------------
// Persistence

void write_vocabulary(std::ostream& out, const SubtokenVocabulary& vocab) {
    out << (vocab.scheme() == Scheme::bpe ? "bpe-vocab" : "casing-vocab") << " v1 size=" << vocab.size()
        << " specials=" << vocab.special_count() << " base=" << vocab.base_count() << '\n';
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        out << i << '\t' << escape_field(vocab.subtoken(static_cast<TokenId>(i))) << '\n';
    }
    out << "#merges\n";
    for (const auto& [l, r] : vocab.merges()) {
        out << escape_field(l) << '\t' << escape_field(r) << '\n';
    }
}

SubtokenVocabulary read_vocabulary(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) {
        throw VocabError("empty vocabulary file");
    }
    const auto fields = split(header, ' ');
    if (fields.size() < 3 || fields[1] != "v1" || (fields[0] != "bpe-vocab" && fields[0] != "casing-vocab")) {
        throw VocabError("bad vocabulary header '" + header + "'");
    }
    const Scheme scheme = fields[0] == "bpe-vocab" ? Scheme::bpe : Scheme::casing;
    std::size_t size = 0;
    std::size_t specials = 0;
    std::size_t base = 0;
    for (std::size_t i = 2; i < fields.size(); ++i) {
        const auto kv = split(fields[i], '=');
        if (kv.size() != 2) {
            throw VocabError("bad vocabulary header field '" + fields[i] + "'");
        }
        const std::size_t value = std::stoul(kv[1]);
        if (kv[0] == "size") {
            size = value;
        } else if (kv[0] == "specials") {
            specials = value;
        } else if (kv[0] == "base") {
            base = value;
        }
    }
    std::vector<std::string> subtokens;
    std::string line;
    while (subtokens.size() < size && std::getline(in, line)) {
        const auto tab = line.find('\t');
        if (tab == std::string::npos || std::stoul(line.substr(0, tab)) != subtokens.size()) {
            throw VocabError("vocabulary ids must be dense and ordered");
        }
        subtokens.push_back(unescape_field(std::string_view(line).substr(tab + 1)));
    }
    if (subtokens.size() != size) {
        throw VocabError("vocabulary file truncated");
    }
    std::vector<std::pair<std::string, std::string>> merges;
    if (std::getline(in, line) && line == "#merges") {
        while (std::getline(in, line)) {
            if (line.empty()) {
                continue;
            }
            const auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw VocabError("bad merge line '" + line + "'");
            }
            merges.emplace_back(unescape_field(std::string_view(line).substr(0, tab)),
                                unescape_field(std::string_view(line).substr(tab + 1)));
        }
    }
    return SubtokenVocabulary::from_parts(scheme, std::move(subtokens), specials, base, std::move(merges));
}

}  // namespace gptc::vocab
