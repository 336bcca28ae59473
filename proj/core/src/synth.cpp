#include "gptc/synth.hpp"

#include "gptc/lexnorm.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>

namespace gptc::synth {

namespace {

constexpr std::array<std::string_view, 8> kPyConsonants = {"b", "d", "f", "g", "h", "k", "l", "m"};
constexpr std::array<std::string_view, 3> kPyVowels = {"a", "e", "i"};
constexpr std::array<std::string_view, 8> kCConsonants = {"p", "r", "s", "t", "v", "w", "x", "z"};
constexpr std::array<std::string_view, 3> kCVowels = {"o", "u", "y"};

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>(rng() % n);
}

std::string syllable(Language lang, std::mt19937_64& rng) {
    if (lang == Language::toy_py) {
        return std::string(kPyConsonants[pick(rng, kPyConsonants.size())]) +
               std::string(kPyVowels[pick(rng, kPyVowels.size())]);
    }
    return std::string(kCConsonants[pick(rng, kCConsonants.size())]) +
           std::string(kCVowels[pick(rng, kCVowels.size())]);
}

std::string fresh_identifier(Language lang, std::mt19937_64& rng, std::size_t syllables) {
    while (true) {
        auto id = identifier(lang, rng, syllables);
        if (!lexnorm::is_keyword(id, Language::toy_py) && !lexnorm::is_keyword(id, Language::toy_c)) {
            return id;
        }
    }
}

std::string hash_string(std::mt19937_64& rng) {
    static constexpr std::string_view kHex = "0123456789abcdef";
    std::string out = "sha";
    for (int i = 0; i < 24; ++i) {
        out += kHex[pick(rng, 16)];
    }
    return out;
}

std::string long_number(std::mt19937_64& rng) {
    std::string out(1, static_cast<char>('1' + pick(rng, 9)));
    for (int i = 0; i < 7; ++i) {
        out += static_cast<char>('0' + pick(rng, 10));
    }
    return out;
}

struct Writer {
    Language lang;
    std::string out;
    int depth = 0;

    void line(const std::string& text) {
        out += std::string(static_cast<std::size_t>(depth) * 4, ' ') + text + "\n";
    }
    std::string end() const { return lang == Language::toy_c ? ";" : ""; }
    std::string decl() const { return lang == Language::toy_c ? "var " : ""; }
    void open(const std::string& head) {
        line(lang == Language::toy_c ? head + " {" : head + ":");
        ++depth;
    }
    void close() {
        --depth;
        if (lang == Language::toy_c) {
            line("}");
        }
    }
    void comment(const std::string& text) { line((lang == Language::toy_c ? "// " : "# ") + text); }
    std::string cond(const std::string& c) const { return lang == Language::toy_c ? "(" + c + ")" : c; }
};

struct Vocab {
    std::vector<std::string> vars;
    std::vector<std::string> funcs;
    std::vector<std::string> strings;
    std::vector<std::string> numbers;
};

std::string pick_of(const std::vector<std::string>& v, std::mt19937_64& rng) {
    return v[pick(rng, v.size())];
}

std::string operand(const Vocab& v, std::mt19937_64& rng, bool literals) {
    if (literals && pick(rng, 4) == 0) {
        return pick_of(v.numbers, rng);
    }
    return pick_of(v.vars, rng);
}

void statement(Writer& w, const Vocab& v, std::mt19937_64& rng, bool literals, int budget) {
    static constexpr std::array<std::string_view, 4> kOps = {"+", "-", "*", "%"};
    static constexpr std::array<std::string_view, 4> kCmp = {"<", ">", "==", "!="};
    const std::size_t kind = pick(rng, budget > 0 ? 7 : 4);
    switch (kind) {
    case 0:
        w.line(w.decl() + pick_of(v.vars, rng) + " = " + operand(v, rng, literals) + " " +
               std::string(kOps[pick(rng, kOps.size())]) + " " + operand(v, rng, literals) + w.end());
        break;
    case 1:
        w.line(w.decl() + pick_of(v.vars, rng) + " = " + pick_of(v.funcs, rng) + "(" + operand(v, rng, literals) +
               ", " + operand(v, rng, literals) + ")" + w.end());
        break;
    case 2:
        if (literals) {
            w.line(pick_of(v.funcs, rng) + "(\"" + pick_of(v.strings, rng) + "\", " + pick_of(v.vars, rng) + ")" +
                   w.end());
        } else {
            w.line(pick_of(v.funcs, rng) + "(" + pick_of(v.vars, rng) + ")" + w.end());
        }
        break;
    case 3:
        if (literals) {
            w.comment(pick_of(v.strings, rng));
        }
        w.line(pick_of(v.vars, rng) + " += " + pick_of(v.vars, rng) + w.end());
        break;
    case 4:
    case 5: {
        const std::string c = pick_of(v.vars, rng) + " " + std::string(kCmp[pick(rng, kCmp.size())]) + " " +
                              operand(v, rng, literals);
        w.open("if " + w.cond(c));
        const std::size_t n = 1 + pick(rng, 2);
        for (std::size_t i = 0; i < n; ++i) {
            statement(w, v, rng, literals, budget - 1);
        }
        w.close();
        break;
    }
    default: {
        if (w.lang == Language::toy_py) {
            w.open("for " + pick_of(v.vars, rng) + " in " + pick_of(v.vars, rng));
        } else {
            w.open("while " + w.cond(pick_of(v.vars, rng) + " < " + operand(v, rng, literals)));
        }
        statement(w, v, rng, literals, budget - 1);
        w.close();
        break;
    }
    }
}

Vocab make_vocab(Language lang, std::mt19937_64& rng, std::size_t vars, std::size_t funcs) {
    Vocab v;
    std::set<std::string> seen;
    auto unique = [&](std::size_t syllables) {
        while (true) {
            auto id = fresh_identifier(lang, rng, syllables);
            if (seen.insert(id).second) {
                return id;
            }
        }
    };
    for (std::size_t i = 0; i < vars; ++i) {
        v.vars.push_back(unique(1 + pick(rng, 3)));
    }
    for (std::size_t i = 0; i < funcs; ++i) {
        v.funcs.push_back(unique(2) + "_" + unique(2));
    }
    for (std::size_t i = 0; i < 4; ++i) {
        v.strings.push_back(identifier(lang, rng, 2) + " " + identifier(lang, rng, 1));
    }
    for (std::size_t i = 0; i < 4; ++i) {
        v.numbers.push_back(std::to_string(pick(rng, 100)));
    }
    return v;
}

}  // namespace

std::string identifier(Language lang, std::mt19937_64& rng, std::size_t syllables) {
    std::string out;
    for (std::size_t i = 0; i < std::max<std::size_t>(syllables, 1); ++i) {
        out += syllable(lang, rng);
    }
    return out;
}

bool in_lexicon(std::string_view word, Language lang) noexcept {
    const std::string_view letters = lang == Language::toy_py ? "bdfghklmaei" : "prstvwxzouy";
    bool any = false;
    for (char c : word) {
        if (c == '_') {
            continue;
        }
        if (letters.find(c) == std::string_view::npos) {
            return false;
        }
        any = true;
    }
    return any;
}

std::string extension(Language lang) {
    return lang == Language::toy_py ? ".tpy" : ".tc";
}

std::vector<SynthFile> generate(const SynthOptions& options) {
    std::mt19937_64 rng(options.seed);
    std::vector<SynthFile> files;
    for (std::size_t r = 0; r < options.repos; ++r) {
        const std::string repo = std::string(options.language == Language::toy_py ? "py" : "c") + "repo" +
                                 std::to_string(r);
        const Vocab v = make_vocab(options.language, rng, 10, 6);
        for (std::size_t f = 0; f < options.files_per_repo; ++f) {
            Writer w{options.language, {}, 0};
            for (std::size_t fn = 0; fn < options.functions_per_file; ++fn) {
                const std::string params = pick_of(v.vars, rng) + ", " + pick_of(v.vars, rng);
                w.open("def " + pick_of(v.funcs, rng) + "(" + params + ")");
                if (options.literals && options.language == Language::toy_py && pick(rng, 3) == 0) {
                    w.line("\"" + pick_of(v.strings, rng) + "\"");
                }
                const std::size_t n = 1 + pick(rng, std::max<std::size_t>(options.max_body_lines, 1));
                for (std::size_t i = 0; i < n; ++i) {
                    statement(w, v, rng, options.literals, 1);
                }
                w.line("return " + pick_of(v.vars, rng) + w.end());
                w.close();
                if (options.language == Language::toy_py) {
                    w.out += "\n";
                }
            }
            files.push_back({repo, "src/m" + std::to_string(f) + extension(options.language), options.language,
                             std::move(w.out)});
        }
    }
    return files;
}

std::vector<SynthFile> vocabulary_corpus(std::uint64_t seed) {
    std::vector<SynthFile> out;
    for (Language lang : kAllLanguages) {
        SynthOptions o;
        o.language = lang;
        o.repos = 60;
        o.files_per_repo = 4;
        o.functions_per_file = 3;
        o.seed = seed * 31 + static_cast<std::uint64_t>(lang);
        auto files = generate(o);
        out.insert(out.end(), files.begin(), files.end());
    }
    return out;
}

std::vector<SynthFile> overfit_corpus(std::uint64_t seed, std::size_t files, std::size_t lines) {
    std::mt19937_64 rng(seed);
    static constexpr std::array<std::string_view, 4> kOps = {"+", "-", "*", "%"};
    const std::vector<std::string> vars = {"total", "count", "item", "value", "left", "right", "size", "step"};
    const std::vector<std::string> funcs = {"add", "scale", "merge", "clamp", "shift"};
    std::set<std::string> names;
    std::vector<SynthFile> out;
    for (std::size_t f = 0; f < files; ++f) {
        std::string name;
        do {
            name = std::string(funcs[pick(rng, funcs.size())]) + "_" + vars[pick(rng, vars.size())] + "_" +
                   identifier(Language::toy_py, rng, 1);
        } while (!names.insert(name).second);
        Writer w{Language::toy_py, {}, 0};
        w.open("def " + name + "(" + vars[pick(rng, vars.size())] + ", " + vars[pick(rng, vars.size())] + ")");
        std::string last = vars[0];
        for (std::size_t i = 0; i + 2 < lines; ++i) {
            last = vars[pick(rng, vars.size())];
            if (pick(rng, 2) == 0) {
                w.line(last + " = " + vars[pick(rng, vars.size())] + " " + std::string(kOps[pick(rng, kOps.size())]) +
                       " " + vars[pick(rng, vars.size())]);
            } else {
                w.line(last + " = " + funcs[pick(rng, funcs.size())] + "(" + vars[pick(rng, vars.size())] + ", " +
                       vars[pick(rng, vars.size())] + ")");
            }
        }
        w.line("return " + last);
        w.close();
        out.push_back({"overfit", "f" + std::to_string(f) + ".tpy", Language::toy_py, std::move(w.out)});
    }
    return out;
}

std::vector<SynthFile> privacy_corpus(std::uint64_t seed, std::size_t files) {
    std::mt19937_64 rng(seed);
    const Vocab v = make_vocab(Language::toy_py, rng, 8, 4);
    std::vector<SynthFile> out;
    for (std::size_t f = 0; f < files; ++f) {
        Writer w{Language::toy_py, {}, 0};
        w.open("def " + pick_of(v.funcs, rng) + "(" + pick_of(v.vars, rng) + ")");
        for (int i = 0; i < 3; ++i) {
            w.line(pick_of(v.vars, rng) + " = \"" + hash_string(rng) + "\"");
            w.line(pick_of(v.vars, rng) + " = " + long_number(rng));
            w.line(pick_of(v.funcs, rng) + "(" + pick_of(v.vars, rng) + ", \"" + hash_string(rng) + "\")");
        }
        w.line("return " + pick_of(v.vars, rng));
        w.close();
        out.push_back({"secrets" + std::to_string(f % 3), "s" + std::to_string(f) + ".tpy", Language::toy_py,
                       std::move(w.out)});
    }
    return out;
}

std::vector<std::string> literal_contents(const std::vector<SynthFile>& files) {
    std::set<std::string> out;
    for (const auto& f : files) {
        const auto stream = lexnorm::lex(f.source, f.language);
        for (const auto& t : stream.tokens) {
            if (t.kind == lexnorm::TokenKind::string_literal || t.kind == lexnorm::TokenKind::number_literal) {
                out.insert(t.text);
            }
        }
    }
    return {out.begin(), out.end()};
}

void write_tree(const std::filesystem::path& root, const std::vector<SynthFile>& files) {
    for (const auto& f : files) {
        const auto path = root / f.repo_id / f.path;
        std::filesystem::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            throw Error("cannot write '" + path.string() + "'");
        }
        out << f.source;
    }
}

}  // namespace gptc::synth
