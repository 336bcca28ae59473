#include "gptc/common.hpp"

#include <cctype>
#include <charconv>

namespace gptc {

std::string_view to_string(Language lang) noexcept {
    switch (lang) {
    case Language::toy_py:
        return "toy-py";
    case Language::toy_c:
        return "toy-c";
    }
    return "unknown";
}

bool is_registered_language(std::string_view name) noexcept {
    return name == "toy-py" || name == "toy-c";
}

Language parse_language(std::string_view name) {
    if (name == "toy-py") {
        return Language::toy_py;
    }
    if (name == "toy-c") {
        return Language::toy_c;
    }
    throw Error("unregistered language-id '" + std::string(name) + "'");
}

std::string to_hex(std::uint64_t value) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = kDigits[value & 0xf];
        value >>= 4;
    }
    return out;
}

std::uint64_t parse_hex(std::string_view text) {
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value, 16);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw Error("malformed hex value '" + std::string(text) + "'");
    }
    return value;
}

std::vector<std::string> split(std::string_view text, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = text.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(text.substr(start));
            return out;
        }
        out.emplace_back(text.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string_view trim(std::string_view text) noexcept {
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) {
        text.remove_prefix(1);
    }
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) {
        text.remove_suffix(1);
    }
    return text;
}

std::string escape_field(std::string_view raw) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(raw.size());
    for (unsigned char c : raw) {
        switch (c) {
        case '\t':
            out += "\\t";
            break;
        case '\n':
            out += "\\n";
            break;
        case '\\':
            out += "\\\\";
            break;
        default:
            if (c < 0x20 || c >= 0x7f) {
                out += "\\x";
                out += kDigits[c >> 4];
                out += kDigits[c & 0xf];
            } else {
                out += static_cast<char>(c);
            }
        }
    }
    return out;
}

std::string unescape_field(std::string_view escaped) {
    std::string out;
    out.reserve(escaped.size());
    for (std::size_t i = 0; i < escaped.size(); ++i) {
        const char c = escaped[i];
        if (c != '\\' || i + 1 >= escaped.size()) {
            out += c;
            continue;
        }
        const char next = escaped[++i];
        if (next == 't') {
            out += '\t';
        } else if (next == 'n') {
            out += '\n';
        } else if (next == '\\') {
            out += '\\';
        } else if (next == 'x' && i + 2 < escaped.size()) {
            const auto hex = escaped.substr(i + 1, 2);
            unsigned value = 0;
            auto [ptr, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), value, 16);
            if (ec != std::errc() || ptr != hex.data() + hex.size()) {
                throw Error("malformed escape in '" + std::string(escaped) + "'");
            }
            out += static_cast<char>(value);
            i += 2;
        } else {
            throw Error("malformed escape in '" + std::string(escaped) + "'");
        }
    }
    return out;
}

}  // namespace gptc
