#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gptc {

using TokenId = std::uint32_t;

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Languages understood by the lexer. `toy-py` is indentation scoped,
/// `toy-c` is brace scoped.
enum class Language : std::uint8_t {
    toy_py,
    toy_c,
};

inline constexpr Language kAllLanguages[] = {Language::toy_py, Language::toy_c};

std::string_view to_string(Language lang) noexcept;

/// Parses a registered language-id ("toy-py", "toy-c"); throws gptc::Error otherwise.
Language parse_language(std::string_view name);

bool is_registered_language(std::string_view name) noexcept;

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view bytes,
                              std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string to_hex(std::uint64_t value);
std::uint64_t parse_hex(std::string_view text);

/// Fisher-Yates driven directly by mt19937_64 output so results do not depend
/// on the standard library's distribution implementation.
template <typename T>
void deterministic_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(items[i - 1], items[j]);
    }
}

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

std::vector<std::string> split(std::string_view text, char sep);
std::string_view trim(std::string_view text) noexcept;

/// Escapes tabs, newlines, backslashes and non-printable bytes as \t \n \\ \xHH.
std::string escape_field(std::string_view raw);
std::string unescape_field(std::string_view escaped);

}  // namespace gptc
