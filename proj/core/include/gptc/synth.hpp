#pragma once

#include "gptc/common.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gptc::synth {

/// One generated source file.
struct SynthFile {
    std::string repo_id;
    std::string path;
    Language language = Language::toy_py;
    std::string source;
};

struct SynthOptions {
    Language language = Language::toy_py;
    std::size_t repos = 4;
    std::size_t files_per_repo = 5;
    std::size_t functions_per_file = 3;
    std::size_t max_body_lines = 6;
    /// Emit string/number literals and comments.
    bool literals = true;
    std::uint64_t seed = 1;
};

/// Identifiers of the two languages are drawn from disjoint letter sets so
/// every identifier subtoken belongs to exactly one language.
std::string identifier(Language lang, std::mt19937_64& rng, std::size_t syllables);
bool in_lexicon(std::string_view word, Language lang) noexcept;

std::vector<SynthFile> generate(const SynthOptions& options);

/// Both languages, sized for training a vocabulary of a few thousand entries.
std::vector<SynthFile> vocabulary_corpus(std::uint64_t seed);

/// Small toy-py corpus for memorization runs: `files` functions of `lines`
/// lines each, whose bodies are fully determined by the function header.
std::vector<SynthFile> overfit_corpus(std::uint64_t seed, std::size_t files = 20, std::size_t lines = 10);

/// Files seeded with distinctive hash strings and long numbers.
std::vector<SynthFile> privacy_corpus(std::uint64_t seed, std::size_t files = 12);

/// Raw contents of every string and number literal of `files`.
std::vector<std::string> literal_contents(const std::vector<SynthFile>& files);

/// Writes `root/repo_id/path` for every file.
void write_tree(const std::filesystem::path& root, const std::vector<SynthFile>& files);

std::string extension(Language lang);

}  // namespace gptc::synth
