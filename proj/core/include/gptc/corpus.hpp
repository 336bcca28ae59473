#pragma once

#include "gptc/common.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace gptc::corpus {

struct CorpusEntry {
    std::string repo_id;
    std::filesystem::path file_path;
    Language language = Language::toy_py;
    std::uint64_t content_hash = 0;

    friend bool operator==(const CorpusEntry&, const CorpusEntry&) = default;
};

/// Deduplicated list of source files. Entries are sorted by (repo_id, path).
struct CorpusIndex {
    std::vector<CorpusEntry> entries;
    std::set<Language> languages;
};

/// File extension (including the dot) to language.
using LanguageConfig = std::map<std::string, Language>;

LanguageConfig default_language_config();

class IngestError : public Error {
public:
    using Error::Error;
};

class EmptyCorpusError : public IngestError {
public:
    using IngestError::IngestError;
};

/// Walks every root recursively and keeps one entry per unique file content.
/// repo_id is the first path component below the root the file was found in.
CorpusIndex ingest(std::span<const std::filesystem::path> roots, const LanguageConfig& config);

struct SplitManifest {
    std::vector<CorpusEntry> train;
    std::vector<CorpusEntry> validation;
    std::vector<CorpusEntry> test;
    std::uint64_t seed = 0;
    double dev_fraction = 0.7;
    double train_fraction = 0.8;
    std::vector<std::string> warnings;

    bool degenerate() const noexcept { return !warnings.empty(); }
};

/// Repository-level dev/test split followed by a file-level train/validation
/// split of the dev side. Deterministic for a given (index, seed).
SplitManifest split(const CorpusIndex& index, std::uint64_t seed);

/// Number of repositories that go to the dev side for `repo_count` repositories.
std::size_t dev_repo_count(std::size_t repo_count) noexcept;

/// `split \t repo_id \t path \t language \t hash-hex` lines.
void write_manifest(std::ostream& out, const SplitManifest& manifest);
SplitManifest read_manifest(std::istream& in);

/// `repo_id \t path \t language \t hash-hex` lines.
void write_index(std::ostream& out, const CorpusIndex& index);
CorpusIndex read_index(std::istream& in);

std::string read_file(const std::filesystem::path& path);

}  // namespace gptc::corpus
