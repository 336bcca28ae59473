#include "gptc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <tuple>
#include <unordered_set>

namespace gptc::corpus {

namespace fs = std::filesystem;

LanguageConfig default_language_config() {
    return {{".tpy", Language::toy_py}, {".py", Language::toy_py}, {".tc", Language::toy_c}};
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IngestError("cannot read file '" + path.string() + "'");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

CorpusIndex ingest(std::span<const fs::path> roots, const LanguageConfig& config) {
    if (config.empty()) {
        throw IngestError("no registered file extensions");
    }
    std::vector<CorpusEntry> found;
    for (const auto& root : roots) {
        std::error_code ec;
        if (!fs::is_directory(root, ec)) {
            throw IngestError("unreadable directory '" + root.string() + "'");
        }
        fs::recursive_directory_iterator it(root, ec);
        if (ec) {
            throw IngestError("unreadable directory '" + root.string() + "': " + ec.message());
        }
        for (const auto& dirent : it) {
            if (!dirent.is_regular_file()) {
                continue;
            }
            const auto lang = config.find(dirent.path().extension().string());
            if (lang == config.end()) {
                continue;
            }
            const fs::path relative = fs::relative(dirent.path(), root);
            CorpusEntry entry;
            entry.repo_id = relative.begin()->string();
            entry.file_path = dirent.path();
            entry.language = lang->second;
            entry.content_hash = fnv1a(read_file(dirent.path()));
            found.push_back(std::move(entry));
        }
    }
    if (found.empty()) {
        throw EmptyCorpusError("no files with a registered extension under the ingest roots");
    }

    std::sort(found.begin(), found.end(), [](const CorpusEntry& a, const CorpusEntry& b) {
        return std::tie(a.repo_id, a.file_path) < std::tie(b.repo_id, b.file_path);
    });

    CorpusIndex index;
    std::unordered_set<std::uint64_t> seen;
    for (auto& entry : found) {
        if (!seen.insert(entry.content_hash).second) {
            continue;
        }
        index.languages.insert(entry.language);
        index.entries.push_back(std::move(entry));
    }
    return index;
}

std::size_t dev_repo_count(std::size_t repo_count) noexcept {
    if (repo_count < 2) {
        return repo_count;
    }
    const auto dev = static_cast<std::size_t>(std::floor(0.7 * static_cast<double>(repo_count)));
    return std::max<std::size_t>(dev, 1);
}

namespace {

void sort_by_path(std::vector<CorpusEntry>& entries) {
    std::sort(entries.begin(), entries.end(), [](const CorpusEntry& a, const CorpusEntry& b) {
        return std::tie(a.file_path, a.repo_id) < std::tie(b.file_path, b.repo_id);
    });
}

}  // namespace

SplitManifest split(const CorpusIndex& index, std::uint64_t seed) {
    if (index.entries.empty()) {
        throw Error("cannot split an empty corpus index");
    }
    SplitManifest manifest;
    manifest.seed = seed;

    std::vector<std::string> repos;
    for (const auto& entry : index.entries) {
        repos.push_back(entry.repo_id);
    }
    std::sort(repos.begin(), repos.end());
    repos.erase(std::unique(repos.begin(), repos.end()), repos.end());

    if (repos.size() == 1) {
        manifest.train = index.entries;
        sort_by_path(manifest.train);
        manifest.warnings.push_back("degenerate split: single repository '" + repos.front() +
                                    "', all files assigned to train");
        return manifest;
    }

    std::mt19937_64 rng(seed);
    deterministic_shuffle(repos, rng);
    const std::size_t dev_count = dev_repo_count(repos.size());
    const std::set<std::string> dev_repos(repos.begin(), repos.begin() + static_cast<std::ptrdiff_t>(dev_count));

    std::vector<CorpusEntry> dev_files;
    for (const auto& entry : index.entries) {
        if (dev_repos.count(entry.repo_id) != 0) {
            dev_files.push_back(entry);
        } else {
            manifest.test.push_back(entry);
        }
    }

    sort_by_path(dev_files);
    deterministic_shuffle(dev_files, rng);
    const auto validation_count =
        static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(dev_files.size())));
    const std::size_t train_count = dev_files.size() - validation_count;
    manifest.train.assign(dev_files.begin(), dev_files.begin() + static_cast<std::ptrdiff_t>(train_count));
    manifest.validation.assign(dev_files.begin() + static_cast<std::ptrdiff_t>(train_count), dev_files.end());

    sort_by_path(manifest.train);
    sort_by_path(manifest.validation);
    sort_by_path(manifest.test);
    return manifest;
}

namespace {

void write_entries(std::ostream& out, std::string_view split_name, const std::vector<CorpusEntry>& entries) {
    for (const auto& e : entries) {
        out << split_name << '\t' << e.repo_id << '\t' << e.file_path.generic_string() << '\t'
            << to_string(e.language) << '\t' << to_hex(e.content_hash) << '\n';
    }
}

CorpusEntry parse_entry(const std::vector<std::string>& fields, std::size_t offset) {
    CorpusEntry entry;
    entry.repo_id = fields[offset];
    entry.file_path = fields[offset + 1];
    entry.language = parse_language(fields[offset + 2]);
    entry.content_hash = parse_hex(fields[offset + 3]);
    return entry;
}

}  // namespace

void write_manifest(std::ostream& out, const SplitManifest& manifest) {
    write_entries(out, "train", manifest.train);
    write_entries(out, "validation", manifest.validation);
    write_entries(out, "test", manifest.test);
}

SplitManifest read_manifest(std::istream& in) {
    SplitManifest manifest;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto fields = gptc::split(line, '\t');
        if (fields.size() != 5) {
            throw Error("manifest line " + std::to_string(line_no) + ": expected 5 fields");
        }
        auto entry = parse_entry(fields, 1);
        if (fields[0] == "train") {
            manifest.train.push_back(std::move(entry));
        } else if (fields[0] == "validation") {
            manifest.validation.push_back(std::move(entry));
        } else if (fields[0] == "test") {
            manifest.test.push_back(std::move(entry));
        } else {
            throw Error("manifest line " + std::to_string(line_no) + ": unknown split '" + fields[0] + "'");
        }
    }
    return manifest;
}

void write_index(std::ostream& out, const CorpusIndex& index) {
    for (const auto& e : index.entries) {
        out << e.repo_id << '\t' << e.file_path.generic_string() << '\t' << to_string(e.language) << '\t'
            << to_hex(e.content_hash) << '\n';
    }
}

CorpusIndex read_index(std::istream& in) {
    CorpusIndex index;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto fields = gptc::split(line, '\t');
        if (fields.size() != 4) {
            throw Error("index line " + std::to_string(line_no) + ": expected 4 fields");
        }
        auto entry = parse_entry(fields, 0);
        index.languages.insert(entry.language);
        index.entries.push_back(std::move(entry));
    }
    return index;
}

}  // namespace gptc::corpus
