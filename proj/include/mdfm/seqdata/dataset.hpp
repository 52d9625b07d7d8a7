#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mdfm::seqdata {

struct DnaSample {
    std::string id;
    std::string sequence;  // over {A,C,G,T}
    int label = 0;         // 1 = methylated
};

struct Dataset {
    std::string name;
    std::size_t length = 0;
    std::vector<DnaSample> train;
    std::vector<DnaSample> test;
};

enum class FileFormat { tsv, fasta };

// Thrown for unrecoverable input problems; `line` is 1-based, 0 if unknown.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

struct RejectedSample {
    std::size_t line = 0;
    std::string id;
    std::string reason;
};

struct LoadReport {
    std::size_t accepted = 0;
    std::vector<RejectedSample> rejected;
};

struct LoadedSamples {
    std::vector<DnaSample> samples;
    std::size_t length = 0;
    LoadReport report;
};

bool is_acgt(std::string_view seq) noexcept;

// Reads one split. Samples with non-ACGT characters are rejected and listed
// in the report; malformed rows, inconsistent lengths, duplicate ids and an
// empty result throw ParseError.
LoadedSamples parse_samples(const std::filesystem::path& path, FileFormat format);

// Single-file dataset: every sample goes to `train`.
Dataset parse_dataset(const std::filesystem::path& path, FileFormat format);

// Train and test files; both splits must share the sequence length.
Dataset load_dataset(const std::filesystem::path& train, const std::filesystem::path& test, FileFormat format,
                     LoadReport* train_report = nullptr, LoadReport* test_report = nullptr);

FileFormat format_from_path(const std::filesystem::path& path);

void write_samples_tsv(const std::filesystem::path& path, const std::vector<DnaSample>& samples);
void write_samples_fasta(const std::filesystem::path& path, const std::vector<DnaSample>& samples);

}  // namespace mdfm::seqdata
