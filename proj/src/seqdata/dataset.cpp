#include "mdfm/seqdata/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace mdfm::seqdata {
namespace {

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\n')) s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && s[b] == ' ') ++b;
    return s.substr(b);
}

std::string upper(std::string s) {
    for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

int parse_label(const std::string& text, std::size_t line) {
    if (text == "0") return 0;
    if (text == "1") return 1;
    throw ParseError("label must be 0 or 1, got '" + text + "'", line);
}

struct RawRecord {
    std::size_t line;
    std::string id;
    std::string sequence;
    int label;
};

std::vector<RawRecord> read_tsv(std::istream& in) {
    std::vector<RawRecord> out;
    std::string row;
    std::size_t line = 0;
    while (std::getline(in, row)) {
        ++line;
        row = trim(row);
        if (row.empty() || row[0] == '#') continue;
        std::vector<std::string> cols;
        std::stringstream ss(row);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() != 3) {
            throw ParseError("expected 3 tab-separated columns (id, sequence, label), got " +
                                 std::to_string(cols.size()),
                             line);
        }
        if (cols[0].empty()) throw ParseError("empty sample id", line);
        out.push_back({line, cols[0], upper(trim(cols[1])), parse_label(trim(cols[2]), line)});
    }
    return out;
}

std::vector<RawRecord> read_fasta(std::istream& in) {
    std::vector<RawRecord> out;
    std::string row;
    std::size_t line = 0;
    while (std::getline(in, row)) {
        ++line;
        row = trim(row);
        if (row.empty() || row[0] == ';') continue;
        if (row[0] == '>') {
            const std::string header = row.substr(1);
            const auto bar = header.find("|label=");
            if (bar == std::string::npos) throw ParseError("FASTA header lacks '|label=<0|1>'", line);
            const std::string id = header.substr(0, bar);
            if (id.empty()) throw ParseError("empty sample id", line);
            out.push_back({line, id, "", parse_label(header.substr(bar + 7), line)});
            continue;
        }
        if (out.empty()) throw ParseError("sequence data before first FASTA header", line);
        out.back().sequence += upper(row);
    }
    return out;
}

}  // namespace

bool is_acgt(std::string_view seq) noexcept {
    return std::all_of(seq.begin(), seq.end(), [](char c) { return c == 'A' || c == 'C' || c == 'G' || c == 'T'; });
}

FileFormat format_from_path(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".fa" || ext == ".fasta" || ext == ".fna") return FileFormat::fasta;
    return FileFormat::tsv;
}

LoadedSamples parse_samples(const std::filesystem::path& path, FileFormat format) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string(), 0);
    const auto raw = format == FileFormat::tsv ? read_tsv(in) : read_fasta(in);

    LoadedSamples out;
    std::unordered_set<std::string> ids;
    for (const auto& r : raw) {
        if (!ids.insert(r.id).second) throw ParseError("duplicate sample id '" + r.id + "'", r.line);
        if (r.sequence.empty()) throw ParseError("empty sequence for '" + r.id + "'", r.line);
        if (!is_acgt(r.sequence)) {
            out.report.rejected.push_back({r.line, r.id, "non-ACGT character"});
            continue;
        }
        if (out.length == 0) out.length = r.sequence.size();
        if (r.sequence.size() != out.length) {
            throw ParseError("sequence length " + std::to_string(r.sequence.size()) + " differs from " +
                                 std::to_string(out.length),
                             r.line);
        }
        out.samples.push_back({r.id, r.sequence, r.label});
    }
    out.report.accepted = out.samples.size();
    if (out.samples.empty()) throw ParseError("no samples in " + path.string(), 0);
    return out;
}

Dataset parse_dataset(const std::filesystem::path& path, FileFormat format) {
    auto loaded = parse_samples(path, format);
    Dataset ds;
    ds.name = path.stem().string();
    ds.length = loaded.length;
    ds.train = std::move(loaded.samples);
    return ds;
}

Dataset load_dataset(const std::filesystem::path& train, const std::filesystem::path& test, FileFormat format,
                     LoadReport* train_report, LoadReport* test_report) {
    auto tr = parse_samples(train, format);
    auto te = parse_samples(test, format);
    if (tr.length != te.length) {
        throw ParseError("train length " + std::to_string(tr.length) + " differs from test length " +
                             std::to_string(te.length),
                         0);
    }
    if (train_report) *train_report = tr.report;
    if (test_report) *test_report = te.report;
    Dataset ds;
    ds.name = train.parent_path().filename().string();
    ds.length = tr.length;
    ds.train = std::move(tr.samples);
    ds.test = std::move(te.samples);
    return ds;
}

void write_samples_tsv(const std::filesystem::path& path, const std::vector<DnaSample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& s : samples) out << s.id << '\t' << s.sequence << '\t' << s.label << '\n';
}

void write_samples_fasta(const std::filesystem::path& path, const std::vector<DnaSample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& s : samples) out << '>' << s.id << "|label=" << s.label << '\n' << s.sequence << '\n';
}

}  // namespace mdfm::seqdata
