#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "mdfm/seqdata/dataset.hpp"
#include "mdfm/seqdata/synth.hpp"
#include "mdfm/seqdata/tokenize.hpp"

using namespace mdfm::seqdata;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& content) {
    const fs::path dir = fs::temp_directory_path() / "mdfm_unit";
    fs::create_directories(dir);
    const fs::path p = dir / name;
    std::ofstream(p) << content;
    return p;
}

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += x;
    return s;
}

}  // namespace

TEST_CASE("TSV parsing yields samples with ids and labels") {
    const std::string seq(41, 'A');
    const auto p = temp_file("ok.tsv", "s1\t" + seq + "\t1\ns2\t" + std::string(41, 'C') + "\t0\n");
    const LoadedSamples s = parse_samples(p, FileFormat::tsv);
    REQUIRE(s.samples.size() == 2);
    CHECK(s.samples[0].id == "s1");
    CHECK(s.samples[0].label == 1);
    CHECK(s.samples[0].sequence == seq);
    CHECK(s.samples[1].label == 0);
    CHECK(s.length == 41);
}

TEST_CASE("empty file is an error mentioning no samples") {
    const auto p = temp_file("empty.tsv", "");
    try {
        parse_samples(p, FileFormat::tsv);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("no samples") != std::string::npos);
    }
}

TEST_CASE("ambiguous bases reject the sample, not the file") {
    const auto p = temp_file("n.tsv", "a\tACGTN\t1\nb\tACGTA\t0\nc\tACGTT\t1\n");
    const LoadedSamples s = parse_samples(p, FileFormat::tsv);
    CHECK(s.samples.size() == 2);
    REQUIRE(s.report.rejected.size() == 1);
    CHECK(s.report.rejected[0].id == "a");
    CHECK(s.report.accepted == 2);
}

TEST_CASE("malformed rows, bad labels and duplicate ids throw with a line number") {
    CHECK_THROWS_AS(parse_samples(temp_file("cols.tsv", "a\tACGT\n"), FileFormat::tsv), ParseError);
    CHECK_THROWS_AS(parse_samples(temp_file("lab.tsv", "a\tACGT\t2\n"), FileFormat::tsv), ParseError);
    CHECK_THROWS_AS(parse_samples(temp_file("dup.tsv", "a\tACGT\t1\na\tACGA\t0\n"), FileFormat::tsv), ParseError);
    CHECK_THROWS_AS(parse_samples(temp_file("len.tsv", "a\tACGT\t1\nb\tACG\t0\n"), FileFormat::tsv), ParseError);
    try {
        parse_samples(temp_file("lab2.tsv", "a\tACGT\t1\nb\tACGT\tx\n"), FileFormat::tsv);
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
}

TEST_CASE("FASTA round trip through the writer") {
    std::mt19937_64 rng(3);
    std::vector<DnaSample> samples;
    for (int i = 0; i < 5; ++i) samples.push_back({"id" + std::to_string(i), testutil::random_dna(20, rng), i % 2});
    const fs::path p = fs::temp_directory_path() / "mdfm_unit" / "rt.fasta";
    fs::create_directories(p.parent_path());
    write_samples_fasta(p, samples);
    const LoadedSamples s = parse_samples(p, format_from_path(p));
    REQUIRE(s.samples.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(s.samples[i].id == samples[i].id);
        CHECK(s.samples[i].sequence == samples[i].sequence);
        CHECK(s.samples[i].label == samples[i].label);
    }
}

TEST_CASE("k-mer tokenization") {
    const TokenSeq t = tokenize_kmer("ACGTA", 3);
    CHECK(t.strings == std::vector<std::string>{"ACG", "CGT", "GTA"});
    CHECK(t.offsets == std::vector<std::size_t>{0, 1, 2});
    CHECK(tokenize_kmer("AAAA", 4).strings == std::vector<std::string>{"AAAA"});
    CHECK_THROWS_AS(tokenize_kmer("ACG", 4), std::invalid_argument);
    CHECK_THROWS_AS(tokenize_kmer("ACG", 0), std::invalid_argument);

    std::mt19937_64 rng(11);
    const std::string s = testutil::random_dna(41, rng);
    CHECK(tokenize_kmer(s, 6).size() == 36);
    for (std::size_t k = 1; k <= 8; ++k) {
        const TokenSeq tk = tokenize_kmer(s, k);
        CHECK(tk.size() == s.size() - k + 1);
        for (std::size_t i = 0; i < tk.size(); ++i) {
            CHECK(tk.strings[i] == s.substr(i, k));
            CHECK(tk.ids[i] == kmer_id(tk.strings[i]));
            CHECK(tk.ids[i] >= kNumSpecials);
            CHECK(static_cast<std::size_t>(tk.ids[i]) < kmer_vocab_size(k));
        }
    }
}

TEST_CASE("BPE first merge matches a brute-force pair count") {
    const BpeVocab v = train_bpe({"AAAA", "AAAA"}, 8);
    REQUIRE(!v.merges().empty());
    CHECK(v.merges()[0] == std::pair<std::string, std::string>{"A", "A"});

    // Oracle: most frequent adjacent pair, ties to the smallest pair.
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::string> corpus;
        for (int i = 0; i < 6; ++i) corpus.push_back(testutil::random_dna(15, rng));
        std::map<std::pair<std::string, std::string>, int> counts;
        for (const auto& s : corpus)
            for (std::size_t i = 0; i + 1 < s.size(); ++i) ++counts[{s.substr(i, 1), s.substr(i + 1, 1)}];
        std::pair<std::string, std::string> best;
        int best_c = 0;
        for (const auto& [k, c] : counts) {
            if (c > best_c) {
                best_c = c;
                best = k;
            }
        }
        const BpeVocab bv = train_bpe(corpus, 8);
        REQUIRE(bv.merges().size() == 1);
        CHECK(bv.merges()[0] == best);
    }
}

TEST_CASE("BPE budget and threshold rules") {
    CHECK(train_bpe({"ACGTACGT", "ACGTACGT"}, 7).merges().empty());
    CHECK(train_bpe({"ACGT"}, 64).merges().empty());
    CHECK_THROWS_AS(train_bpe({}, 64), std::invalid_argument);
    CHECK_THROWS_AS(train_bpe({"ACGT"}, 6), std::invalid_argument);
}

TEST_CASE("BPE tokenization applies merges and round-trips") {
    BpeVocab v;
    v.push_merge("A", "A");
    CHECK(tokenize_bpe("AAAA", v).strings == std::vector<std::string>{"AA", "AA"});
    CHECK(tokenize_bpe("ACGT", BpeVocab{}).strings == std::vector<std::string>{"A", "C", "G", "T"});

    std::mt19937_64 rng(8);
    std::vector<std::string> corpus;
    for (int i = 0; i < 200; ++i) corpus.push_back(testutil::random_dna(41, rng));
    const BpeVocab trained = train_bpe(corpus, 128);
    CHECK(trained.size() <= 128);
    CHECK(trained == train_bpe(corpus, 128));
    CHECK(BpeVocab::from_json(trained.to_json()) == trained);
    for (int i = 0; i < 50; ++i) {
        const std::string s = testutil::random_dna(41, rng);
        const TokenSeq t = tokenize_bpe(s, trained);
        CHECK(join(t.strings) == s);
        for (std::size_t j = 0; j < t.size(); ++j) {
            CHECK(s.compare(t.offsets[j], t.strings[j].size(), t.strings[j]) == 0);
            CHECK(t.ids[j] != kUnkId);
        }
    }
}

TEST_CASE("planted dataset construction") {
    PlantedSpec spec;
    spec.n_pos = spec.n_neg = 100;
    const Dataset a = synth_planted_dataset(spec);
    const Dataset b = synth_planted_dataset(spec);
    REQUIRE(a.train.size() == 200);
    REQUIRE(a.test.size() == 200);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].id == b.train[i].id);
        CHECK(a.train[i].sequence == b.train[i].sequence);
        CHECK(a.train[i].label == b.train[i].label);
    }
    // A substring test at the planted offsets separates the classes.
    for (const auto* split : {&a.train, &a.test}) {
        for (const auto& s : *split) {
            CHECK(s.sequence.size() == 41);
            const bool core = s.sequence.compare(18, 4, "GAGG") == 0;
            const bool tract = s.sequence.compare(8, 4, "AAAA") == 0;
            if (s.label == 1) {
                CHECK(core);
                CHECK(tract);
            } else {
                CHECK_FALSE(core);
                CHECK_FALSE(tract);
            }
        }
    }
    spec.seed = 8;
    CHECK(synth_planted_dataset(spec).train[0].sequence != a.train[0].sequence);

    PlantedSpec bad;
    bad.tract_pos = 17;
    CHECK_THROWS_AS(synth_planted_dataset(bad), std::invalid_argument);
    bad = PlantedSpec{};
    bad.core_pos = 39;
    CHECK_THROWS_AS(synth_planted_dataset(bad), std::invalid_argument);
    CHECK(PlantedSpec::from_json(spec.to_json()).to_json() == spec.to_json());
}
