#include "mdfm/seqdata/synth.hpp"

#include <cstdio>
#include <random>
#include <stdexcept>

namespace mdfm::seqdata {
namespace {

constexpr char kBases[4] = {'A', 'C', 'G', 'T'};

std::string random_sequence(std::mt19937_64& rng, std::size_t n) {
    std::string s(n, 'A');
    for (auto& c : s) c = kBases[rng() & 3u];
    return s;
}

void scrub(std::mt19937_64& rng, std::string& seq, std::size_t pos, const std::string& motif) {
    while (seq.compare(pos, motif.size(), motif) == 0) {
        for (std::size_t i = 0; i < motif.size(); ++i) seq[pos + i] = kBases[rng() & 3u];
    }
}

std::string sample_id(const char* split, const char* cls, std::size_t i) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s_%s_%05zu", split, cls, i);
    return buf;
}

std::vector<DnaSample> make_split(std::mt19937_64& rng, const PlantedSpec& spec, const char* split,
                                  std::size_t n_pos, std::size_t n_neg) {
    std::vector<DnaSample> out;
    out.reserve(n_pos + n_neg);
    for (std::size_t i = 0; i < n_pos; ++i) {
        std::string s = random_sequence(rng, spec.length);
        s.replace(spec.core_pos, spec.core_motif.size(), spec.core_motif);
        s.replace(spec.tract_pos, spec.tract.size(), spec.tract);
        out.push_back({sample_id(split, "pos", i), std::move(s), 1});
    }
    for (std::size_t i = 0; i < n_neg; ++i) {
        std::string s = random_sequence(rng, spec.length);
        scrub(rng, s, spec.core_pos, spec.core_motif);
        scrub(rng, s, spec.tract_pos, spec.tract);
        out.push_back({sample_id(split, "neg", i), std::move(s), 0});
    }
    return out;
}

}  // namespace

nlohmann::json PlantedSpec::to_json() const {
    return {{"name", name},           {"n_pos", n_pos},         {"n_neg", n_neg},
            {"test_n_pos", test_n_pos}, {"test_n_neg", test_n_neg}, {"length", length},
            {"core_motif", core_motif}, {"core_pos", core_pos},   {"tract", tract},
            {"tract_pos", tract_pos}, {"seed", seed}};
}

PlantedSpec PlantedSpec::from_json(const nlohmann::json& j) {
    PlantedSpec s;
    s.name = j.value("name", s.name);
    s.n_pos = j.value("n_pos", s.n_pos);
    s.n_neg = j.value("n_neg", s.n_neg);
    s.test_n_pos = j.value("test_n_pos", s.test_n_pos);
    s.test_n_neg = j.value("test_n_neg", s.test_n_neg);
    s.length = j.value("length", s.length);
    s.core_motif = j.value("core_motif", s.core_motif);
    s.core_pos = j.value("core_pos", s.core_pos);
    s.tract = j.value("tract", s.tract);
    s.tract_pos = j.value("tract_pos", s.tract_pos);
    s.seed = j.value("seed", s.seed);
    return s;
}

Dataset synth_planted_dataset(const PlantedSpec& spec) {
    if (spec.core_motif.empty() || spec.tract.empty() || !is_acgt(spec.core_motif) || !is_acgt(spec.tract)) {
        throw std::invalid_argument("synth: motifs must be non-empty ACGT strings");
    }
    if (spec.core_pos + spec.core_motif.size() > spec.length || spec.tract_pos + spec.tract.size() > spec.length) {
        throw std::invalid_argument("synth: motif window does not fit in length " + std::to_string(spec.length));
    }
    const bool disjoint = spec.core_pos + spec.core_motif.size() <= spec.tract_pos ||
                          spec.tract_pos + spec.tract.size() <= spec.core_pos;
    if (!disjoint) throw std::invalid_argument("synth: planted windows overlap");

    std::mt19937_64 rng(spec.seed);
    Dataset ds;
    ds.name = spec.name;
    ds.length = spec.length;
    ds.train = make_split(rng, spec, "train", spec.n_pos, spec.n_neg);
    ds.test = make_split(rng, spec, "test", spec.test_n_pos ? spec.test_n_pos : spec.n_pos,
                         spec.test_n_neg ? spec.test_n_neg : spec.n_neg);
    return ds;
}

}  // namespace mdfm::seqdata
