#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "mdfm/interpret/interpret.hpp"
#include "mdfm/interpret/stats.hpp"
#include "mdfm/model/params.hpp"

using namespace mdfm;
using namespace mdfm::interpret;
namespace fs = std::filesystem;

namespace {

// A sample whose k-mer view holds `tokens` with the given CLS attention to
// each (index 0 of the row is the CLS itself).
ScoredSample hand_sample(const std::vector<std::string>& tokens, const std::vector<double>& att) {
    ScoredSample s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        s.enc.kmer.strings.push_back(tokens[i]);
        s.enc.kmer.offsets.push_back(i);
        s.enc.kmer.ids.push_back(seqdata::kmer_id(tokens[i]));
    }
    s.trace.kmer_attention.push_back(0.0);
    s.trace.kmer_attention.insert(s.trace.kmer_attention.end(), att.begin(), att.end());
    return s;
}

model::ModelConfig tiny_config() {
    model::ModelConfig c;
    c.seq_len = 14;
    c.d = 8;
    c.k = 3;
    c.encoder_layers = 1;
    c.encoder_heads = 2;
    c.encoder_ff = 16;
    c.bpe_vocab = 24;
    c.n_experts = 2;
    c.segments = 2;
    c.expert_heads = 2;
    c.classifier_hidden = 4;
    return c;
}

model::Checkpoint tiny_checkpoint() {
    const model::ModelConfig c = tiny_config();
    std::mt19937_64 rng(3);
    std::vector<std::string> corpus;
    for (int i = 0; i < 30; ++i) corpus.push_back(testutil::random_dna(c.seq_len, rng));
    return {c, {c.k, seqdata::train_bpe(corpus, c.bpe_vocab)}, model::init_params(c, 5), 5, nlohmann::json::object()};
}

// Sets built directly from forward passes, bypassing the confidence filter.
ConfidenceSets scored_sets(const model::Checkpoint& ck, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ConfidenceSets sets;
    for (std::size_t i = 0; i < 2 * n; ++i) {
        ScoredSample s;
        s.sample = {"s" + std::to_string(i), testutil::random_dna(ck.config.seq_len, rng), i < n ? 1 : 0};
        s.enc = model::encode_sequence(s.sample.sequence, ck.tokenizers, ck.config);
        s.trace = model::model_forward(s.enc, ck.params, ck.config);
        (i < n ? sets.pos : sets.neg).push_back(std::move(s));
    }
    return sets;
}

}  // namespace

TEST_CASE("CAD on hand-built attention rows") {
    ConfidenceSets sets;
    const std::vector<double> pos_aaa{0.30, 0.35, 0.40, 0.32};
    const std::vector<double> neg_aaa{0.10, 0.12, 0.08, 0.11};
    for (double a : pos_aaa) sets.pos.push_back(hand_sample({"AAA", "CCC"}, {a, 0.2}));
    for (double a : neg_aaa) sets.neg.push_back(hand_sample({"AAA", "CCC"}, {a, 0.2 + a}));
    // GGG and CCC each appear in only two positives: below min_samples.
    sets.pos[0] = hand_sample({"AAA", "GGG"}, {0.30, 0.1});
    sets.pos[1] = hand_sample({"AAA", "GGG"}, {0.35, 0.2});

    const CadReport r = cad_analysis(sets);
    CHECK(r.motifs_seen == 3);
    CHECK(r.skipped_min_samples == 2);
    const auto find = [&](const CadReport& rep, const std::string& m) {
        for (const auto& x : rep.records)
            if (x.motif == m) return x;
        FAIL("missing motif " << m);
        return CadRecord{};
    };
    const CadRecord aaa = find(r, "AAA");
    CHECK(aaa.cad == doctest::Approx(cohens_d(pos_aaa, neg_aaa).d).epsilon(1e-14));
    CHECK(aaa.p == doctest::Approx(welch_t(pos_aaa, neg_aaa).p).epsilon(1e-14));
    CHECK(aaa.n_pos == 4);
    CHECK(r.records.front().motif == "AAA");

    // Swapping the classes negates every effect size.
    ConfidenceSets swapped{sets.neg, sets.pos, sets.threshold, sets.cap};
    const CadReport rs = cad_analysis(swapped);
    for (const auto& x : r.records) CHECK(find(rs, x.motif).cad == doctest::Approx(-x.cad).epsilon(1e-14));

    CadOptions strict;
    strict.min_samples = 5;
    CHECK(cad_analysis(sets, strict).records.empty());
}

TEST_CASE("CAD sequence unit averages repeated occurrences") {
    ConfidenceSets sets;
    sets.pos.push_back(hand_sample({"AAA", "AAA"}, {0.2, 0.4}));
    sets.pos.push_back(hand_sample({"AAA", "CCC"}, {0.5, 0.1}));
    sets.pos.push_back(hand_sample({"AAA", "CCC"}, {0.6, 0.1}));
    for (double a : {0.1, 0.15, 0.05}) sets.neg.push_back(hand_sample({"AAA", "CCC"}, {a, 0.3}));
    CadOptions o;
    o.unit = CadUnit::sequence;
    const CadReport per_seq = cad_analysis(sets, o);
    const CadReport per_occ = cad_analysis(sets);
    for (const auto& rec : per_seq.records) {
        if (rec.motif != "AAA") continue;
        CHECK(rec.n_pos == 3);
        CHECK(rec.mean_pos == doctest::Approx((0.3 + 0.5 + 0.6) / 3.0).epsilon(1e-14));
    }
    for (const auto& rec : per_occ.records)
        if (rec.motif == "AAA") CHECK(rec.n_pos == 4);

    o.positional = true;
    const CadReport pos = cad_analysis(sets, o);
    for (const auto& rec : pos.records) CHECK(rec.position >= 0);
}

TEST_CASE("dimension selection ranks by absolute effect size") {
    ConfidenceSets sets;
    std::mt19937_64 rng(1);
    for (int i = 0; i < 10; ++i) {
        ScoredSample p, n;
        p.trace.h_mod = {testutil::uniform(rng, 0, 1), 5.0 + testutil::uniform(rng, 0, 1), 0.0,
                         -3.0 + testutil::uniform(rng, 0, 1)};
        n.trace.h_mod = {testutil::uniform(rng, 0, 1), testutil::uniform(rng, 0, 1), 0.0, testutil::uniform(rng, 0, 1)};
        sets.pos.push_back(p);
        sets.neg.push_back(n);
    }
    bool truncated = true;
    const auto top2 = cwga_dim_select(sets, 2, &truncated);
    CHECK_FALSE(truncated);
    REQUIRE(top2.size() == 2);
    CHECK(top2[0].rank == 1);
    CHECK(((top2[0].dim == 1 && top2[1].dim == 3) || (top2[0].dim == 3 && top2[1].dim == 1)));
    CHECK(std::abs(top2[0].d) >= std::abs(top2[1].d));
    const auto all = cwga_dim_select(sets, 10, &truncated);
    CHECK(truncated);
    CHECK(all.size() == 4);
    // The constant dimension has no spread and gets weight 0.
    CHECK(all.back().dim == 2);
    CHECK(all.back().d == 0.0);
    ConfidenceSets small;
    small.pos.push_back(sets.pos[0]);
    small.neg = sets.neg;
    CHECK_THROWS_AS(cwga_dim_select(small, 2), std::invalid_argument);
}

TEST_CASE("fused and per-dimension CWGA agree") {
    const model::Checkpoint ck = tiny_checkpoint();
    const ConfidenceSets sets = scored_sets(ck, 4, 9);
    const auto dims = cwga_dim_select(sets, 3);
    CwgaOptions o;
    o.ig_steps = 16;
    for (model::View v : {model::View::kmer, model::View::bpe}) {
        const CwgaReport a = cwga_aggregate(cwga_attribute(ck, sets, dims, v, o));
        const CwgaReport b = cwga_aggregate(cwga_attribute_fused(ck, sets, dims, v, o));
        REQUIRE(a.records.size() == b.records.size());
        std::map<std::string, double> ca;
        double scale = 0.0;
        for (const auto& r : a.records) {
            ca[r.token] = r.c;
            scale = std::max(scale, std::abs(r.c));
        }
        for (const auto& r : b.records) CHECK(std::abs(ca.at(r.token) - r.c) <= 1e-9 * scale);
    }
}

TEST_CASE("IG completeness on the model and per-sample contrast shape") {
    const model::Checkpoint ck = tiny_checkpoint();
    const ConfidenceSets sets = scored_sets(ck, 3, 2);
    const auto dims = cwga_dim_select(sets, 4);
    std::vector<std::size_t> idx;
    std::vector<double> w;
    for (const auto& d : dims) {
        idx.push_back(d.dim);
        w.push_back(d.d);
    }
    CwgaOptions o;
    o.ig_steps = 256;
    const SampleAttribution at = attribute_sample(ck, sets.pos[0].enc, model::View::kmer, idx, w, o);
    CHECK(at.per_token.size() == sets.pos[0].enc.kmer.size());
    CHECK(std::abs(at.completeness_gap) <= 1e-2 * std::max(1e-6, std::abs(at.f_delta)));

    // The k-mer path is smooth, so the midpoint gap shrinks with every refinement.
    double prev = std::numeric_limits<double>::infinity();
    for (int steps : {8, 64, 512}) {
        o.ig_steps = steps;
        const double gap = std::abs(attribute_sample(ck, sets.pos[1].enc, model::View::kmer, idx, w, o).completeness_gap);
        CHECK(gap < prev);
        prev = gap;
    }

    o.ig_steps = 8;
    const auto contrast = cwga_sample_contrast(ck, sets, dims, model::View::kmer, o);
    REQUIRE(contrast.size() == sets.pos.size());
    for (const auto& row : contrast) CHECK(row.size() == sets.pos[0].enc.kmer.size());
}

TEST_CASE("CWGA aggregation normalises and respects sign and scale") {
    TokenAttributions t;
    t.tokens = {"AAA", "CCC", "GGG"};
    t.positions = {-1, -1, -1};
    t.delta = {{1.0, -2.0, 0.5}, {0.5, 1.0, 0.0}};
    t.weights = {2.0, -1.0};
    const CwgaReport r = cwga_aggregate(t);
    // C = [1.5, -5, 1]; normalised by 5.
    REQUIRE(r.records.size() == 3);
    CHECK(r.records[0].token == "AAA");
    CHECK(r.records[0].c_hat == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(r.records[2].token == "CCC");
    CHECK(r.records[2].c_hat == -1.0);
    CHECK(r.records[1].rank == 2);

    TokenAttributions neg = t;
    for (auto& row : neg.delta)
        for (auto& v : row) v = -v;
    TokenAttributions scaled = t;
    for (auto& x : scaled.weights) x *= 7.5;
    const CwgaReport rn = cwga_aggregate(neg), rs = cwga_aggregate(scaled);
    std::map<std::string, double> base, nmap, smap;
    for (const auto& x : r.records) base[x.token] = x.c_hat;
    for (const auto& x : rn.records) nmap[x.token] = x.c_hat;
    for (const auto& x : rs.records) smap[x.token] = x.c_hat;
    for (const auto& [tok, v] : base) {
        CHECK(nmap[tok] == -v);
        CHECK(smap[tok] == doctest::Approx(v).epsilon(1e-15));
    }

    TokenAttributions zero = t;
    for (auto& row : zero.delta) std::fill(row.begin(), row.end(), 0.0);
    const CwgaReport rz = cwga_aggregate(zero);
    CHECK(rz.all_zero);
    for (const auto& x : rz.records) CHECK(x.c_hat == 0.0);
    t.weights.pop_back();
    CHECK_THROWS_AS(cwga_aggregate(t), std::invalid_argument);
}

TEST_CASE("motif FASTA windows are clipped to the sequence") {
    const fs::path dir = fs::temp_directory_path() / "mdfm_unit";
    fs::create_directories(dir);
    const std::vector<seqdata::DnaSample> pos{{"p1", "GAGGTTTTTT", 1}, {"p2", "TTTTTTGAGG", 1}, {"p3", "CCCCCCCCCC", 1}};
    const std::vector<CwgaRecord> recs{{"GAGG", model::View::kmer, -1, 1.0, 1.0, 1},
                                       {"TTTT", model::View::kmer, 99, 0.5, 0.5, 2}};
    const fs::path path = dir / "motifs.fasta";
    CHECK(export_motif_fasta(recs, pos, 5, 3, path) == 2);
    std::ifstream in(path);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    REQUIRE(lines.size() == 5);
    CHECK(lines[1] == ">p1|token=GAGG|start=0|end=7");
    CHECK(lines[2] == "GAGGTTT");
    CHECK(lines[4] == "TTTGAGG");
    CHECK(export_motif_fasta(recs, pos, 0, 3, path) == 0);
}

TEST_CASE("permuted sets keep sizes and the pooled samples") {
    const model::Checkpoint ck = tiny_checkpoint();
    const ConfidenceSets sets = scored_sets(ck, 5, 4);
    const ConfidenceSets p = permute_sets(sets, 11);
    CHECK(p.pos.size() == sets.pos.size());
    CHECK(p.neg.size() == sets.neg.size());
    std::multiset<std::string> a, b;
    for (const auto* v : {&sets.pos, &sets.neg})
        for (const auto& s : *v) a.insert(s.sample.id);
    for (const auto* v : {&p.pos, &p.neg})
        for (const auto& s : *v) b.insert(s.sample.id);
    CHECK(a == b);
    CHECK(permute_sets(sets, 11).pos[0].sample.id == p.pos[0].sample.id);
}
