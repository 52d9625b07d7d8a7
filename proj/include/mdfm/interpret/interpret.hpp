#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mdfm/model/checkpoint.hpp"
#include "mdfm/model/network.hpp"
#include "mdfm/seqdata/dataset.hpp"

namespace mdfm::interpret {

struct ScoredSample {
    seqdata::DnaSample sample;
    model::EncodedSample enc;
    model::ModelTrace trace;
};

struct ConfidenceSets {
    std::vector<ScoredSample> pos, neg;
    double threshold = 0.9;
    std::optional<std::size_t> cap;
};

// Keeps correctly classified samples whose max softmax probability is
// strictly above `threshold`. With a cap, each class is sorted by confidence
// (descending, ties by input order) and truncated. Throws
// std::runtime_error with the counts when a class keeps fewer than
// `min_per_class` samples.
ConfidenceSets select_high_confidence(const model::Checkpoint& ckpt, const std::vector<seqdata::DnaSample>& samples,
                                      double threshold = 0.9, std::optional<std::size_t> cap = std::nullopt,
                                      std::size_t min_per_class = 2, std::size_t jobs = 1);

// Same sizes, class membership shuffled across the pooled samples.
ConfidenceSets permute_sets(const ConfidenceSets& sets, std::uint64_t seed);

// ---------------------------------------------------------------------------
// CAD

enum class CadUnit { occurrence, sequence };

struct CadOptions {
    model::View view = model::View::kmer;
    // Group by (token, position) instead of token alone.
    bool positional = false;
    // occurrence: every occurrence is one observation; sequence: the mean
    // over a sequence's occurrences is one observation.
    CadUnit unit = CadUnit::occurrence;
    std::size_t min_samples = 3;
};

struct CadRecord {
    std::string motif;
    long position = -1;  // character offset in positional mode
    std::size_t n_pos = 0, n_neg = 0;
    double mean_pos = 0, mean_neg = 0;
    double cad = 0;  // Cohen's d, positives minus negatives
    double t = 0, df = 0, p = 1, p_bh = 1;
};

struct CadReport {
    std::vector<CadRecord> records;  // sorted by cad descending
    std::size_t motifs_seen = 0;
    std::size_t skipped_min_samples = 0;
    std::size_t skipped_degenerate = 0;  // zero pooled SD or zero variances

    static std::string tsv_header();
    void write_tsv(const std::filesystem::path& path) const;
};

// Attention paid by the CLS query to each token (final layer, head mean)
// grouped by motif across both sets.
CadReport cad_analysis(const ConfidenceSets& sets, const CadOptions& opts = {});

// ---------------------------------------------------------------------------
// CWGA

struct DimSelection {
    std::size_t dim = 0;
    double delta = 0;  // mean_pos - mean_neg of the FiLM output
    double d = 0;      // Cohen's d, the aggregation weight
    double p = 1;
    std::size_t rank = 0;
};

// Top-K FiLM-output dimensions by |Cohen's d|, ties by dimension index.
// Dimensions with zero pooled SD get d = 0. K above d selects every
// dimension and sets `*truncated`.
std::vector<DimSelection> cwga_dim_select(const ConfidenceSets& sets, std::size_t k = 40, bool* truncated = nullptr);

enum class Baseline { zero, pad };

struct CwgaOptions {
    int ig_steps = 64;
    Baseline baseline = Baseline::zero;
    bool positional = false;
    std::size_t jobs = 1;
};

// Per-token attribution of one sample: entry i belongs to token i of the view.
struct SampleAttribution {
    std::vector<double> per_token;
    double completeness_gap = 0;
    double f_delta = 0;  // f(x) - f(baseline)
};

// IG of the weighted target sum_j weights[j] * h_mod[dims[j]] with respect
// to the token-embedding output of `view`; the CLS row is not interpolated.
SampleAttribution attribute_sample(const model::Checkpoint& ckpt, const model::EncodedSample& enc, model::View view,
                                   const std::vector<std::size_t>& dims, const std::vector<double>& weights,
                                   const CwgaOptions& opts);

// One IG run per selected dimension sharing each forward pass; result
// [dim][token].
std::vector<SampleAttribution> attribute_sample_per_dim(const model::Checkpoint& ckpt,
                                                        const model::EncodedSample& enc, model::View view,
                                                        const std::vector<std::size_t>& dims, const CwgaOptions& opts);

// Class-contrasted attributions keyed by token (and position in positional
// mode). `delta[j][t]` = mean over S_pos minus mean over S_neg, where a
// sample contributes the sum over its occurrences of t and 0 if absent.
struct TokenAttributions {
    model::View view = model::View::kmer;
    bool positional = false;
    std::vector<std::string> tokens;
    std::vector<long> positions;  // -1 unless positional
    std::vector<std::vector<double>> delta;  // [dim][token key]
    std::vector<double> weights;  // one per row of delta
};

// One IG run per selected dimension, each weighted by its Cohen's d.
TokenAttributions cwga_attribute(const model::Checkpoint& ckpt, const ConfidenceSets& sets,
                                 const std::vector<DimSelection>& dims, model::View view, const CwgaOptions& opts);

// Single IG run per sample on the Cohen's-d weighted target. By linearity
// of IG in the target, aggregating its one row with weight 1 equals
// aggregating the per-dimension rows with their Cohen's d weights.
TokenAttributions cwga_attribute_fused(const model::Checkpoint& ckpt, const ConfidenceSets& sets,
                                       const std::vector<DimSelection>& dims, model::View view,
                                       const CwgaOptions& opts);

struct CwgaRecord {
    std::string token;
    model::View view = model::View::kmer;
    long position = -1;
    double c = 0;
    double c_hat = 0;
    std::size_t rank = 0;
};

struct CwgaReport {
    std::vector<CwgaRecord> records;  // sorted by c_hat descending
    bool all_zero = false;
    bool positional = false;

    static std::string tsv_header();
    void write_tsv(const std::filesystem::path& path, bool append = false) const;
};

// C(t) = sum_j weights[j] * delta[j][t], normalized by max |C|.
CwgaReport cwga_aggregate(const TokenAttributions& attr);

// Per positive sample in `sets`, attribution of the weighted target per
// token position minus the mean negative attribution at that position.
std::vector<std::vector<double>> cwga_sample_contrast(const model::Checkpoint& ckpt, const ConfidenceSets& sets,
                                                      const std::vector<DimSelection>& dims, model::View view,
                                                      const CwgaOptions& opts);

// For each positive sequence and each of the first `top_n` records, the
// first occurrence of the record's token (at its position when positional)
// widened by `flank` bases on each side and clipped to the sequence.
std::size_t export_motif_fasta(const std::vector<CwgaRecord>& records, const std::vector<seqdata::DnaSample>& positives,
                               std::size_t top_n, std::size_t flank, const std::filesystem::path& path);

}  // namespace mdfm::interpret
