#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mdfm/metrics/metrics.hpp"
#include "mdfm/model/checkpoint.hpp"
#include "mdfm/seqdata/dataset.hpp"

namespace mdfm::perturb {

enum class Scope { positives_only, all };
enum class MatchMode { all_occurrences, first_only };

struct MutationRule {
    std::string pattern;
    std::string replacement;
    Scope scope = Scope::positives_only;
    MatchMode mode = MatchMode::all_occurrences;

    // Throws std::invalid_argument unless both strings are non-empty ACGT of
    // equal length.
    void validate() const;
    nlohmann::json to_json() const;
    static MutationRule from_json(const nlohmann::json& j);
};

struct Rewrite {
    std::string sequence;
    std::size_t edits = 0;
};

// Rules in list order; each scans left to right replacing non-overlapping
// matches (only the leftmost with first_only).
Rewrite apply_rules(std::string_view sequence, const std::vector<MutationRule>& rules);

struct RuleSet {
    std::string name;
    std::vector<MutationRule> rules;
};

// Accepts either a JSON array of rules (each rule becomes its own set named
// "Mut-<pattern>") or an object mapping set names to rule arrays.
std::vector<RuleSet> rule_sets_from_json(const nlohmann::json& j);
// The two rewrites of the reference protocol: GAGG->CTCC and AAAA->TATA.
std::vector<RuleSet> default_rule_sets();

struct ConditionReport {
    std::string name;
    metrics::MetricReport metrics;
    std::size_t mutated_sequences = 0;
    std::size_t total_edits = 0;
    std::vector<std::size_t> edits_per_sequence;
};

struct MutagenesisReport {
    std::vector<ConditionReport> conditions;  // WT first
    bool negatives_untouched = true;

    nlohmann::json to_json(bool with_per_sequence = false) const;
    void write_tsv(const std::filesystem::path& path) const;
};

// Conditions: WT, each rule set, and (with more than one set) all sets
// combined, named Mut-Both for two sets and Mut-All otherwise. When every
// rule is positives_only the specificity must be bit-identical across
// conditions; drift throws std::runtime_error.
MutagenesisReport mutagenesis_eval(const model::Checkpoint& ckpt, const std::vector<seqdata::DnaSample>& samples,
                                   const std::vector<RuleSet>& rule_sets, std::size_t jobs = 1);

enum class TransferMetric { acc, auc };
TransferMetric transfer_metric_from_string(const std::string& s);

struct TransferMatrix {
    std::string metric;
    std::vector<std::string> sources, targets;
    std::vector<std::vector<double>> raw, normalized;
    // Rows whose diagonal value was 0 and were left unnormalized.
    std::vector<bool> unnormalized;

    void write_tsv(const std::filesystem::path& raw_path, const std::filesystem::path& normalized_path) const;
};

// raw[i][j] = metric of checkpoint i on dataset j with i's tokenizers;
// normalized[i][j] = raw[i][j] / raw[i][i]. Checkpoint i is paired with
// dataset i, so both lists must have the same length.
TransferMatrix transfer_matrix(const std::vector<model::Checkpoint>& checkpoints,
                               const std::vector<std::string>& source_names,
                               const std::vector<std::vector<seqdata::DnaSample>>& datasets,
                               const std::vector<std::string>& target_names, TransferMetric metric,
                               std::size_t jobs = 1);

// Divides every row by its diagonal entry; rows with a zero diagonal are
// copied and flagged.
std::vector<std::vector<double>> normalize_rows(const std::vector<std::vector<double>>& raw,
                                                std::vector<bool>* unnormalized = nullptr);

}  // namespace mdfm::perturb
