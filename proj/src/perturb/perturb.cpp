#include "mdfm/perturb/perturb.hpp"

#include <bit>
#include <fstream>
#include <stdexcept>

#include "mdfm/trainer/trainer.hpp"

namespace mdfm::perturb {

using metrics::fmt;

void MutationRule::validate() const {
    if (pattern.empty() || !seqdata::is_acgt(pattern) || !seqdata::is_acgt(replacement)) {
        throw std::invalid_argument("mutation rule '" + pattern + "' -> '" + replacement +
                                    "': both sides must be non-empty ACGT strings");
    }
    if (pattern.size() != replacement.size()) {
        throw std::invalid_argument("mutation rule '" + pattern + "' -> '" + replacement +
                                    "': pattern and replacement lengths differ");
    }
}

nlohmann::json MutationRule::to_json() const {
    return {{"pattern", pattern},
            {"replacement", replacement},
            {"scope", scope == Scope::positives_only ? "positives_only" : "all"},
            {"mode", mode == MatchMode::all_occurrences ? "all_occurrences" : "first_only"}};
}

MutationRule MutationRule::from_json(const nlohmann::json& j) {
    MutationRule r;
    r.pattern = j.at("pattern").get<std::string>();
    r.replacement = j.at("replacement").get<std::string>();
    const std::string scope = j.value("scope", std::string("positives_only"));
    if (scope == "positives_only") r.scope = Scope::positives_only;
    else if (scope == "all") r.scope = Scope::all;
    else throw std::invalid_argument("unknown rule scope '" + scope + "'");
    const std::string mode = j.value("mode", std::string("all_occurrences"));
    if (mode == "all_occurrences") r.mode = MatchMode::all_occurrences;
    else if (mode == "first_only") r.mode = MatchMode::first_only;
    else throw std::invalid_argument("unknown rule mode '" + mode + "'");
    r.validate();
    return r;
}

Rewrite apply_rules(std::string_view sequence, const std::vector<MutationRule>& rules) {
    Rewrite out{std::string(sequence), 0};
    for (const auto& rule : rules) {
        rule.validate();
        std::size_t at = 0;
        while ((at = out.sequence.find(rule.pattern, at)) != std::string::npos) {
            out.sequence.replace(at, rule.pattern.size(), rule.replacement);
            ++out.edits;
            if (rule.mode == MatchMode::first_only) break;
            at += rule.pattern.size();
        }
    }
    return out;
}

std::vector<RuleSet> rule_sets_from_json(const nlohmann::json& j) {
    std::vector<RuleSet> out;
    if (j.is_array()) {
        for (const auto& r : j) {
            MutationRule rule = MutationRule::from_json(r);
            out.push_back({"Mut-" + rule.pattern, {rule}});
        }
    } else if (j.is_object()) {
        for (const auto& [name, rules] : j.items()) {
            RuleSet set{name, {}};
            for (const auto& r : rules) set.rules.push_back(MutationRule::from_json(r));
            out.push_back(std::move(set));
        }
    } else {
        throw std::invalid_argument("rules file must hold a JSON array of rules or an object of named rule lists");
    }
    if (out.empty()) throw std::invalid_argument("rules file defines no rules");
    return out;
}

std::vector<RuleSet> default_rule_sets() {
    return {{"Mut-GAGG", {{"GAGG", "CTCC"}}}, {"Mut-A-tract", {{"AAAA", "TATA"}}}};
}

nlohmann::json MutagenesisReport::to_json(bool with_per_sequence) const {
    nlohmann::json conds = nlohmann::json::array();
    for (const auto& c : conditions) {
        nlohmann::json j = {{"condition", c.name},
                            {"metrics", c.metrics.to_json()},
                            {"mutated_sequences", c.mutated_sequences},
                            {"total_edits", c.total_edits}};
        if (with_per_sequence) j["edits_per_sequence"] = c.edits_per_sequence;
        conds.push_back(std::move(j));
    }
    return {{"conditions", conds}, {"negatives_untouched", negatives_untouched}};
}

void MutagenesisReport::write_tsv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "condition\t" << metrics::MetricReport::tsv_header() << "\tmutated_sequences\ttotal_edits\n";
    for (const auto& c : conditions) {
        out << c.name << '\t' << c.metrics.tsv_row() << '\t' << c.mutated_sequences << '\t' << c.total_edits << '\n';
    }
    if (!out) throw std::runtime_error("error writing " + path.string());
}

MutagenesisReport mutagenesis_eval(const model::Checkpoint& ckpt, const std::vector<seqdata::DnaSample>& samples,
                                   const std::vector<RuleSet>& rule_sets, std::size_t jobs) {
    std::vector<RuleSet> conditions{{"WT", {}}};
    for (const auto& s : rule_sets) conditions.push_back(s);
    if (rule_sets.size() > 1) {
        RuleSet all{rule_sets.size() == 2 ? "Mut-Both" : "Mut-All", {}};
        for (const auto& s : rule_sets) all.rules.insert(all.rules.end(), s.rules.begin(), s.rules.end());
        conditions.push_back(std::move(all));
    }

    MutagenesisReport rep;
    for (const auto& set : conditions) {
        for (const auto& r : set.rules) {
            r.validate();
            if (r.scope == Scope::all) rep.negatives_untouched = false;
        }
    }

    std::vector<int> labels;
    for (const auto& s : samples) labels.push_back(s.label);
    for (const auto& cond : conditions) {
        std::vector<MutationRule> pos_rules = cond.rules, neg_rules;
        for (const auto& r : cond.rules) {
            if (r.scope == Scope::all) neg_rules.push_back(r);
        }
        ConditionReport c;
        c.name = cond.name;
        std::vector<seqdata::DnaSample> mutated = samples;
        for (auto& s : mutated) {
            Rewrite rw = apply_rules(s.sequence, s.label == 1 ? pos_rules : neg_rules);
            c.edits_per_sequence.push_back(rw.edits);
            c.total_edits += rw.edits;
            if (rw.edits > 0) ++c.mutated_sequences;
            s.sequence = std::move(rw.sequence);
        }
        c.metrics = metrics::evaluate(
            trainer::predict_scores(mutated, ckpt.tokenizers, ckpt.params, ckpt.config, jobs), labels);
        rep.conditions.push_back(std::move(c));
    }

    if (rep.negatives_untouched) {
        const double sp0 = rep.conditions.front().metrics.sp;
        for (const auto& c : rep.conditions) {
            if (std::bit_cast<std::uint64_t>(c.metrics.sp) != std::bit_cast<std::uint64_t>(sp0) ||
                c.metrics.counts.tn != rep.conditions.front().metrics.counts.tn) {
                throw std::runtime_error("SP drift across mutagenesis conditions: WT " + fmt(sp0) + ", " + c.name +
                                         " " + fmt(c.metrics.sp) + " (inference is not deterministic)");
            }
        }
    }
    return rep;
}

TransferMetric transfer_metric_from_string(const std::string& s) {
    if (s == "acc") return TransferMetric::acc;
    if (s == "auc") return TransferMetric::auc;
    throw std::invalid_argument("unknown transfer metric '" + s + "' (expected acc or auc)");
}

std::vector<std::vector<double>> normalize_rows(const std::vector<std::vector<double>>& raw,
                                                std::vector<bool>* unnormalized) {
    std::vector<std::vector<double>> out = raw;
    if (unnormalized) unnormalized->assign(raw.size(), false);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double diag = raw[i].at(i);
        if (diag == 0.0) {
            if (unnormalized) (*unnormalized)[i] = true;
            continue;
        }
        for (auto& v : out[i]) v /= diag;
    }
    return out;
}

void TransferMatrix::write_tsv(const std::filesystem::path& raw_path,
                               const std::filesystem::path& normalized_path) const {
    auto write = [&](const std::filesystem::path& path, const std::vector<std::vector<double>>& grid, bool flags) {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << "source\\target";
        for (const auto& t : targets) out << '\t' << t;
        if (flags) out << "\tunnormalized";
        out << '\n';
        for (std::size_t i = 0; i < grid.size(); ++i) {
            out << sources[i];
            for (double v : grid[i]) out << '\t' << fmt(v);
            if (flags) out << '\t' << (unnormalized[i] ? 1 : 0);
            out << '\n';
        }
        if (!out) throw std::runtime_error("error writing " + path.string());
    };
    write(raw_path, raw, false);
    write(normalized_path, normalized, true);
}

TransferMatrix transfer_matrix(const std::vector<model::Checkpoint>& checkpoints,
                               const std::vector<std::string>& source_names,
                               const std::vector<std::vector<seqdata::DnaSample>>& datasets,
                               const std::vector<std::string>& target_names, TransferMetric metric,
                               std::size_t jobs) {
    if (checkpoints.empty()) throw std::invalid_argument("transfer_matrix: no checkpoints");
    if (checkpoints.size() != datasets.size()) {
        throw std::invalid_argument("transfer_matrix: " + std::to_string(checkpoints.size()) + " checkpoints but " +
                                    std::to_string(datasets.size()) + " datasets; checkpoint i pairs with dataset i");
    }
    if (source_names.size() != checkpoints.size() || target_names.size() != datasets.size()) {
        throw std::invalid_argument("transfer_matrix: one name per checkpoint and dataset required");
    }
    TransferMatrix m;
    m.metric = metric == TransferMetric::acc ? "acc" : "auc";
    m.sources = source_names;
    m.targets = target_names;
    for (const auto& ck : checkpoints) {
        std::vector<double> row;
        for (const auto& data : datasets) {
            const metrics::MetricReport r = trainer::evaluate_model(data, ck.tokenizers, ck.params, ck.config, jobs);
            row.push_back(metric == TransferMetric::acc ? r.acc : r.auc);
        }
        m.raw.push_back(std::move(row));
    }
    m.normalized = normalize_rows(m.raw, &m.unnormalized);
    return m;
}

}  // namespace mdfm::perturb
