#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

namespace mdfm::metrics {

struct Confusion {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::size_t total() const noexcept { return tp + tn + fp + fn; }
    friend bool operator==(const Confusion&, const Confusion&) = default;
};

// Positive iff score >= threshold. Throws on empty or mismatched input.
Confusion confusion(const std::vector<double>& scores, const std::vector<int>& labels, double threshold = 0.5);

struct ThresholdMetrics {
    double acc = 0, sn = 0, sp = 0, mcc = 0;
    // Set when a factor of the MCC denominator is zero; mcc is then 0.
    bool mcc_undefined = false;
};

// Sn (Sp) is 0 when the table has no positives (negatives).
ThresholdMetrics threshold_metrics(const Confusion& c);

// Mann-Whitney: (concordant + 0.5 tied) / (n_pos n_neg). Throws unless both
// classes are present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Step-wise area under precision-recall over a descending-score sweep with
// tied scores entering as one block. Throws without positives.
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

struct MetricReport {
    double acc = 0, sn = 0, sp = 0, mcc = 0, auc = 0, auprc = 0;
    std::size_t n_pos = 0, n_neg = 0;
    Confusion counts;
    bool mcc_undefined = false;
    // AUC is undefined for single-class input; reported as NaN in that case.
    bool auc_defined = true;
    bool auprc_defined = true;

    nlohmann::json to_json() const;
    static std::string tsv_header();
    std::string tsv_row() const;
};

MetricReport evaluate(const std::vector<double>& scores, const std::vector<int>& labels, double threshold = 0.5);

// Shortest round-trip decimal rendering of a double.
std::string fmt(double v);

}  // namespace mdfm::metrics
