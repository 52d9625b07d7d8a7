#include "mdfm/metrics/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mdfm::metrics {
namespace {

void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels, const char* op) {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument(std::string(op) + ": " + std::to_string(scores.size()) + " scores for " +
                                    std::to_string(labels.size()) + " labels");
    }
    if (scores.empty()) throw std::invalid_argument(std::string(op) + ": empty input");
    for (int y : labels) {
        if (y != 0 && y != 1) throw std::invalid_argument(std::string(op) + ": labels must be 0 or 1");
    }
}

// Indices sorted by descending score.
std::vector<std::size_t> by_score_desc(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

}  // namespace

Confusion confusion(const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
    check_inputs(scores, labels, "confusion");
    Confusion c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (labels[i] == 1) (pred ? c.tp : c.fn)++;
        else (pred ? c.fp : c.tn)++;
    }
    return c;
}

ThresholdMetrics threshold_metrics(const Confusion& c) {
    ThresholdMetrics m;
    const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
    const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
    const double n = tp + tn + fp + fn;
    m.acc = n > 0 ? (tp + tn) / n : 0.0;
    m.sn = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    m.sp = tn + fp > 0 ? tn / (tn + fp) : 0.0;
    const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (den == 0.0) {
        m.mcc = 0.0;
        m.mcc_undefined = true;
    } else {
        m.mcc = (tp * tn - fp * fn) / std::sqrt(den);
    }
    return m;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_inputs(scores, labels, "auc");
    // Ascending sweep over tied blocks: each positive beats every negative
    // seen in earlier blocks and ties with those of its own block.
    std::vector<std::size_t> idx = by_score_desc(scores);
    std::reverse(idx.begin(), idx.end());
    double n_pos = 0, n_neg = 0, wins = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        double bp = 0, bn = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            (labels[idx[j]] == 1 ? bp : bn) += 1;
            ++j;
        }
        wins += bp * n_neg + 0.5 * bp * bn;
        n_pos += bp;
        n_neg += bn;
        i = j;
    }
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc: both classes must be present");
    return wins / (n_pos * n_neg);
}

double auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_inputs(scores, labels, "auprc");
    const double total_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    if (total_pos == 0) throw std::invalid_argument("auprc: no positive samples");
    const std::vector<std::size_t> idx = by_score_desc(scores);
    // Summing bp * precision (each term <= bp) and dividing once keeps a
    // perfect ranking at exactly 1.
    double tp = 0, fp = 0, area = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        double bp = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            if (labels[idx[j]] == 1) bp += 1;
            else fp += 1;
            ++j;
        }
        tp += bp;
        area += bp * (tp / (tp + fp));
        i = j;
    }
    return area / total_pos;
}

nlohmann::json MetricReport::to_json() const {
    auto num = [](double v, bool defined) { return defined ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"acc", acc},
            {"sn", sn},
            {"sp", sp},
            {"mcc", mcc},
            {"mcc_undefined", mcc_undefined},
            {"auc", num(auc, auc_defined)},
            {"auprc", num(auprc, auprc_defined)},
            {"n_pos", n_pos},
            {"n_neg", n_neg},
            {"tp", counts.tp},
            {"tn", counts.tn},
            {"fp", counts.fp},
            {"fn", counts.fn}};
}

std::string MetricReport::tsv_header() { return "acc\tsn\tsp\tmcc\tauc\tauprc\tn_pos\tn_neg\ttp\ttn\tfp\tfn"; }

std::string MetricReport::tsv_row() const {
    auto num = [](double v, bool defined) { return defined ? fmt(v) : std::string("nan"); };
    return fmt(acc) + '\t' + fmt(sn) + '\t' + fmt(sp) + '\t' + fmt(mcc) + '\t' + num(auc, auc_defined) + '\t' +
           num(auprc, auprc_defined) + '\t' + std::to_string(n_pos) + '\t' + std::to_string(n_neg) + '\t' +
           std::to_string(counts.tp) + '\t' + std::to_string(counts.tn) + '\t' + std::to_string(counts.fp) + '\t' +
           std::to_string(counts.fn);
}

MetricReport evaluate(const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
    MetricReport r;
    r.counts = confusion(scores, labels, threshold);
    const ThresholdMetrics t = threshold_metrics(r.counts);
    r.acc = t.acc;
    r.sn = t.sn;
    r.sp = t.sp;
    r.mcc = t.mcc;
    r.mcc_undefined = t.mcc_undefined;
    r.n_pos = r.counts.tp + r.counts.fn;
    r.n_neg = r.counts.tn + r.counts.fp;
    r.auc_defined = r.n_pos > 0 && r.n_neg > 0;
    r.auc = r.auc_defined ? auc(scores, labels) : std::numeric_limits<double>::quiet_NaN();
    r.auprc_defined = r.n_pos > 0;
    r.auprc = r.auprc_defined ? auprc(scores, labels) : std::numeric_limits<double>::quiet_NaN();
    return r;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace mdfm::metrics
