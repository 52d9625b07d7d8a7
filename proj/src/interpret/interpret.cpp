#include "mdfm/interpret/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

#include "mdfm/autodiff/gradcheck.hpp"
#include "mdfm/common/parallel.hpp"
#include "mdfm/interpret/stats.hpp"
#include "mdfm/metrics/metrics.hpp"
#include "mdfm/model/params.hpp"

namespace mdfm::interpret {

using metrics::fmt;
using model::View;

namespace {

const seqdata::TokenSeq& tokens_of(const model::EncodedSample& enc, View view) {
    return view == View::kmer ? enc.kmer : enc.bpe;
}

const std::vector<double>& attention_of(const model::ModelTrace& t, View view) {
    return view == View::kmer ? t.kmer_attention : t.bpe_attention;
}

std::string keyed(const std::string& token, long position) {
    return position < 0 ? token : token + "@" + std::to_string(position);
}

void require_view(const model::Checkpoint& ckpt, View view) {
    if (view == View::bpe && !ckpt.config.has_bpe_view()) {
        throw std::invalid_argument("model has no BPE view (fusion single_encoder)");
    }
}

}  // namespace

ConfidenceSets select_high_confidence(const model::Checkpoint& ckpt, const std::vector<seqdata::DnaSample>& samples,
                                      double threshold, std::optional<std::size_t> cap, std::size_t min_per_class,
                                      std::size_t jobs) {
    std::vector<ScoredSample> scored(samples.size());
    parallel_for(samples.size(), jobs, [&](std::size_t i) {
        scored[i].sample = samples[i];
        scored[i].enc = model::encode_sequence(samples[i].sequence, ckpt.tokenizers, ckpt.config);
        scored[i].trace = model::model_forward(scored[i].enc, ckpt.params, ckpt.config);
    });

    ConfidenceSets sets;
    sets.threshold = threshold;
    sets.cap = cap;
    for (auto& s : scored) {
        if (s.trace.prediction() != s.sample.label || !(s.trace.confidence() > threshold)) continue;
        (s.sample.label == 1 ? sets.pos : sets.neg).push_back(std::move(s));
    }
    if (cap) {
        for (auto* set : {&sets.pos, &sets.neg}) {
            std::stable_sort(set->begin(), set->end(), [](const ScoredSample& a, const ScoredSample& b) {
                return a.trace.confidence() > b.trace.confidence();
            });
            if (set->size() > *cap) set->resize(*cap);
        }
    }
    if (sets.pos.size() < min_per_class || sets.neg.size() < min_per_class) {
        throw std::runtime_error("too few high-confidence samples above " + fmt(threshold) + ": " +
                                 std::to_string(sets.pos.size()) + " positives, " + std::to_string(sets.neg.size()) +
                                 " negatives (need " + std::to_string(min_per_class) + " per class)");
    }
    return sets;
}

ConfidenceSets permute_sets(const ConfidenceSets& sets, std::uint64_t seed) {
    std::vector<const ScoredSample*> pool;
    for (const auto& s : sets.pos) pool.push_back(&s);
    for (const auto& s : sets.neg) pool.push_back(&s);
    std::mt19937_64 rng(seed);
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng() % i]);
    ConfidenceSets out;
    out.threshold = sets.threshold;
    out.cap = sets.cap;
    for (std::size_t i = 0; i < pool.size(); ++i) (i < sets.pos.size() ? out.pos : out.neg).push_back(*pool[i]);
    return out;
}

// ---------------------------------------------------------------------------
// CAD

std::string CadReport::tsv_header() { return "motif\tn_pos\tn_neg\tmean_pos\tmean_neg\tcad\tt\tdf\tp\tp_bh"; }

void CadReport::write_tsv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << tsv_header() << '\n';
    for (const auto& r : records) {
        out << keyed(r.motif, r.position) << '\t' << r.n_pos << '\t' << r.n_neg << '\t' << fmt(r.mean_pos) << '\t'
            << fmt(r.mean_neg) << '\t' << fmt(r.cad) << '\t' << fmt(r.t) << '\t' << fmt(r.df) << '\t' << fmt(r.p)
            << '\t' << fmt(r.p_bh) << '\n';
    }
    if (!out) throw std::runtime_error("error writing " + path.string());
}

CadReport cad_analysis(const ConfidenceSets& sets, const CadOptions& opts) {
    using Key = std::pair<std::string, long>;
    std::map<Key, std::pair<std::vector<double>, std::vector<double>>> groups;

    auto collect = [&](const std::vector<ScoredSample>& set, bool positive) {
        for (const auto& s : set) {
            const auto& tokens = tokens_of(s.enc, opts.view);
            const auto& att = attention_of(s.trace, opts.view);
            if (att.size() != tokens.size() + 1) throw std::logic_error("cad_analysis: attention row length mismatch");
            std::map<Key, std::pair<double, std::size_t>> per_seq;
            for (std::size_t i = 0; i < tokens.size(); ++i) {
                Key key{tokens.strings[i], opts.positional ? static_cast<long>(tokens.offsets[i]) : -1L};
                const double a = att[i + 1];
                if (opts.unit == CadUnit::occurrence) {
                    auto& g = groups[key];
                    (positive ? g.first : g.second).push_back(a);
                } else {
                    auto& acc = per_seq[key];
                    acc.first += a;
                    acc.second += 1;
                }
            }
            for (const auto& [key, acc] : per_seq) {
                auto& g = groups[key];
                (positive ? g.first : g.second).push_back(acc.first / static_cast<double>(acc.second));
            }
        }
    };
    collect(sets.pos, true);
    collect(sets.neg, false);

    CadReport rep;
    rep.motifs_seen = groups.size();
    for (const auto& [key, g] : groups) {
        const auto& [a, b] = g;
        if (a.size() < opts.min_samples || b.size() < opts.min_samples || a.size() < 2 || b.size() < 2) {
            ++rep.skipped_min_samples;
            continue;
        }
        const CohensD cd = cohens_d(a, b);
        const WelchResult w = welch_t(a, b);
        if (!cd.defined || !w.defined) {
            ++rep.skipped_degenerate;
            continue;
        }
        CadRecord r;
        r.motif = key.first;
        r.position = key.second;
        r.n_pos = a.size();
        r.n_neg = b.size();
        r.mean_pos = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
        r.mean_neg = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
        r.cad = cd.d;
        r.t = w.t;
        r.df = w.df;
        // An underflowed tail is reported as the smallest normal double.
        r.p = std::max(w.p, std::numeric_limits<double>::min());
        rep.records.push_back(std::move(r));
    }

    std::vector<double> ps;
    for (const auto& r : rep.records) ps.push_back(r.p);
    const std::vector<double> bh = benjamini_hochberg(ps);
    for (std::size_t i = 0; i < rep.records.size(); ++i) rep.records[i].p_bh = bh[i];

    std::stable_sort(rep.records.begin(), rep.records.end(), [](const CadRecord& x, const CadRecord& y) {
        if (x.cad != y.cad) return x.cad > y.cad;
        if (x.motif != y.motif) return x.motif < y.motif;
        return x.position < y.position;
    });
    return rep;
}

// ---------------------------------------------------------------------------
// CWGA

std::vector<DimSelection> cwga_dim_select(const ConfidenceSets& sets, std::size_t k, bool* truncated) {
    if (sets.pos.size() < 2 || sets.neg.size() < 2) {
        throw std::invalid_argument("cwga_dim_select: each class needs at least 2 samples");
    }
    const std::size_t d = sets.pos.front().trace.h_mod.size();
    if (truncated) *truncated = k > d;
    std::vector<DimSelection> all;
    std::vector<double> a(sets.pos.size()), b(sets.neg.size());
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = sets.pos[i].trace.h_mod.at(j);
        for (std::size_t i = 0; i < b.size(); ++i) b[i] = sets.neg[i].trace.h_mod.at(j);
        DimSelection s;
        s.dim = j;
        s.delta = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size()) -
                  std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
        const CohensD cd = cohens_d(a, b);
        s.d = cd.defined ? cd.d : 0.0;
        const WelchResult w = welch_t(a, b);
        s.p = w.defined ? w.p : 1.0;
        all.push_back(s);
    }
    std::stable_sort(all.begin(), all.end(), [](const DimSelection& x, const DimSelection& y) {
        if (std::abs(x.d) != std::abs(y.d)) return std::abs(x.d) > std::abs(y.d);
        return x.dim < y.dim;
    });
    all.resize(std::min(k, d));
    for (std::size_t r = 0; r < all.size(); ++r) all[r].rank = r + 1;
    return all;
}

namespace {

struct IgSetup {
    ad::Tensor x, baseline;
};

IgSetup ig_setup(const model::Checkpoint& ckpt, const model::EncodedSample& enc, View view, Baseline base) {
    require_view(ckpt, view);
    ad::Graph g;
    g.freeze_params();
    IgSetup s;
    s.x = model::token_embeddings(g, ckpt.params, view, tokens_of(enc, view).ids).value();
    s.baseline = s.x;
    const std::size_t rows = s.x.dim(0), width = s.x.dim(1);
    const ad::Tensor& table = ckpt.params.at(view == View::kmer ? model::kKmerTokenTable : model::kBpeTokenTable);
    for (std::size_t r = 1; r < rows; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            s.baseline.at(r, c) = base == Baseline::zero ? 0.0 : table.at(static_cast<std::size_t>(seqdata::kPadId), c);
        }
    }
    return s;
}

// Forward to h_mod with the view's token embeddings replaced by an input.
struct HmodGraph {
    ad::Graph g;
    ad::Var input;
    ad::Var h_mod;
};

void build_hmod(HmodGraph& hg, const model::Checkpoint& ckpt, const model::EncodedSample& enc, View view,
                const ad::Tensor& e) {
    hg.g.freeze_params();
    hg.input = hg.g.input(e, true);
    model::ForwardOptions opts;
    opts.stop_after_fusion = true;
    (view == View::kmer ? opts.kmer_tokens : opts.bpe_tokens) = hg.input;
    hg.h_mod = model::build_forward(hg.g, ckpt.params, ckpt.config, enc, opts).fusion.h_mod;
}

ad::Tensor input_grad(const HmodGraph& hg) {
    const ad::Tensor* gr = hg.g.grad(hg.input);
    return gr ? *gr : ad::Tensor(hg.input.shape(), 0.0);
}

std::vector<double> per_token(const ad::Tensor& attribution) {
    const std::size_t rows = attribution.dim(0), width = attribution.dim(1);
    std::vector<double> out(rows - 1, 0.0);
    for (std::size_t r = 1; r < rows; ++r)
        for (std::size_t c = 0; c < width; ++c) out[r - 1] += attribution.at(r, c);
    return out;
}

}  // namespace

SampleAttribution attribute_sample(const model::Checkpoint& ckpt, const model::EncodedSample& enc, View view,
                                   const std::vector<std::size_t>& dims, const std::vector<double>& weights,
                                   const CwgaOptions& opts) {
    if (dims.size() != weights.size() || dims.empty()) {
        throw std::invalid_argument("attribute_sample: need one weight per target dimension");
    }
    const IgSetup setup = ig_setup(ckpt, enc, view, opts.baseline);
    ad::Tensor seed({1, ckpt.config.d}, 0.0);
    for (std::size_t j = 0; j < dims.size(); ++j) seed[dims.at(j)] += weights[j];

    ad::ValueGrad f = [&](const ad::Tensor& e) {
        HmodGraph hg;
        build_hmod(hg, ckpt, enc, view, e);
        double value = 0.0;
        const ad::Tensor& h = hg.h_mod.value();
        for (std::size_t i = 0; i < h.size(); ++i) value += seed[i] * h[i];
        hg.g.backward(hg.h_mod, seed);
        return std::make_pair(value, input_grad(hg));
    };
    ad::IgResult ig = ad::integrated_gradients(f, setup.x, setup.baseline, opts.ig_steps);
    return {per_token(ig.attribution), ig.completeness_gap, ig.f_input - ig.f_baseline};
}

std::vector<SampleAttribution> attribute_sample_per_dim(const model::Checkpoint& ckpt,
                                                        const model::EncodedSample& enc, View view,
                                                        const std::vector<std::size_t>& dims,
                                                        const CwgaOptions& opts) {
    if (dims.empty()) throw std::invalid_argument("attribute_sample_per_dim: no target dimensions");
    const IgSetup setup = ig_setup(ckpt, enc, view, opts.baseline);
    ad::MultiValueGrad f = [&](const ad::Tensor& e) {
        HmodGraph hg;
        build_hmod(hg, ckpt, enc, view, e);
        std::vector<double> values;
        std::vector<ad::Tensor> grads;
        for (std::size_t dim : dims) {
            values.push_back(hg.h_mod.value().at(0, dim));
            ad::Tensor seed({1, ckpt.config.d}, 0.0);
            seed[dim] = 1.0;
            hg.g.backward(hg.h_mod, seed);
            grads.push_back(input_grad(hg));
        }
        return std::make_pair(std::move(values), std::move(grads));
    };
    std::vector<SampleAttribution> out;
    for (auto& ig : ad::integrated_gradients_multi(f, setup.x, setup.baseline, opts.ig_steps)) {
        out.push_back({per_token(ig.attribution), ig.completeness_gap, ig.f_input - ig.f_baseline});
    }
    return out;
}

namespace {

// rows[s][j] holds sample s's per-token attribution for target row j.
TokenAttributions contrast(const ConfidenceSets& sets, View view, bool positional,
                           const std::vector<std::vector<std::vector<double>>>& rows, std::vector<double> weights) {
    using Key = std::pair<std::string, long>;
    const std::size_t n_rows = weights.size();
    std::map<Key, std::vector<double>> pos_sum, neg_sum;
    const std::size_t n_pos = sets.pos.size();
    for (std::size_t s = 0; s < rows.size(); ++s) {
        const ScoredSample& smp = s < n_pos ? sets.pos[s] : sets.neg[s - n_pos];
        auto& sums = s < n_pos ? pos_sum : neg_sum;
        const auto& tokens = tokens_of(smp.enc, view);
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            Key key{tokens.strings[i], positional ? static_cast<long>(tokens.offsets[i]) : -1L};
            auto& acc = sums[key];
            acc.resize(n_rows, 0.0);
            for (std::size_t j = 0; j < n_rows; ++j) acc[j] += rows[s][j][i];
        }
    }
    std::map<Key, int> keys;
    for (const auto& [k, v] : pos_sum) keys[k];
    for (const auto& [k, v] : neg_sum) keys[k];

    TokenAttributions out;
    out.view = view;
    out.positional = positional;
    out.weights = std::move(weights);
    out.delta.assign(n_rows, {});
    const double np = static_cast<double>(sets.pos.size()), nn = static_cast<double>(sets.neg.size());
    for (const auto& [key, unused] : keys) {
        out.tokens.push_back(key.first);
        out.positions.push_back(key.second);
        auto p = pos_sum.find(key);
        auto q = neg_sum.find(key);
        for (std::size_t j = 0; j < n_rows; ++j) {
            const double a = p == pos_sum.end() ? 0.0 : p->second[j] / np;
            const double b = q == neg_sum.end() ? 0.0 : q->second[j] / nn;
            out.delta[j].push_back(a - b);
        }
    }
    return out;
}

std::vector<const ScoredSample*> all_samples(const ConfidenceSets& sets) {
    std::vector<const ScoredSample*> v;
    for (const auto& s : sets.pos) v.push_back(&s);
    for (const auto& s : sets.neg) v.push_back(&s);
    return v;
}

}  // namespace

TokenAttributions cwga_attribute(const model::Checkpoint& ckpt, const ConfidenceSets& sets,
                                 const std::vector<DimSelection>& dims, View view, const CwgaOptions& opts) {
    if (dims.empty()) throw std::invalid_argument("cwga_attribute: no dimensions selected");
    std::vector<std::size_t> dim_idx;
    std::vector<double> weights;
    for (const auto& d : dims) {
        dim_idx.push_back(d.dim);
        weights.push_back(d.d);
    }
    const auto samples = all_samples(sets);
    std::vector<std::vector<std::vector<double>>> rows(samples.size());
    parallel_for(samples.size(), opts.jobs, [&](std::size_t s) {
        for (auto& a : attribute_sample_per_dim(ckpt, samples[s]->enc, view, dim_idx, opts)) {
            rows[s].push_back(std::move(a.per_token));
        }
    });
    return contrast(sets, view, opts.positional, rows, std::move(weights));
}

TokenAttributions cwga_attribute_fused(const model::Checkpoint& ckpt, const ConfidenceSets& sets,
                                       const std::vector<DimSelection>& dims, View view, const CwgaOptions& opts) {
    if (dims.empty()) throw std::invalid_argument("cwga_attribute_fused: no dimensions selected");
    std::vector<std::size_t> dim_idx;
    std::vector<double> weights;
    for (const auto& d : dims) {
        dim_idx.push_back(d.dim);
        weights.push_back(d.d);
    }
    const auto samples = all_samples(sets);
    std::vector<std::vector<std::vector<double>>> rows(samples.size());
    parallel_for(samples.size(), opts.jobs, [&](std::size_t s) {
        rows[s].push_back(attribute_sample(ckpt, samples[s]->enc, view, dim_idx, weights, opts).per_token);
    });
    return contrast(sets, view, opts.positional, rows, {1.0});
}

std::string CwgaReport::tsv_header() { return "view\ttoken\tposition_mode\tC\tC_hat\trank"; }

void CwgaReport::write_tsv(const std::filesystem::path& path, bool append) const {
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    if (!append) out << tsv_header() << '\n';
    const char* mode = positional ? "positional" : "agnostic";
    for (const auto& r : records) {
        out << model::to_string(r.view) << '\t' << keyed(r.token, r.position) << '\t' << mode << '\t' << fmt(r.c)
            << '\t' << fmt(r.c_hat) << '\t' << r.rank << '\n';
    }
    if (!out) throw std::runtime_error("error writing " + path.string());
}

CwgaReport cwga_aggregate(const TokenAttributions& attr) {
    if (attr.delta.size() != attr.weights.size()) {
        throw std::invalid_argument("cwga_aggregate: one weight per attribution row required");
    }
    CwgaReport rep;
    rep.positional = attr.positional;
    const std::size_t n = attr.tokens.size();
    std::vector<double> c(n, 0.0);
    for (std::size_t j = 0; j < attr.weights.size(); ++j)
        for (std::size_t t = 0; t < n; ++t) c[t] += attr.weights[j] * attr.delta[j][t];
    double max_abs = 0.0;
    for (double v : c) max_abs = std::max(max_abs, std::abs(v));
    rep.all_zero = max_abs == 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        rep.records.push_back(
            {attr.tokens[t], attr.view, attr.positions[t], c[t], rep.all_zero ? 0.0 : c[t] / max_abs, 0});
    }
    std::stable_sort(rep.records.begin(), rep.records.end(), [](const CwgaRecord& x, const CwgaRecord& y) {
        if (x.c_hat != y.c_hat) return x.c_hat > y.c_hat;
        if (x.token != y.token) return x.token < y.token;
        return x.position < y.position;
    });
    for (std::size_t r = 0; r < rep.records.size(); ++r) rep.records[r].rank = r + 1;
    return rep;
}

std::vector<std::vector<double>> cwga_sample_contrast(const model::Checkpoint& ckpt, const ConfidenceSets& sets,
                                                      const std::vector<DimSelection>& dims, View view,
                                                      const CwgaOptions& opts) {
    std::vector<std::size_t> dim_idx;
    std::vector<double> weights;
    for (const auto& d : dims) {
        dim_idx.push_back(d.dim);
        weights.push_back(d.d);
    }
    // k-mer tokens sit at fixed positions; BPE attributions are spread
    // evenly over the bases each token covers so positions line up.
    const auto samples = all_samples(sets);
    std::vector<std::vector<double>> per_pos(samples.size());
    parallel_for(samples.size(), opts.jobs, [&](std::size_t s) {
        std::vector<double> tok = attribute_sample(ckpt, samples[s]->enc, view, dim_idx, weights, opts).per_token;
        if (view == View::kmer) {
            per_pos[s] = std::move(tok);
            return;
        }
        const auto& ts = samples[s]->enc.bpe;
        std::vector<double> bases(samples[s]->sample.sequence.size(), 0.0);
        for (std::size_t i = 0; i < ts.size(); ++i) {
            const std::size_t len = ts.strings[i].size();
            for (std::size_t c = 0; c < len; ++c) bases[ts.offsets[i] + c] += tok[i] / static_cast<double>(len);
        }
        per_pos[s] = std::move(bases);
    });

    const std::size_t n_pos = sets.pos.size();
    const std::size_t width = per_pos.front().size();
    std::vector<double> neg_mean(width, 0.0);
    for (std::size_t s = n_pos; s < per_pos.size(); ++s)
        for (std::size_t i = 0; i < width; ++i) neg_mean[i] += per_pos[s][i];
    for (double& v : neg_mean) v /= static_cast<double>(per_pos.size() - n_pos);

    std::vector<std::vector<double>> out(n_pos);
    for (std::size_t s = 0; s < n_pos; ++s) {
        out[s].resize(width);
        for (std::size_t i = 0; i < width; ++i) out[s][i] = per_pos[s][i] - neg_mean[i];
    }
    return out;
}

std::size_t export_motif_fasta(const std::vector<CwgaRecord>& records, const std::vector<seqdata::DnaSample>& positives,
                               std::size_t top_n, std::size_t flank, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "; motif windows around top-ranked tokens, flank " << flank << ", top " << top_n << '\n';
    std::size_t written = 0;
    const std::size_t n = std::min(top_n, records.size());
    for (const auto& s : positives) {
        for (std::size_t r = 0; r < n; ++r) {
            const CwgaRecord& rec = records[r];
            std::size_t at = std::string::npos;
            if (rec.position >= 0) {
                const auto p = static_cast<std::size_t>(rec.position);
                if (p <= s.sequence.size() && s.sequence.compare(p, rec.token.size(), rec.token) == 0) at = p;
            } else {
                at = s.sequence.find(rec.token);
            }
            if (at == std::string::npos) continue;
            const std::size_t begin = at > flank ? at - flank : 0;
            const std::size_t end = std::min(s.sequence.size(), at + rec.token.size() + flank);
            out << '>' << s.id << "|token=" << keyed(rec.token, rec.position) << "|start=" << begin << "|end=" << end
                << '\n'
                << s.sequence.substr(begin, end - begin) << '\n';
            ++written;
        }
    }
    if (!out) throw std::runtime_error("error writing " + path.string());
    return written;
}

}  // namespace mdfm::interpret
