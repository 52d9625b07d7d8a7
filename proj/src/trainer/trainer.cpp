#include "mdfm/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "mdfm/autodiff/ops.hpp"
#include "mdfm/common/parallel.hpp"
#include "mdfm/model/params.hpp"

namespace mdfm::trainer {

using ad::ParamSet;
using ad::Tensor;

namespace {

const char* to_string(FloodMode m) { return m == FloodMode::batch ? "batch" : "sample"; }
const char* to_string(FgmNorm n) { return n == FgmNorm::per_tensor ? "per_tensor" : "global"; }

// Unbiased enough for shuffling and free of library-specific distributions,
// so batch order is identical across standard libraries.
void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

void add_graph_grads(const ad::Graph& g, ParamSet& acc, double w) {
    g.for_each_param([&](const std::string& name, int id) {
        if (const Tensor* gr = g.grad(id)) acc.at(name).add_scaled(*gr, w);
    });
}

void scale_all(ParamSet& ps, double c) {
    for (auto& [name, t] : ps)
        for (auto& x : t.data()) x *= c;
}

std::vector<const char*> embedding_tables(const ParamSet& params) {
    std::vector<const char*> out;
    for (const char* name : {model::kKmerTokenTable, model::kBpeTokenTable}) {
        if (params.contains(name)) out.push_back(name);
    }
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("invalid train config: " + m); };
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(flood >= 0.0)) fail("flood level must be >= 0");
    if (!(fgm_eps >= 0.0)) fail("fgm_eps must be >= 0");
    if (epochs == 0) fail("epochs must be positive");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"lr", lr},
            {"batch_size", batch_size},
            {"weight_decay", weight_decay},
            {"flood", flood},
            {"fgm_eps", fgm_eps},
            {"epochs", epochs},
            {"seed", seed},
            {"adversarial", adversarial},
            {"finetune_init", finetune_init},
            {"finetune_epochs", finetune_epochs},
            {"flood_mode", to_string(flood_mode)},
            {"fgm_norm", to_string(fgm_norm)}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.flood = j.value("flood", c.flood);
    c.fgm_eps = j.value("fgm_eps", c.fgm_eps);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.adversarial = j.value("adversarial", c.adversarial);
    c.finetune_init = j.value("finetune_init", c.finetune_init);
    c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
    if (j.contains("flood_mode")) {
        const auto s = j.at("flood_mode").get<std::string>();
        if (s == "batch") c.flood_mode = FloodMode::batch;
        else if (s == "sample") c.flood_mode = FloodMode::sample;
        else throw std::invalid_argument("unknown flood_mode '" + s + "'");
    }
    if (j.contains("fgm_norm")) {
        const auto s = j.at("fgm_norm").get<std::string>();
        if (s == "per_tensor") c.fgm_norm = FgmNorm::per_tensor;
        else if (s == "global") c.fgm_norm = FgmNorm::global;
        else throw std::invalid_argument("unknown fgm_norm '" + s + "'");
    }
    return c;
}

OptState OptState::zeros_like(const ParamSet& params) {
    OptState s;
    s.m = params.like(0.0);
    s.v = params.like(0.0);
    return s;
}

double cross_entropy(const std::vector<double>& logits, int label) {
    if (logits.size() != 2 || (label != 0 && label != 1)) {
        throw std::invalid_argument("cross_entropy: expects 2 logits and a 0/1 label");
    }
    const double m = std::max(logits[0], logits[1]);
    const double lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
    return lse - logits[static_cast<std::size_t>(label)];
}

// Same piecewise form as the graph op: exact at ce >= b.
double flooding_loss(double ce, double b) { return ce >= b ? ce : (b - ce) + b; }

double flooding_slope(double ce, double b) {
    if (ce > b) return 1.0;
    if (ce < b) return -1.0;
    return 0.0;
}

std::map<std::string, Tensor> fgm_perturb(const std::map<std::string, Tensor>& grads, double eps, FgmNorm norm) {
    if (grads.empty()) throw std::invalid_argument("fgm_perturb: no embedding tensors targeted");
    double global_sq = 0.0;
    if (norm == FgmNorm::global) {
        for (const auto& [name, g] : grads) {
            const double n = ad::l2_norm(g);
            global_sq += n * n;
        }
    }
    std::map<std::string, Tensor> out;
    for (const auto& [name, g] : grads) {
        const double n = norm == FgmNorm::global ? std::sqrt(global_sq) : ad::l2_norm(g);
        Tensor r(g.shape(), 0.0);
        if (n > 0.0 && std::isfinite(n)) {
            for (std::size_t i = 0; i < g.size(); ++i) r[i] = eps * (g[i] / n);
        }
        out.emplace(name, std::move(r));
    }
    return out;
}

void adamw_step(ParamSet& params, const ParamSet& grads, OptState& st, double lr, double wd) {
    if (grads.size() != params.size() || st.m.size() != params.size() || st.v.size() != params.size()) {
        throw std::invalid_argument("adamw_step: parameter, gradient and moment sets differ in size");
    }
    st.step += 1;
    const double t = static_cast<double>(st.step);
    const double bc1 = 1.0 - std::pow(st.beta1, t);
    const double bc2 = 1.0 - std::pow(st.beta2, t);
    const double decay = 1.0 - lr * wd;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params.entry(i).second;
        const Tensor& g = grads.entry(i).second;
        Tensor& m = st.m.entry(i).second;
        Tensor& v = st.v.entry(i).second;
        if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
            throw std::invalid_argument("adamw_step: shape mismatch for " + params.entry(i).first);
        }
        for (std::size_t j = 0; j < p.size(); ++j) {
            p[j] *= decay;
            m[j] = st.beta1 * m[j] + (1.0 - st.beta1) * g[j];
            v[j] = st.beta2 * v[j] + (1.0 - st.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

BatchGrad batch_gradient(const std::vector<const Example*>& batch, const ParamSet& params,
                         const model::ModelConfig& mcfg, const TrainConfig& tcfg, std::mt19937_64* dropout_rng) {
    if (batch.empty()) throw std::invalid_argument("batch_gradient: empty batch");
    BatchGrad out;
    out.grads = params.like(0.0);
    double ce_sum = 0.0, flooded_sum = 0.0;
    for (const Example* ex : batch) {
        ad::Graph g;
        model::ForwardOptions opts;
        opts.dropout_rng = dropout_rng;
        model::GraphForward f = model::build_forward(g, params, mcfg, ex->enc, opts);
        ad::Var ce = ad::cross_entropy(f.logits, ex->label);
        const double ce_v = ce.value().item();
        ce_sum += ce_v;
        double w = 1.0;
        if (tcfg.flood_mode == FloodMode::sample) {
            flooded_sum += flooding_loss(ce_v, tcfg.flood);
            w = flooding_slope(ce_v, tcfg.flood);
        }
        if (w != 0.0) {
            g.backward(ce);
            add_graph_grads(g, out.grads, w);
        }
    }
    const double n = static_cast<double>(batch.size());
    out.mean_ce = ce_sum / n;
    if (tcfg.flood_mode == FloodMode::batch) {
        out.loss = flooding_loss(out.mean_ce, tcfg.flood);
        scale_all(out.grads, flooding_slope(out.mean_ce, tcfg.flood) * (1.0 / n));
    } else {
        out.loss = flooded_sum / n;
        scale_all(out.grads, 1.0 / n);
    }
    return out;
}

StepMetrics train_step(const std::vector<const Example*>& batch, ParamSet& params, OptState& state,
                       const model::ModelConfig& mcfg, const TrainConfig& tcfg, std::mt19937_64& dropout_rng) {
    StepMetrics sm;
    BatchGrad clean = batch_gradient(batch, params, mcfg, tcfg, &dropout_rng);
    sm.loss = clean.loss;
    sm.mean_ce = clean.mean_ce;
    ParamSet total = std::move(clean.grads);

    if (tcfg.adversarial) {
        const auto tables = embedding_tables(params);
        std::map<std::string, Tensor> emb_grads;
        for (const char* name : tables) emb_grads.emplace(name, total.at(name));
        const auto r_adv = fgm_perturb(emb_grads, tcfg.fgm_eps, tcfg.fgm_norm);

        std::map<std::string, Tensor> backup;
        for (const char* name : tables) {
            backup.emplace(name, params.at(name));
            params.at(name).add_scaled(r_adv.at(name));
        }
        try {
            BatchGrad adv = batch_gradient(batch, params, mcfg, tcfg, &dropout_rng);
            sm.adv_loss = adv.loss;
            for (std::size_t i = 0; i < total.size(); ++i) total.entry(i).second.add_scaled(adv.grads.entry(i).second);
        } catch (...) {
            for (auto& [name, t] : backup) params.at(name) = std::move(t);
            throw;
        }
        for (auto& [name, t] : backup) params.at(name) = std::move(t);
    }

    adamw_step(params, total, state, tcfg.lr, tcfg.weight_decay);
    return sm;
}

std::vector<Example> encode_examples(const std::vector<seqdata::DnaSample>& samples, const model::Tokenizers& tok,
                                     const model::ModelConfig& mcfg) {
    std::vector<Example> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back({model::encode_sequence(s.sequence, tok, mcfg), s.label});
    return out;
}

std::vector<double> predict_scores(const std::vector<seqdata::DnaSample>& samples, const model::Tokenizers& tok,
                                   const ParamSet& params, const model::ModelConfig& mcfg, std::size_t jobs) {
    std::vector<double> scores(samples.size());
    parallel_for(samples.size(), jobs, [&](std::size_t i) {
        scores[i] = model::model_forward(samples[i].sequence, tok, params, mcfg).p_positive();
    });
    return scores;
}

metrics::MetricReport evaluate_model(const std::vector<seqdata::DnaSample>& samples, const model::Tokenizers& tok,
                                     const ParamSet& params, const model::ModelConfig& mcfg, std::size_t jobs) {
    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) labels.push_back(s.label);
    return metrics::evaluate(predict_scores(samples, tok, params, mcfg, jobs), labels);
}

nlohmann::json EpochLog::to_json() const {
    nlohmann::json j = {{"epoch", epoch}, {"train_loss", train_loss}, {"train_ce", train_ce}};
    if (has_val) j["val"] = val.to_json();
    return j;
}

namespace {

// Trains one encoder together with a throwaway linear head on plain mean CE,
// then writes the encoder weights back into `params`.
void warm_up_encoder(model::View view, const std::vector<Example>& examples, ParamSet& params,
                     const model::ModelConfig& mcfg, const TrainConfig& tcfg) {
    const std::string prefix = model::to_string(view) + ".";
    ParamSet local;
    for (const auto& [name, t] : params) {
        if (name.rfind(prefix, 0) == 0) local.add(name, t);
    }
    std::mt19937_64 rng(tcfg.seed ^ (view == model::View::kmer ? 0x6b6d6572ull : 0x627065ull));
    Tensor head({mcfg.d, 2}, 0.0);
    const double a = 1.0 / std::sqrt(static_cast<double>(mcfg.d));
    for (auto& x : head.data()) x = a * (2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0);
    local.add("warm.w", std::move(head));
    local.add("warm.b", Tensor({2}, 0.0));
    OptState st = OptState::zeros_like(local);

    std::vector<std::size_t> order(examples.size());
    for (std::size_t e = 0; e < tcfg.finetune_epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(order, rng);
        for (std::size_t b = 0; b < order.size(); b += tcfg.batch_size) {
            const std::size_t end = std::min(order.size(), b + tcfg.batch_size);
            ParamSet grads = local.like(0.0);
            for (std::size_t i = b; i < end; ++i) {
                const Example& ex = examples[order[i]];
                ad::Graph g;
                const auto& ids = view == model::View::kmer ? ex.enc.kmer.ids : ex.enc.bpe.ids;
                auto out = model::encode_view(g, local, mcfg, view, model::token_embeddings(g, local, view, ids));
                ad::Var logits = ad::add(ad::matmul(out.pooled, g.param("warm.w", local.at("warm.w"))),
                                         g.param("warm.b", local.at("warm.b")));
                ad::Var ce = ad::cross_entropy(logits, ex.label);
                g.backward(ce);
                add_graph_grads(g, grads, 1.0);
            }
            scale_all(grads, 1.0 / static_cast<double>(end - b));
            adamw_step(local, grads, st, tcfg.lr, tcfg.weight_decay);
        }
    }
    for (auto& [name, t] : params) {
        if (name.rfind(prefix, 0) == 0) t = local.at(name);
    }
}

}  // namespace

FitResult fit(const std::vector<seqdata::DnaSample>& train, const std::vector<seqdata::DnaSample>* val,
              const model::ModelConfig& mcfg, const TrainConfig& tcfg, std::ostream* log, std::size_t jobs) {
    mcfg.validate();
    tcfg.validate();
    if (train.empty()) throw std::invalid_argument("fit: empty training split");

    FitResult res;
    res.tokenizers.k = mcfg.k;
    if (mcfg.has_bpe_view()) {
        std::vector<std::string> corpus;
        corpus.reserve(train.size());
        for (const auto& s : train) corpus.push_back(s.sequence);
        res.tokenizers.bpe = seqdata::train_bpe(corpus, mcfg.bpe_vocab);
    }
    const std::vector<Example> examples = encode_examples(train, res.tokenizers, mcfg);
    res.params = model::init_params(mcfg, tcfg.seed);

    if (tcfg.finetune_init) {
        warm_up_encoder(model::View::kmer, examples, res.params, mcfg, tcfg);
        if (mcfg.has_bpe_view()) warm_up_encoder(model::View::bpe, examples, res.params, mcfg, tcfg);
    }

    OptState state = OptState::zeros_like(res.params);
    std::mt19937_64 shuffle_rng(tcfg.seed ^ 0x5851f42d4c957f2dull);
    std::mt19937_64 dropout_rng(tcfg.seed ^ 0x14057b7ef767814full);
    std::vector<std::size_t> order(examples.size());
    std::vector<const Example*> batch;

    for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(order, shuffle_rng);
        double loss_sum = 0.0, ce_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t b = 0; b < order.size(); b += tcfg.batch_size) {
            batch.clear();
            for (std::size_t i = b; i < std::min(order.size(), b + tcfg.batch_size); ++i) {
                batch.push_back(&examples[order[i]]);
            }
            StepMetrics sm;
            try {
                sm = train_step(batch, res.params, state, mcfg, tcfg, dropout_rng);
            } catch (const std::domain_error& e) {
                throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                         std::to_string(state.step + 1) + ": " + e.what());
            }
            if (!std::isfinite(sm.loss) || !res.params.all_finite()) {
                throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                         std::to_string(state.step) + ": non-finite loss or parameters");
            }
            loss_sum += sm.loss;
            ce_sum += sm.mean_ce;
            ++steps;
        }
        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = loss_sum / static_cast<double>(steps);
        entry.train_ce = ce_sum / static_cast<double>(steps);
        if (val && !val->empty()) {
            entry.has_val = true;
            entry.val = evaluate_model(*val, res.tokenizers, res.params, mcfg, jobs);
        }
        if (log) *log << entry.to_json().dump() << '\n' << std::flush;
        res.log.push_back(std::move(entry));
    }
    return res;
}

std::vector<std::size_t> stratified_folds(const std::vector<int>& labels, std::size_t folds, std::uint64_t seed) {
    if (folds < 2) throw std::invalid_argument("stratified_folds: need at least 2 folds");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
    if (pos.size() < folds || neg.size() < folds) {
        throw std::invalid_argument("stratified_folds: " + std::to_string(pos.size()) + " positives and " +
                                    std::to_string(neg.size()) + " negatives cannot fill " + std::to_string(folds) +
                                    " folds with both classes");
    }
    std::mt19937_64 rng(seed);
    shuffle(pos, rng);
    shuffle(neg, rng);
    std::vector<std::size_t> fold(labels.size());
    std::size_t next = 0;
    for (std::size_t i : pos) fold[i] = next++ % folds;
    for (std::size_t i : neg) fold[i] = next++ % folds;
    return fold;
}

void CvResult::write_tsv(const std::filesystem::path& path, const std::vector<TrainConfig>& grid) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "config";
    const std::size_t k = fold_auprc.empty() ? 0 : fold_auprc.front().size();
    for (std::size_t f = 0; f < k; ++f) out << "\tfold" << f + 1;
    out << "\tmean_auprc\tselected\n";
    for (std::size_t c = 0; c < grid.size(); ++c) {
        out << grid[c].to_json().dump();
        for (double v : fold_auprc[c]) out << '\t' << metrics::fmt(v);
        out << '\t' << metrics::fmt(mean_auprc[c]) << '\t' << (c == best ? 1 : 0) << '\n';
    }
}

CvResult cross_validate(const std::vector<seqdata::DnaSample>& train, const std::vector<TrainConfig>& grid,
                        const model::ModelConfig& mcfg, std::size_t folds, std::uint64_t fold_seed,
                        std::size_t jobs) {
    if (grid.empty()) throw std::invalid_argument("cross_validate: empty grid");
    std::vector<int> labels;
    for (const auto& s : train) labels.push_back(s.label);
    const std::vector<std::size_t> fold = stratified_folds(labels, folds, fold_seed);

    CvResult res;
    for (const TrainConfig& cfg : grid) {
        std::vector<double> per_fold;
        for (std::size_t f = 0; f < folds; ++f) {
            std::vector<seqdata::DnaSample> tr, va;
            for (std::size_t i = 0; i < train.size(); ++i) (fold[i] == f ? va : tr).push_back(train[i]);
            FitResult m = fit(tr, nullptr, mcfg, cfg, nullptr, jobs);
            std::vector<int> va_labels;
            for (const auto& s : va) va_labels.push_back(s.label);
            per_fold.push_back(metrics::auprc(predict_scores(va, m.tokenizers, m.params, mcfg, jobs), va_labels));
        }
        double mean = 0.0;
        for (double v : per_fold) mean += v;
        res.mean_auprc.push_back(mean / static_cast<double>(folds));
        res.fold_auprc.push_back(std::move(per_fold));
    }
    for (std::size_t c = 1; c < grid.size(); ++c) {
        const double a = res.mean_auprc[c], b = res.mean_auprc[res.best];
        if (a > b || (a == b && grid[c].to_json().dump() < grid[res.best].to_json().dump())) res.best = c;
    }
    return res;
}

}  // namespace mdfm::trainer
