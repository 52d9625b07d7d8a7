#include "mdfm/model/network.hpp"

#include <cmath>
#include <stdexcept>

#include "mdfm/autodiff/ops.hpp"

namespace mdfm::model {

using ad::Graph;
using ad::ParamSet;
using ad::Var;

std::string to_string(View v) { return v == View::kmer ? "kmer" : "bpe"; }

View view_from_string(const std::string& s) {
    if (s == "kmer") return View::kmer;
    if (s == "bpe") return View::bpe;
    throw std::invalid_argument("unknown view '" + s + "' (expected kmer or bpe)");
}

nlohmann::json Tokenizers::to_json() const { return {{"k", k}, {"bpe", bpe.to_json()}}; }

Tokenizers Tokenizers::from_json(const nlohmann::json& j) {
    Tokenizers t;
    t.k = j.at("k").get<std::size_t>();
    t.bpe = seqdata::BpeVocab::from_json(j.at("bpe"));
    return t;
}

EncodedSample encode_sequence(std::string_view sequence, const Tokenizers& tok, const ModelConfig& cfg) {
    if (sequence.size() != cfg.seq_len) {
        throw std::invalid_argument("sequence length " + std::to_string(sequence.size()) + " differs from model length " +
                                    std::to_string(cfg.seq_len));
    }
    if (tok.k != cfg.k) throw std::invalid_argument("tokenizer k differs from model k");
    EncodedSample s;
    s.kmer = seqdata::tokenize_kmer(sequence, cfg.k);
    if (cfg.has_bpe_view()) {
        s.bpe = seqdata::tokenize_bpe(sequence, tok.bpe);
        for (int id : s.bpe.ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= cfg.bpe_vocab) {
                throw std::invalid_argument("bpe token id " + std::to_string(id) + " outside embedding table of " +
                                            std::to_string(cfg.bpe_vocab) + " rows");
            }
        }
    }
    return s;
}

namespace {

Var linear(Graph& g, const ParamSet& p, const std::string& prefix, Var x) {
    return ad::add(ad::matmul(x, g.param(prefix + ".w", p.at(prefix + ".w"))), g.param(prefix + ".b", p.at(prefix + ".b")));
}

Var norm(Graph& g, const ParamSet& p, const std::string& prefix, Var x, double eps) {
    return ad::layer_norm(x, g.param(prefix + ".g", p.at(prefix + ".g")), g.param(prefix + ".b", p.at(prefix + ".b")), -1,
                          eps);
}

// Post-LN transformer layer with a GELU feed-forward block.
Var transformer_layer(Graph& g, const ParamSet& p, const std::string& prefix, Var x, std::size_t heads, double eps,
                      int* attention_node) {
    Var q = linear(g, p, prefix + ".q", x);
    Var k = linear(g, p, prefix + ".k", x);
    Var v = linear(g, p, prefix + ".v", x);
    Var att = ad::scaled_dot_attention(q, k, v, heads);
    if (attention_node) *attention_node = att.id;
    Var x1 = norm(g, p, prefix + ".ln1", ad::add(x, linear(g, p, prefix + ".o", att)), eps);
    Var ff = linear(g, p, prefix + ".ff2", ad::gelu(linear(g, p, prefix + ".ff1", x1)));
    return norm(g, p, prefix + ".ln2", ad::add(x1, ff), eps);
}

std::vector<double> row_vec(Var v) { return v.value().vec(); }

}  // namespace

Var token_embeddings(Graph& g, const ParamSet& p, View view, const std::vector<int>& ids) {
    const std::string name = to_string(view) + ".tok_emb";
    const ad::Tensor& table = p.at(name);
    std::vector<int> with_cls;
    with_cls.reserve(ids.size() + 1);
    with_cls.push_back(seqdata::kClsId);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= table.dim(0)) {
            throw std::invalid_argument(name + ": token id " + std::to_string(id) + " out of vocabulary of size " +
                                        std::to_string(table.dim(0)));
        }
        with_cls.push_back(id);
    }
    return ad::embedding_lookup(g.param(name, table), with_cls);
}

ViewOutput encode_view(Graph& g, const ParamSet& p, const ModelConfig& cfg, View view, Var tok) {
    const std::string v = to_string(view);
    const std::size_t positions = tok.shape().at(0);
    if (positions < 2) throw std::invalid_argument("encode_" + v + "_view: empty token list");
    const ad::Tensor& pos_table = p.at(v + ".pos_emb");
    if (positions > pos_table.dim(0)) {
        throw std::invalid_argument("encode_" + v + "_view: " + std::to_string(positions) +
                                    " positions exceed the positional table");
    }
    Var pos = ad::slice(g.param(v + ".pos_emb", pos_table), 0, 0, positions);
    Var x = norm(g, p, v + ".emb_ln", ad::add(tok, pos), cfg.ln_eps);

    ViewOutput out;
    for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
        const bool last = l + 1 == cfg.encoder_layers;
        x = transformer_layer(g, p, v + ".L" + std::to_string(l), x, cfg.encoder_heads, cfg.ln_eps,
                              last ? &out.attention_node : nullptr);
    }
    out.hidden = x;
    if (view == View::kmer) {
        out.pooled = ad::tanh(linear(g, p, "kmer.pooler", ad::slice(x, 0, 0, 1)));
    } else {
        out.pooled = ad::mean_pool(ad::slice(x, 0, 1, positions), 0);
    }
    return out;
}

FusionOutput fuse(Graph& g, const ParamSet& p, const ModelConfig& cfg, Var h_kmer, Var h_bpe) {
    FusionOutput out;
    switch (cfg.fusion) {
        case Fusion::film:
        case Fusion::reverse_film: {
            Var cond = cfg.fusion == Fusion::film ? h_bpe : h_kmer;
            Var target = cfg.fusion == Fusion::film ? h_kmer : h_bpe;
            Var gb = linear(g, p, "film.l2", ad::relu(linear(g, p, "film.l1", cond)));
            out.gamma = ad::slice(gb, 1, 0, cfg.d);
            out.beta = ad::slice(gb, 1, cfg.d, 2 * cfg.d);
            out.h_mod = ad::add(ad::hadamard(out.gamma, target), out.beta);
            break;
        }
        case Fusion::concat: out.h_mod = linear(g, p, "fuse", ad::concat({h_kmer, h_bpe}, 1)); break;
        case Fusion::single_encoder: out.h_mod = h_kmer; break;
    }
    return out;
}

MoeOutput moe(Graph& g, const ParamSet& p, const ModelConfig& cfg, Var h_mod, Var cond) {
    MoeOutput out;
    if (!cfg.use_moe) {
        out.h_moe = h_mod;
        return out;
    }
    if (cfg.d % cfg.segments != 0) throw std::invalid_argument("moe: d not divisible by segments");
    out.gate = ad::softmax(linear(g, p, "gate", cond), -1);
    const std::size_t s = cfg.segment_width();
    Var mixed;
    for (std::size_t i = 0; i < cfg.n_experts; ++i) {
        const std::string prefix = "moe.e" + std::to_string(i);
        Var seg = ad::reshape(h_mod, {cfg.segments, s});
        Var y = ad::flatten(transformer_layer(g, p, prefix, seg, cfg.expert_heads, cfg.ln_eps, nullptr));
        Var h = norm(g, p, prefix + ".out_ln", ad::add(y, h_mod), cfg.ln_eps);
        out.experts.push_back(h);
        Var weighted = ad::mul_scalar(h, ad::slice(out.gate, 1, i, i + 1));
        mixed = i == 0 ? weighted : ad::add(mixed, weighted);
    }
    out.h_moe = linear(g, p, "moe.out", mixed);
    return out;
}

Var classifier_head(Graph& g, const ParamSet& p, const ModelConfig& cfg, Var h, std::mt19937_64* dropout_rng) {
    Var hidden = ad::dropout(linear(g, p, "cls.l1", h), cfg.dropout, dropout_rng);
    return linear(g, p, "cls.l2", ad::relu(hidden));
}

GraphForward build_forward(Graph& g, const ParamSet& p, const ModelConfig& cfg, const EncodedSample& s,
                           const ForwardOptions& opts) {
    GraphForward f;
    f.kmer_tokens = opts.kmer_tokens ? *opts.kmer_tokens : token_embeddings(g, p, View::kmer, s.kmer.ids);
    f.kmer = encode_view(g, p, cfg, View::kmer, f.kmer_tokens);
    Var cond = f.kmer.pooled;
    if (cfg.has_bpe_view()) {
        f.bpe_tokens = opts.bpe_tokens ? *opts.bpe_tokens : token_embeddings(g, p, View::bpe, s.bpe.ids);
        f.bpe = encode_view(g, p, cfg, View::bpe, f.bpe_tokens);
        if (cfg.fusion != Fusion::reverse_film) cond = f.bpe.pooled;
    }
    f.fusion = fuse(g, p, cfg, f.kmer.pooled, f.bpe.pooled);
    if (opts.stop_after_fusion) return f;
    f.moe = moe(g, p, cfg, f.fusion.h_mod, cond);
    f.logits = classifier_head(g, p, cfg, f.moe.h_moe, opts.dropout_rng);
    return f;
}

std::vector<double> cls_attention_row(const Graph& g, int attention_node) {
    const ad::Tensor& probs = g.aux(attention_node);
    const std::size_t heads = probs.dim(0), t = probs.dim(1);
    std::vector<double> row(t, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        const double* r = probs.ptr() + h * t * t;
        for (std::size_t j = 0; j < t; ++j) row[j] += r[j];
    }
    for (auto& x : row) x /= static_cast<double>(heads);
    return row;
}

KmerViewResult encode_kmer_view(const seqdata::TokenSeq& tokens, const ParamSet& p, const ModelConfig& cfg) {
    Graph g;
    ViewOutput v = encode_view(g, p, cfg, View::kmer, token_embeddings(g, p, View::kmer, tokens.ids));
    return {row_vec(v.pooled), cls_attention_row(g, v.attention_node)};
}

std::vector<double> encode_bpe_view(const seqdata::TokenSeq& tokens, const ParamSet& p, const ModelConfig& cfg) {
    if (tokens.size() == 0) throw std::invalid_argument("encode_bpe_view: empty token list");
    Graph g;
    return row_vec(encode_view(g, p, cfg, View::bpe, token_embeddings(g, p, View::bpe, tokens.ids)).pooled);
}

namespace {

void check_width(const std::vector<double>& v, std::size_t d, const char* what) {
    if (v.size() != d) {
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(d) + " values, got " +
                                    std::to_string(v.size()));
    }
}

Var row_input(Graph& g, const std::vector<double>& v) { return g.constant(ad::Tensor({1, v.size()}, v)); }

}  // namespace

FilmResult film_modulate(const std::vector<double>& h_bpe, const std::vector<double>& h_kmer, const ParamSet& p,
                         const ModelConfig& cfg) {
    check_width(h_bpe, cfg.d, "film_modulate h_bpe");
    check_width(h_kmer, cfg.d, "film_modulate h_kmer");
    ModelConfig film_cfg = cfg;
    film_cfg.fusion = Fusion::film;
    Graph g;
    FusionOutput f = fuse(g, p, film_cfg, row_input(g, h_kmer), row_input(g, h_bpe));
    return {row_vec(f.h_mod), row_vec(f.gamma), row_vec(f.beta)};
}

MoeResult moe_forward(const std::vector<double>& h_mod, const std::vector<double>& h_bpe, const ParamSet& p,
                      const ModelConfig& cfg) {
    check_width(h_mod, cfg.d, "moe_forward h_mod");
    check_width(h_bpe, cfg.d, "moe_forward h_bpe");
    if (!cfg.use_moe) throw std::invalid_argument("moe_forward: MoE disabled in config");
    Graph g;
    MoeOutput m = moe(g, p, cfg, row_input(g, h_mod), row_input(g, h_bpe));
    MoeResult r{row_vec(m.h_moe), row_vec(m.gate), {}};
    for (Var e : m.experts) r.experts.push_back(row_vec(e));
    return r;
}

std::vector<double> classify(const std::vector<double>& h_moe, const ParamSet& p, const ModelConfig& cfg,
                             std::mt19937_64* dropout_rng) {
    check_width(h_moe, cfg.d, "classify");
    Graph g;
    return row_vec(classifier_head(g, p, cfg, row_input(g, h_moe), dropout_rng));
}

std::vector<double> softmax2(const std::vector<double>& z) {
    const double m = std::max(z.at(0), z.at(1));
    const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

ModelTrace model_forward(const EncodedSample& s, const ParamSet& p, const ModelConfig& cfg,
                         std::mt19937_64* dropout_rng) {
    Graph g;
    ForwardOptions opts;
    opts.dropout_rng = dropout_rng;
    GraphForward f = build_forward(g, p, cfg, s, opts);
    ModelTrace t;
    t.h_kmer = row_vec(f.kmer.pooled);
    t.kmer_attention = cls_attention_row(g, f.kmer.attention_node);
    if (f.bpe.pooled.valid()) {
        t.h_bpe = row_vec(f.bpe.pooled);
        t.bpe_attention = cls_attention_row(g, f.bpe.attention_node);
    }
    if (f.fusion.gamma.valid()) {
        t.gamma = row_vec(f.fusion.gamma);
        t.beta = row_vec(f.fusion.beta);
    }
    t.h_mod = row_vec(f.fusion.h_mod);
    if (f.moe.gate.valid()) t.gate = row_vec(f.moe.gate);
    for (Var e : f.moe.experts) t.experts.push_back(row_vec(e));
    t.h_moe = row_vec(f.moe.h_moe);
    t.logits = row_vec(f.logits);
    t.probs = softmax2(t.logits);
    return t;
}

ModelTrace model_forward(std::string_view sequence, const Tokenizers& tok, const ParamSet& p, const ModelConfig& cfg,
                         std::mt19937_64* dropout_rng) {
    return model_forward(encode_sequence(sequence, tok, cfg), p, cfg, dropout_rng);
}

}  // namespace mdfm::model
