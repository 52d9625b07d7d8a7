#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mdfm/autodiff/graph.hpp"
#include "mdfm/autodiff/param_set.hpp"
#include "mdfm/model/config.hpp"
#include "mdfm/seqdata/dataset.hpp"
#include "mdfm/seqdata/tokenize.hpp"

namespace mdfm::model {

enum class View { kmer, bpe };
std::string to_string(View v);
View view_from_string(const std::string& s);

struct Tokenizers {
    std::size_t k = 6;
    seqdata::BpeVocab bpe;

    nlohmann::json to_json() const;
    static Tokenizers from_json(const nlohmann::json& j);
};

// Both token views of one sequence, CLS not yet prepended.
struct EncodedSample {
    seqdata::TokenSeq kmer;
    seqdata::TokenSeq bpe;
};

// Throws std::invalid_argument if the sequence length differs from
// cfg.seq_len or a token id falls outside its embedding table.
EncodedSample encode_sequence(std::string_view sequence, const Tokenizers& tok, const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Graph-level building blocks. Vectors flowing between stages are [1, d].

// Token-embedding rows for [CLS] + ids -> [T+1, d].
ad::Var token_embeddings(ad::Graph& g, const ad::ParamSet& p, View view, const std::vector<int>& ids);

struct ViewOutput {
    ad::Var hidden;   // [T+1, d] final hidden states
    ad::Var pooled;   // [1, d]
    int attention_node = -1;  // final-layer attention op (aux holds [heads, T+1, T+1])
};

// Runs the encoder of `view` over token embeddings `tok` ([T+1, d], CLS row
// first). The k-mer view pools with tanh(W s_CLS + b); the BPE view takes
// the mean over the non-CLS positions.
ViewOutput encode_view(ad::Graph& g, const ad::ParamSet& p, const ModelConfig& cfg, View view, ad::Var tok);

struct FusionOutput {
    ad::Var h_mod;
    ad::Var gamma;  // invalid unless a FiLM variant
    ad::Var beta;
};

FusionOutput fuse(ad::Graph& g, const ad::ParamSet& p, const ModelConfig& cfg, ad::Var h_kmer, ad::Var h_bpe);

struct MoeOutput {
    ad::Var h_moe;
    ad::Var gate;  // [1, N]
    std::vector<ad::Var> experts;
};

// Gate conditioned on `cond`; with use_moe off h_moe is h_mod itself.
MoeOutput moe(ad::Graph& g, const ad::ParamSet& p, const ModelConfig& cfg, ad::Var h_mod, ad::Var cond);

// Linear2(ReLU(Dropout(Linear20(h)))); dropout active iff rng is non-null.
ad::Var classifier_head(ad::Graph& g, const ad::ParamSet& p, const ModelConfig& cfg, ad::Var h,
                        std::mt19937_64* dropout_rng);

struct ForwardOptions {
    std::mt19937_64* dropout_rng = nullptr;
    // Replacement token-embedding outputs ([T+1, d]); used to differentiate
    // with respect to the embedding layer.
    std::optional<ad::Var> kmer_tokens;
    std::optional<ad::Var> bpe_tokens;
    // Skip the MoE and classifier stages; moe and logits stay unbound.
    bool stop_after_fusion = false;
};

struct GraphForward {
    ad::Var kmer_tokens, bpe_tokens;
    ViewOutput kmer, bpe;
    FusionOutput fusion;
    MoeOutput moe;
    ad::Var logits;  // [1, 2]
};

GraphForward build_forward(ad::Graph& g, const ad::ParamSet& p, const ModelConfig& cfg, const EncodedSample& s,
                           const ForwardOptions& opts = {});

// Head-averaged attention of the CLS query over all T+1 key positions.
std::vector<double> cls_attention_row(const ad::Graph& g, int attention_node);

// ---------------------------------------------------------------------------
// Value-level operations, each on a private graph.

struct KmerViewResult {
    std::vector<double> h;
    std::vector<double> attention;  // T+1 entries, index 0 is CLS
};

KmerViewResult encode_kmer_view(const seqdata::TokenSeq& tokens, const ad::ParamSet& p, const ModelConfig& cfg);
std::vector<double> encode_bpe_view(const seqdata::TokenSeq& tokens, const ad::ParamSet& p, const ModelConfig& cfg);

struct FilmResult {
    std::vector<double> h_mod, gamma, beta;
};
FilmResult film_modulate(const std::vector<double>& h_bpe, const std::vector<double>& h_kmer, const ad::ParamSet& p,
                         const ModelConfig& cfg);

struct MoeResult {
    std::vector<double> h_moe, gate;
    std::vector<std::vector<double>> experts;
};
MoeResult moe_forward(const std::vector<double>& h_mod, const std::vector<double>& h_bpe, const ad::ParamSet& p,
                      const ModelConfig& cfg);

std::vector<double> classify(const std::vector<double>& h_moe, const ad::ParamSet& p, const ModelConfig& cfg,
                             std::mt19937_64* dropout_rng = nullptr);

struct ModelTrace {
    std::vector<double> h_kmer, h_bpe, gamma, beta, h_mod, gate;
    std::vector<std::vector<double>> experts;
    std::vector<double> h_moe, logits, probs;
    std::vector<double> kmer_attention, bpe_attention;

    // Same boundary rule as the metrics: P(positive) >= 0.5 predicts 1.
    int prediction() const { return probs.at(1) >= 0.5 ? 1 : 0; }
    double confidence() const { return probs.at(0) > probs.at(1) ? probs.at(0) : probs.at(1); }
    double p_positive() const { return probs.at(1); }
};

ModelTrace model_forward(const EncodedSample& s, const ad::ParamSet& p, const ModelConfig& cfg,
                         std::mt19937_64* dropout_rng = nullptr);
ModelTrace model_forward(std::string_view sequence, const Tokenizers& tok, const ad::ParamSet& p,
                         const ModelConfig& cfg, std::mt19937_64* dropout_rng = nullptr);

std::vector<double> softmax2(const std::vector<double>& logits);

}  // namespace mdfm::model
