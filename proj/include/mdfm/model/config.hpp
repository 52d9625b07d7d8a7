#pragma once

#include <cstddef>
#include <string>

#include "json.hpp"

namespace mdfm::model {

// How the two views are combined before the MoE stage.
//   film           h_mod = gamma(h_bpe) * h_kmer + beta(h_bpe)
//   reverse_film   conditioning roles swapped
//   concat         h_mod = Linear([h_kmer, h_bpe])
//   single_encoder k-mer view only, h_mod = h_kmer
enum class Fusion { film, reverse_film, concat, single_encoder };

std::string to_string(Fusion f);
Fusion fusion_from_string(const std::string& s);

struct ModelConfig {
    std::size_t seq_len = 41;
    std::size_t d = 64;
    std::size_t k = 6;
    std::size_t encoder_layers = 2;
    std::size_t encoder_heads = 4;
    std::size_t encoder_ff = 128;
    // Rows of the BPE embedding table; the trained vocabulary may be smaller.
    std::size_t bpe_vocab = 512;
    std::size_t n_experts = 4;
    std::size_t segments = 4;
    std::size_t expert_heads = 4;
    // 0 selects 4 * (d / segments).
    std::size_t expert_ff = 0;
    std::size_t classifier_hidden = 20;
    double dropout = 0.5;
    double ln_eps = 1e-5;
    Fusion fusion = Fusion::film;
    bool use_moe = true;

    std::size_t kmer_vocab() const;
    // Token positions including the prepended CLS.
    std::size_t kmer_positions() const { return seq_len - k + 2; }
    std::size_t bpe_positions() const { return seq_len + 1; }
    std::size_t segment_width() const { return d / segments; }
    std::size_t effective_expert_ff() const { return expert_ff ? expert_ff : 4 * segment_width(); }
    bool has_bpe_view() const { return fusion != Fusion::single_encoder; }

    // Throws std::invalid_argument describing the first violated constraint.
    void validate() const;

    nlohmann::json to_json() const;
    // Missing keys keep their defaults.
    static ModelConfig from_json(const nlohmann::json& j);
};

// Stable hash of the canonical JSON form, used to pair checkpoints with
// configuration files.
std::string config_hash(const ModelConfig& cfg);

}  // namespace mdfm::model
