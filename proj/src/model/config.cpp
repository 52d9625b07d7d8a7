#include "mdfm/model/config.hpp"

#include <stdexcept>

#include "mdfm/common/hash.hpp"
#include "mdfm/seqdata/tokenize.hpp"

namespace mdfm::model {

std::string to_string(Fusion f) {
    switch (f) {
        case Fusion::film: return "film";
        case Fusion::reverse_film: return "reverse_film";
        case Fusion::concat: return "concat";
        case Fusion::single_encoder: return "single_encoder";
    }
    return "film";
}

Fusion fusion_from_string(const std::string& s) {
    if (s == "film") return Fusion::film;
    if (s == "reverse_film") return Fusion::reverse_film;
    if (s == "concat") return Fusion::concat;
    if (s == "single_encoder") return Fusion::single_encoder;
    throw std::invalid_argument("unknown fusion variant '" + s + "'");
}

std::size_t ModelConfig::kmer_vocab() const { return seqdata::kmer_vocab_size(k); }

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid model config: " + msg); };
    if (d == 0 || k == 0 || encoder_heads == 0 || segments == 0 || expert_heads == 0 || n_experts == 0)
        fail("sizes must be positive");
    if (k > seq_len) fail("k exceeds sequence length");
    if (k > 12) fail("k above 12 is not supported");
    if (encoder_layers == 0) fail("encoder_layers must be positive");
    if (encoder_ff == 0 || classifier_hidden == 0) fail("feed-forward widths must be positive");
    if (d % encoder_heads != 0) fail("d must be divisible by encoder_heads");
    if (d % segments != 0) fail("d must be divisible by segments");
    if (segment_width() % expert_heads != 0) fail("d / segments must be divisible by expert_heads");
    if (bpe_vocab < seqdata::kNumSpecials + 4) fail("bpe_vocab must be at least 7");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"seq_len", seq_len},
            {"d", d},
            {"k", k},
            {"encoder_layers", encoder_layers},
            {"encoder_heads", encoder_heads},
            {"encoder_ff", encoder_ff},
            {"bpe_vocab", bpe_vocab},
            {"n_experts", n_experts},
            {"segments", segments},
            {"expert_heads", expert_heads},
            {"expert_ff", expert_ff},
            {"classifier_hidden", classifier_hidden},
            {"dropout", dropout},
            {"ln_eps", ln_eps},
            {"fusion", to_string(fusion)},
            {"use_moe", use_moe}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.seq_len = j.value("seq_len", c.seq_len);
    c.d = j.value("d", c.d);
    c.k = j.value("k", c.k);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.encoder_heads = j.value("encoder_heads", c.encoder_heads);
    c.encoder_ff = j.value("encoder_ff", c.encoder_ff);
    c.bpe_vocab = j.value("bpe_vocab", c.bpe_vocab);
    c.n_experts = j.value("n_experts", c.n_experts);
    c.segments = j.value("segments", c.segments);
    c.expert_heads = j.value("expert_heads", c.expert_heads);
    c.expert_ff = j.value("expert_ff", c.expert_ff);
    c.classifier_hidden = j.value("classifier_hidden", c.classifier_hidden);
    c.dropout = j.value("dropout", c.dropout);
    c.ln_eps = j.value("ln_eps", c.ln_eps);
    if (j.contains("fusion")) c.fusion = fusion_from_string(j.at("fusion").get<std::string>());
    c.use_moe = j.value("use_moe", c.use_moe);
    return c;
}

std::string config_hash(const ModelConfig& cfg) { return hex64(fnv1a(cfg.to_json().dump())); }

}  // namespace mdfm::model
