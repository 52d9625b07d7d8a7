#include "mdfm/model/params.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace mdfm::model {
namespace {

using Layout = std::vector<std::pair<std::string, ad::Shape>>;

void add_linear(Layout& out, const std::string& prefix, std::size_t in, std::size_t outd) {
    out.emplace_back(prefix + ".w", ad::Shape{in, outd});
    out.emplace_back(prefix + ".b", ad::Shape{outd});
}

void add_norm(Layout& out, const std::string& prefix, std::size_t n) {
    out.emplace_back(prefix + ".g", ad::Shape{n});
    out.emplace_back(prefix + ".b", ad::Shape{n});
}

void add_transformer_layer(Layout& out, const std::string& prefix, std::size_t width, std::size_t ff) {
    for (const char* p : {".q", ".k", ".v", ".o"}) add_linear(out, prefix + p, width, width);
    add_norm(out, prefix + ".ln1", width);
    add_linear(out, prefix + ".ff1", width, ff);
    add_linear(out, prefix + ".ff2", ff, width);
    add_norm(out, prefix + ".ln2", width);
}

void add_encoder(Layout& out, const std::string& view, std::size_t vocab, std::size_t positions,
                 const ModelConfig& cfg) {
    out.emplace_back(view + ".tok_emb", ad::Shape{vocab, cfg.d});
    out.emplace_back(view + ".pos_emb", ad::Shape{positions, cfg.d});
    add_norm(out, view + ".emb_ln", cfg.d);
    for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
        add_transformer_layer(out, view + ".L" + std::to_string(l), cfg.d, cfg.encoder_ff);
    }
}

bool ends_with(const std::string& s, const char* suffix) {
    const std::string_view sv(suffix);
    return s.size() >= sv.size() && s.compare(s.size() - sv.size(), sv.size(), sv) == 0;
}

}  // namespace

Layout param_layout(const ModelConfig& cfg) {
    cfg.validate();
    Layout out;
    const std::size_t d = cfg.d;
    add_encoder(out, "kmer", cfg.kmer_vocab(), cfg.kmer_positions(), cfg);
    add_linear(out, "kmer.pooler", d, d);
    if (cfg.has_bpe_view()) add_encoder(out, "bpe", cfg.bpe_vocab, cfg.bpe_positions(), cfg);

    switch (cfg.fusion) {
        case Fusion::film:
        case Fusion::reverse_film:
            add_linear(out, "film.l1", d, d);
            add_linear(out, "film.l2", d, 2 * d);
            break;
        case Fusion::concat: add_linear(out, "fuse", 2 * d, d); break;
        case Fusion::single_encoder: break;
    }

    if (cfg.use_moe) {
        add_linear(out, "gate", d, cfg.n_experts);
        for (std::size_t i = 0; i < cfg.n_experts; ++i) {
            const std::string p = "moe.e" + std::to_string(i);
            add_transformer_layer(out, p, cfg.segment_width(), cfg.effective_expert_ff());
            add_norm(out, p + ".out_ln", d);
        }
        add_linear(out, "moe.out", d, d);
    }

    add_linear(out, "cls.l1", d, cfg.classifier_hidden);
    add_linear(out, "cls.l2", cfg.classifier_hidden, 2);
    return out;
}

ad::ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uniform = [&rng](double a) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        return a * (2.0 * u - 1.0);
    };

    ad::ParamSet params;
    for (auto& [name, shape] : param_layout(cfg)) {
        ad::Tensor t(shape, 0.0);
        if (ends_with(name, ".g")) {
            t.fill(1.0);
        } else if (shape.size() == 2) {
            // Embedding tables are indexed by row, so their fan-in is the width.
            const bool table = ends_with(name, "_emb");
            const double fan_in = static_cast<double>(table ? shape[1] : shape[0]);
            const double a = 1.0 / std::sqrt(fan_in);
            for (auto& x : t.data()) x = uniform(a);
        } else if (name == "film.l2.b") {
            for (std::size_t i = 0; i < cfg.d; ++i) t[i] = 1.0;
        }
        params.add(name, std::move(t));
    }
    return params;
}

void check_params(const ModelConfig& cfg, const ad::ParamSet& params) {
    const auto layout = param_layout(cfg);
    if (layout.size() != params.size()) {
        throw std::invalid_argument("parameter set has " + std::to_string(params.size()) + " tensors, config implies " +
                                    std::to_string(layout.size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& [name, value] = params.entry(i);
        if (name != layout[i].first || value.shape() != layout[i].second) {
            throw std::invalid_argument("parameter " + std::to_string(i) + " is " + name + " " +
                                        ad::shape_str(value.shape()) + ", config implies " + layout[i].first + " " +
                                        ad::shape_str(layout[i].second));
        }
        if (!value.all_finite()) throw std::invalid_argument("parameter " + name + " holds a non-finite value");
    }
}

}  // namespace mdfm::model
