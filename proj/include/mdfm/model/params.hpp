#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mdfm/autodiff/param_set.hpp"
#include "mdfm/model/config.hpp"

namespace mdfm::model {

// Names of the token-embedding tables, the targets of adversarial
// perturbation.
inline constexpr const char* kKmerTokenTable = "kmer.tok_emb";
inline constexpr const char* kBpeTokenTable = "bpe.tok_emb";

// Every parameter tensor the configuration implies, in canonical order.
std::vector<std::pair<std::string, ad::Shape>> param_layout(const ModelConfig& cfg);

// Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))
// for weights and embeddings; biases and layer-norm shifts start at 0,
// layer-norm scales at 1. The FiLM output bias starts at [1..1, 0..0] so
// modulation begins as the identity.
ad::ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed);

// Throws std::invalid_argument if `params` does not match the layout of
// `cfg` exactly (names, order and shapes) or holds a non-finite value.
void check_params(const ModelConfig& cfg, const ad::ParamSet& params);

}  // namespace mdfm::model
