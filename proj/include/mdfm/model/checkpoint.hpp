#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdfm/autodiff/param_set.hpp"
#include "mdfm/model/config.hpp"
#include "mdfm/model/network.hpp"

namespace mdfm::model {

struct Checkpoint {
    ModelConfig config;
    Tokenizers tokenizers;
    ad::ParamSet params;
    std::uint64_t seed = 0;
    nlohmann::json training = nlohmann::json::object();
};

// Layout: the line "MDFM-CKPT 1", one line of JSON header (config, its hash,
// seed, tokenizers, training metadata, tensor index), then every tensor as
// little-endian IEEE doubles in index order. Round trips are bit-exact.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws std::runtime_error on a malformed file and std::invalid_argument
// when the stored tensors do not match the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

enum class Stage { raw, post_encoder, post_film, post_moe };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

// One row per sample: id, label, then the stage vector. `raw` is the k-mer
// view pooled output of a freshly initialized model seeded with ckpt.seed;
// post_encoder the trained k-mer view output; post_film h_mod; post_moe h_moe.
void export_stage_embeddings(const std::vector<seqdata::DnaSample>& samples, const Checkpoint& ckpt, Stage stage,
                             const std::filesystem::path& path, std::size_t jobs = 1);

}  // namespace mdfm::model
