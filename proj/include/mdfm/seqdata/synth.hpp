#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "json.hpp"
#include "mdfm/seqdata/dataset.hpp"

namespace mdfm::seqdata {

// Two-element planted-motif design: positives carry `core_motif` at
// `core_pos` and `tract` at `tract_pos` over a uniform background;
// negatives are uniform with both windows scrubbed of exact matches.
struct PlantedSpec {
    std::string name = "planted";
    std::size_t n_pos = 1000;
    std::size_t n_neg = 1000;
    // Test split sizes; defaults to the train sizes when zero.
    std::size_t test_n_pos = 0;
    std::size_t test_n_neg = 0;
    std::size_t length = 41;
    std::string core_motif = "GAGG";
    std::size_t core_pos = 18;
    std::string tract = "AAAA";
    std::size_t tract_pos = 8;
    std::uint64_t seed = 7;

    nlohmann::json to_json() const;
    static PlantedSpec from_json(const nlohmann::json& j);
};

// Deterministic for a fixed spec. Throws std::invalid_argument when a
// window does not fit, the windows overlap or a motif is not ACGT.
Dataset synth_planted_dataset(const PlantedSpec& spec);

}  // namespace mdfm::seqdata
