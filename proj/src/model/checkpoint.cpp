#include "mdfm/model/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "mdfm/common/parallel.hpp"
#include "mdfm/model/params.hpp"

namespace mdfm::model {
namespace {

constexpr const char* kMagic = "MDFM-CKPT 1";

std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    else return __builtin_bswap64(v);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    check_params(ckpt.config, ckpt.params);
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& [name, t] : ckpt.params) tensors.push_back({{"name", name}, {"shape", t.shape()}});
    const nlohmann::json header = {{"config", ckpt.config.to_json()},
                                   {"config_hash", config_hash(ckpt.config)},
                                   {"seed", ckpt.seed},
                                   {"tokenizers", ckpt.tokenizers.to_json()},
                                   {"training", ckpt.training},
                                   {"tensors", tensors}};

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out << kMagic << '\n' << header.dump() << '\n';
    std::vector<std::uint64_t> buf;
    for (const auto& [name, t] : ckpt.params) {
        buf.resize(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) buf[i] = to_le(std::bit_cast<std::uint64_t>(t[i]));
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 8));
    }
    if (!out) throw std::runtime_error("error writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
    std::string magic, header_line;
    if (!std::getline(in, magic) || magic != kMagic) {
        throw std::runtime_error(path.string() + " is not a checkpoint (bad magic line)");
    }
    if (!std::getline(in, header_line)) throw std::runtime_error(path.string() + ": missing checkpoint header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": malformed checkpoint header: " + e.what());
    }

    Checkpoint ckpt;
    ckpt.config = ModelConfig::from_json(header.at("config"));
    if (header.at("config_hash").get<std::string>() != config_hash(ckpt.config)) {
        throw std::runtime_error(path.string() + ": stored config hash does not match stored config");
    }
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.tokenizers = Tokenizers::from_json(header.at("tokenizers"));
    ckpt.training = header.value("training", nlohmann::json::object());

    std::vector<std::uint64_t> buf;
    for (const auto& entry : header.at("tensors")) {
        ad::Shape shape = entry.at("shape").get<ad::Shape>();
        ad::Tensor t(shape, 0.0);
        buf.resize(t.size());
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 8));
        if (in.gcount() != static_cast<std::streamsize>(buf.size() * 8)) {
            throw std::runtime_error(path.string() + ": truncated parameter block");
        }
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<double>(to_le(buf[i]));
        ckpt.params.add(entry.at("name").get<std::string>(), std::move(t));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path.string() + ": trailing bytes");
    check_params(ckpt.config, ckpt.params);
    return ckpt;
}

std::string to_string(Stage s) {
    switch (s) {
        case Stage::raw: return "raw";
        case Stage::post_encoder: return "post_encoder";
        case Stage::post_film: return "post_film";
        case Stage::post_moe: return "post_moe";
    }
    return "raw";
}

Stage stage_from_string(const std::string& s) {
    if (s == "raw") return Stage::raw;
    if (s == "post_encoder") return Stage::post_encoder;
    if (s == "post_film") return Stage::post_film;
    if (s == "post_moe") return Stage::post_moe;
    throw std::invalid_argument("unknown stage '" + s + "' (expected raw, post_encoder, post_film or post_moe)");
}

void export_stage_embeddings(const std::vector<seqdata::DnaSample>& samples, const Checkpoint& ckpt, Stage stage,
                             const std::filesystem::path& path, std::size_t jobs) {
    ad::ParamSet fresh;
    if (stage == Stage::raw) fresh = init_params(ckpt.config, ckpt.seed);
    const ad::ParamSet& params = stage == Stage::raw ? fresh : ckpt.params;

    std::vector<std::vector<double>> rows(samples.size());
    parallel_for(samples.size(), jobs, [&](std::size_t i) {
        ModelTrace t = model_forward(samples[i].sequence, ckpt.tokenizers, params, ckpt.config);
        switch (stage) {
            case Stage::raw:
            case Stage::post_encoder: rows[i] = std::move(t.h_kmer); break;
            case Stage::post_film: rows[i] = std::move(t.h_mod); break;
            case Stage::post_moe: rows[i] = std::move(t.h_moe); break;
        }
    });

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    char buf[32];
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out << samples[i].id << '\t' << samples[i].label;
        for (double v : rows[i]) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << '\t' << buf;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("error writing " + path.string());
}

}  // namespace mdfm::model
