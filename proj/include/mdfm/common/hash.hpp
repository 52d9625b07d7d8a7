#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace mdfm {

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t v);
std::string file_hash(const std::filesystem::path& path);

}  // namespace mdfm
