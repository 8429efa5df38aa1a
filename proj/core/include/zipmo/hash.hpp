#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace zipmo {

/// 64-bit FNV-1a; used to fingerprint checkpoints, not for security.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
std::string hash_file(const std::filesystem::path& path);

/// SplitMix64 step; derives independent sub-seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace zipmo
