#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "remar/keyvalue.hpp"

namespace remar {

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Writes dir/run_manifest.txt: command, seed, the full config, and a
/// SHA-256 line per output file (paths relative to dir where possible).
void write_run_manifest(const std::filesystem::path& dir, const std::string& command,
                        std::uint64_t seed, const KeyValues& config,
                        const std::vector<std::filesystem::path>& outputs);

}  // namespace remar
