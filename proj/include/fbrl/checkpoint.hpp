#pragma once

#include "fbrl/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <vector>

namespace fbrl::io {

// Versioned binary container: JSON shape-metadata header followed by raw
// double arrays. Round-trips bit-exactly.
void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                      const std::vector<const Vec*>& arrays);

struct Checkpoint {
  nlohmann::json header;
  std::vector<Vec> arrays;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);

std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace fbrl::io
