#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aog/graph.hpp"

namespace aog {

// Binary model format: magic "AOGM", format version u32, then a
// self-describing section table (tag, offset, size) covering META, ANDS,
// ORNS, LEAF, EDGE sections. Little-endian throughout, IEEE-754 doubles.
std::vector<std::uint8_t> serialize(const AndOrGraph& g);

// Throws VersionError on an unknown format version, CorruptModel on a
// malformed or truncated stream.
AndOrGraph deserialize(const std::vector<std::uint8_t>& bytes);

void save_model(const AndOrGraph& g, const std::string& path);
AndOrGraph load_model(const std::string& path);

}  // namespace aog
