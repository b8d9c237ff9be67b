#pragma once

#include <filesystem>

#include "dpanet/model.hpp"

namespace dpanet {

/// Binary layout, all integers little-endian:
///
///   "DPAN"  u16 version = 1  u32 entry_count
///   per entry: u32 name_len, name bytes (UTF-8), u32 rank = 4,
///              rank x u32 dims, prod(dims) x float32 values
void save_checkpoint(const ParamStore<float>& params, const std::filesystem::path& path);

/// Reads every entry. Throws FormatError on bad magic, unknown version or
/// truncation; nothing is returned in that case.
ParamStore<float> read_checkpoint(const std::filesystem::path& path);

/// Reads and checks names and shapes against expected_parameters(config).
/// Throws MismatchError naming each missing, extra or reshaped entry.
ParamStore<float> load_checkpoint(const std::filesystem::path& path, const NetConfig& config);

/// The validation step of load_checkpoint on its own.
void validate_parameters(const ParamStore<float>& params, const NetConfig& config);

}  // namespace dpanet
