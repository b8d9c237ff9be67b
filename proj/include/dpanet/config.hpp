#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dpanet/dataset.hpp"
#include "dpanet/model.hpp"
#include "dpanet/train.hpp"

namespace dpanet {

/// Everything a command needs. `seed` is copied into the training and
/// synthesis settings by resolve().
struct RunConfig {
    NetConfig net = NetConfig::desk();
    TrainConfig train;
    SynthConfig synth;
    std::uint64_t seed = 0;
    std::string data;
    std::string out;
    std::string checkpoint;

    /// Assigns one key from its text form. Unknown keys and malformed
    /// values throw ConfigError.
    void set(std::string_view key, std::string_view value);
    std::string get(std::string_view key) const;

    /// Reads "key = value" lines; '#' starts a comment, blank lines are
    /// skipped. Errors carry the file name and line number.
    void apply_file(const std::filesystem::path& path);

    /// Propagates the seed and checks the network, training and synthesis
    /// settings.
    void resolve();

    /// Every key in schema order, one "key = value" line each. Feeding the
    /// text back through apply_file reproduces the configuration.
    std::string to_text() const;
};

/// Known keys in schema order.
const std::vector<std::string>& config_keys();

}  // namespace dpanet
