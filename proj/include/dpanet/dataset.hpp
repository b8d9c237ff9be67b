#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpanet/synth.hpp"

namespace dpanet {

/// One registered sample. `sharp` is undefined for inference-only pairs.
struct Triplet {
    std::string id;
    Tensor<float> left;
    Tensor<float> right;
    Tensor<float> sharp;
};

/// root/<id>_L.png, root/<id>_R.png, root/<id>_S.png. Creates root.
void write_triplet(const std::filesystem::path& root, const Triplet& sample);

/// Every complete triplet under root, sorted by id. A partial triplet is an
/// error naming its id and the missing member.
std::vector<Triplet> read_dataset(const std::filesystem::path& root);

/// Like read_dataset but only <id>_L / <id>_R are required; sharp is read
/// when present.
std::vector<Triplet> read_pairs(const std::filesystem::path& root);

struct SynthConfig {
    int count = 64;
    int height = 64;
    int width = 64;
    int min_regions = 2;
    int max_regions = 5;
    double z_max = 8.0;
    LensModel lens;
    std::uint64_t seed = 0;
};

/// Zero-padded decimal id, e.g. 7 -> "0007".
std::string sample_id(int index);

/// Sample `index` of the synthetic set; depends only on (config, index).
Triplet synth_sample(const SynthConfig& config, int index);

/// Writes config.count triplets and root/manifest.json.
void generate_dataset(const SynthConfig& config, const std::filesystem::path& root);

}  // namespace dpanet
