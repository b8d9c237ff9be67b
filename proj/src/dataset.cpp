#include "dpanet/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "dpanet/errors.hpp"
#include "dpanet/image_io.hpp"

namespace dpanet {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct Members {
    fs::path left, right, sharp;
};

std::map<std::string, Members> scan(const fs::path& root) {
    if (!fs::is_directory(root)) throw std::runtime_error("dataset directory " + root.string() + " does not exist");
    std::map<std::string, Members> found;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
        const std::string stem = entry.path().stem().string();
        if (stem.size() < 3 || stem[stem.size() - 2] != '_') continue;
        const std::string id = stem.substr(0, stem.size() - 2);
        switch (stem.back()) {
            case 'L': found[id].left = entry.path(); break;
            case 'R': found[id].right = entry.path(); break;
            case 'S': found[id].sharp = entry.path(); break;
            default: break;
        }
    }
    return found;
}

std::vector<Triplet> load(const fs::path& root, bool need_sharp) {
    std::vector<Triplet> out;
    for (const auto& [id, m] : scan(root)) {
        std::string missing;
        if (m.left.empty()) missing += " " + id + "_L.png";
        if (m.right.empty()) missing += " " + id + "_R.png";
        if (need_sharp && m.sharp.empty()) missing += " " + id + "_S.png";
        if (!missing.empty())
            throw FormatError("incomplete sample '" + id + "' in " + root.string() + ": missing" + missing);
        Triplet t{id, read_png(m.left), read_png(m.right), {}};
        if (!m.sharp.empty()) t.sharp = read_png(m.sharp);
        if (t.left.shape() != t.right.shape() || (t.sharp.defined() && t.sharp.shape() != t.left.shape()))
            throw DimensionError("sample '" + id + "': views have different sizes");
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace

void write_triplet(const fs::path& root, const Triplet& s) {
    fs::create_directories(root);
    write_png(root / (s.id + "_L.png"), s.left);
    write_png(root / (s.id + "_R.png"), s.right);
    write_png(root / (s.id + "_S.png"), s.sharp);
}

std::vector<Triplet> read_dataset(const fs::path& root) { return load(root, true); }

std::vector<Triplet> read_pairs(const fs::path& root) { return load(root, false); }

std::string sample_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", index);
    return buf;
}

Triplet synth_sample(const SynthConfig& cfg, int index) {
    if (cfg.min_regions < 1 || cfg.max_regions < cfg.min_regions)
        throw ConfigError("region counts must satisfy 1 <= min_regions <= max_regions");
    const std::uint64_t seed = splitmix64(cfg.seed ^ splitmix64(static_cast<std::uint64_t>(index)));
    const int span = cfg.max_regions - cfg.min_regions + 1;
    const int regions = cfg.min_regions + static_cast<int>(splitmix64(seed) % static_cast<std::uint64_t>(span));
    Scene scene = generate_scene(seed, cfg.height, cfg.width, regions, cfg.z_max);
    DpRender dp = render_dp_pair(scene, cfg.lens);
    return {sample_id(index), dp.left, dp.right, scene.sharp};
}

void generate_dataset(const SynthConfig& cfg, const fs::path& root) {
    if (cfg.count < 1) throw ConfigError("count must be >= 1");
    fs::create_directories(root);
    for (int i = 0; i < cfg.count; ++i) write_triplet(root, synth_sample(cfg, i));

    nlohmann::ordered_json manifest;
    manifest["count"] = cfg.count;
    manifest["height"] = cfg.height;
    manifest["width"] = cfg.width;
    manifest["seed"] = cfg.seed;
    manifest["min_regions"] = cfg.min_regions;
    manifest["max_regions"] = cfg.max_regions;
    manifest["z_max"] = cfg.z_max;
    manifest["lens"] = {{"focal_depth", cfg.lens.focal_depth},
                        {"gain", cfg.lens.gain},
                        {"max_radius", cfg.lens.max_radius}};
    manifest["layout"] = "<id>_L.png, <id>_R.png, <id>_S.png (8-bit RGB)";
    std::ofstream(root / "manifest.json") << manifest.dump(2) << "\n";
}

}  // namespace dpanet
