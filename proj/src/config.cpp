#include "dpanet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <type_traits>

#include "dpanet/errors.hpp"

namespace dpanet {

namespace {

template <typename N>
N parse_number(std::string_view key, std::string_view text) {
    N v{};
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size() || text.empty())
        throw ConfigError("invalid value '" + std::string(text) + "' for " + std::string(key));
    return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
    if (text == "true" || text == "1" || text == "on") return true;
    if (text == "false" || text == "0" || text == "off") return false;
    throw ConfigError("invalid value '" + std::string(text) + "' for " + std::string(key) + " (expected true/false)");
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

struct Key {
    std::string name;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define DPANET_INT_KEY(key, expr)                                                                              \
    Key {                                                                                                      \
        key, [](RunConfig& c, std::string_view v) { expr = parse_number<std::remove_reference_t<decltype(expr)>>(key, v); }, \
            [](const RunConfig& c) { return std::to_string(expr); }                                           \
    }
#define DPANET_REAL_KEY(key, expr)                                                                             \
    Key {                                                                                                      \
        key, [](RunConfig& c, std::string_view v) { expr = parse_number<double>(key, v); },                   \
            [](const RunConfig& c) { return format_double(expr); }                                            \
    }
#define DPANET_BOOL_KEY(key, expr)                                                                             \
    Key {                                                                                                      \
        key, [](RunConfig& c, std::string_view v) { expr = parse_bool(key, v); },                             \
            [](const RunConfig& c) { return std::string(expr ? "true" : "false"); }                           \
    }
#define DPANET_TEXT_KEY(key, expr)                                                                             \
    Key {                                                                                                      \
        key, [](RunConfig& c, std::string_view v) { expr = std::string(v); },                                 \
            [](const RunConfig& c) { return expr; }                                                           \
    }

const std::vector<Key>& schema() {
    static const std::vector<Key> keys = {
        DPANET_INT_KEY("seed", c.seed),
        DPANET_TEXT_KEY("data", c.data),
        DPANET_TEXT_KEY("out", c.out),
        DPANET_TEXT_KEY("checkpoint", c.checkpoint),
        // network
        DPANET_INT_KEY("blocks", c.net.blocks),
        DPANET_INT_KEY("base_channels", c.net.base_channels),
        DPANET_INT_KEY("radius", c.net.radius),
        DPANET_INT_KEY("taps", c.net.taps),
        Key{"loss", [](RunConfig& c, std::string_view v) { c.net.loss = parse_loss_mode(v); },
            [](const RunConfig& c) { return std::string(to_string(c.net.loss)); }},
        DPANET_BOOL_KEY("share_encoder", c.net.share_encoder),
        DPANET_BOOL_KEY("use_pfem", c.net.use_pfem),
        DPANET_BOOL_KEY("use_eam", c.net.use_eam),
        Key{"eam_context", [](RunConfig& c, std::string_view v) { c.net.eam_context = parse_eam_context(v); },
            [](const RunConfig& c) { return std::string(to_string(c.net.eam_context)); }},
        DPANET_BOOL_KEY("use_dam", c.net.use_dam),
        DPANET_BOOL_KEY("skip_pre_eam", c.net.skip_pre_eam),
        // training
        DPANET_REAL_KEY("lr", c.train.initial_lr),
        DPANET_INT_KEY("lr_half_period", c.train.lr_half_period),
        DPANET_INT_KEY("epochs", c.train.total_epochs),
        DPANET_INT_KEY("batch_size", c.train.batch_size),
        DPANET_INT_KEY("patch_size", c.train.patch_size),
        DPANET_REAL_KEY("loss_epsilon", c.train.loss_epsilon),
        DPANET_REAL_KEY("val_fraction", c.train.val_fraction),
        // synthetic data
        DPANET_INT_KEY("count", c.synth.count),
        DPANET_INT_KEY("height", c.synth.height),
        DPANET_INT_KEY("width", c.synth.width),
        DPANET_INT_KEY("min_regions", c.synth.min_regions),
        DPANET_INT_KEY("max_regions", c.synth.max_regions),
        DPANET_REAL_KEY("z_max", c.synth.z_max),
        DPANET_REAL_KEY("focal_depth", c.synth.lens.focal_depth),
        DPANET_REAL_KEY("blur_gain", c.synth.lens.gain),
        DPANET_REAL_KEY("max_radius", c.synth.lens.max_radius),
    };
    return keys;
}

const Key& find_key(std::string_view name) {
    for (const Key& k : schema())
        if (k.name == name) return k;
    throw ConfigError("unknown configuration key '" + std::string(name) + "'");
}

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const Key& k : schema()) n.push_back(k.name);
        return n;
    }();
    return names;
}

void RunConfig::set(std::string_view key, std::string_view value) { find_key(key).set(*this, trim(value)); }

std::string RunConfig::get(std::string_view key) const { return find_key(key).get(*this); }

void RunConfig::apply_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        std::string_view s = line;
        if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
        s = trim(s);
        if (s.empty()) continue;
        const auto eq = s.find('=');
        const std::string where = path.string() + ":" + std::to_string(number) + ": ";
        if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
        try {
            set(trim(s.substr(0, eq)), s.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
}

void RunConfig::resolve() {
    train.seed = seed;
    synth.seed = seed;
    net.validate();
    train.validate(net);
    if (synth.count < 0) throw ConfigError("count must be >= 0");
    if (synth.height <= 0 || synth.width <= 0 || synth.height % 8 || synth.width % 8)
        throw ConfigError("height and width must be positive multiples of 8");
    if (synth.min_regions < 1 || synth.max_regions < synth.min_regions)
        throw ConfigError("need 1 <= min_regions <= max_regions");
    if (!(synth.z_max >= 1.0)) throw ConfigError("z_max must be >= 1");
    if (!(synth.lens.gain >= 0) || !(synth.lens.max_radius >= 0))
        throw ConfigError("blur_gain and max_radius must be non-negative");
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const Key& k : schema()) out += k.name + " = " + k.get(*this) + "\n";
    return out;
}

}  // namespace dpanet
