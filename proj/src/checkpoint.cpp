#include "dpanet/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace dpanet {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'D', 'P', 'A', 'N'};
constexpr std::uint16_t kVersion = 1;

template <typename U>
void put(std::string& out, U v) {
    char bytes[sizeof(U)];
    std::memcpy(bytes, &v, sizeof(U));
    out.append(bytes, sizeof(U));
}

class Reader {
   public:
    Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

    template <typename U>
    U get(const char* what) {
        U v;
        std::memcpy(&v, take(sizeof(U), what), sizeof(U));
        return v;
    }
    const char* take(std::size_t n, const char* what) {
        if (data_.size() - pos_ < n)
            throw FormatError(origin_ + ": truncated while reading " + what + " at byte " + std::to_string(pos_));
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }
    bool done() const { return pos_ == data_.size(); }
    std::size_t position() const { return pos_; }

   private:
    std::string data_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ParamStore<float>& params, const std::filesystem::path& path) {
    std::string out(kMagic, 4);
    put<std::uint16_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, 4);
        const Shape s = t.shape();
        for (int d : {s.n, s.c, s.h, s.w}) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        out.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(float));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

ParamStore<float> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
    Reader r(std::string(std::istreambuf_iterator<char>(f), {}), path.string());

    if (std::memcmp(r.take(4, "magic"), kMagic, 4) != 0)
        throw FormatError(path.string() + ": not a checkpoint (bad magic)");
    const auto version = r.get<std::uint16_t>("version");
    if (version != kVersion)
        throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>("entry count");

    ParamStore<float> store;
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto len = r.get<std::uint32_t>("name length");
        std::string name(r.take(len, "name"), len);
        const auto rank = r.get<std::uint32_t>("rank");
        if (rank != 4)
            throw FormatError(path.string() + ": entry " + name + " has rank " + std::to_string(rank) +
                              ", expected 4");
        std::uint32_t dims[4];
        for (auto& d : dims) d = r.get<std::uint32_t>("dims");
        const Shape s{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                      static_cast<int>(dims[3])};
        std::vector<float> values(s.numel());
        std::memcpy(values.data(), r.take(values.size() * sizeof(float), "values"), values.size() * sizeof(float));
        if (store.contains(name)) throw FormatError(path.string() + ": duplicate entry " + name);
        store.add(std::move(name), Tensor<float>(s, std::move(values), true));
    }
    if (!r.done())
        throw FormatError(path.string() + ": trailing bytes after entry " + std::to_string(count));
    return store;
}

void validate_parameters(const ParamStore<float>& params, const NetConfig& config) {
    constexpr std::size_t kShown = 8;
    std::vector<std::string> problems;
    std::size_t expected_found = 0;
    for (const ParamSpec& spec : expected_parameters(config)) {
        if (!params.contains(spec.name)) {
            problems.push_back("missing " + spec.name + " (" + spec.shape.str() + ")");
            continue;
        }
        ++expected_found;
        const Shape got = params.get(spec.name).shape();
        if (got != spec.shape)
            problems.push_back("shape mismatch for " + spec.name + ": stored " + got.str() + ", expected " +
                               spec.shape.str());
    }
    if (expected_found != params.size()) {
        std::vector<std::string> known;
        for (const ParamSpec& spec : expected_parameters(config)) known.push_back(spec.name);
        for (const auto& [name, t] : params)
            if (std::find(known.begin(), known.end(), name) == known.end())
                problems.push_back("unexpected " + name + " (" + t.shape().str() + ")");
    }
    if (problems.empty()) return;
    std::string text = "checkpoint does not match the configuration:";
    for (std::size_t i = 0; i < std::min(problems.size(), kShown); ++i) text += "\n  " + problems[i];
    if (problems.size() > kShown) text += "\n  ... and " + std::to_string(problems.size() - kShown) + " more";
    throw MismatchError(text);
}

ParamStore<float> load_checkpoint(const std::filesystem::path& path, const NetConfig& config) {
    ParamStore<float> store = read_checkpoint(path);
    validate_parameters(store, config);
    // Re-order to the configuration's canonical order.
    ParamStore<float> ordered;
    for (const ParamSpec& spec : expected_parameters(config)) ordered.add(spec.name, store.get(spec.name));
    return ordered;
}

}  // namespace dpanet
