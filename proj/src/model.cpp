#include "dpanet/model.hpp"

#include <cmath>
#include <random>

namespace dpanet {

namespace {

constexpr double kPfemSlope = 0.1;

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// The two views' alignment kernels are distinct parameters drawn from one
// stream, so the network starts symmetric in its views.
std::string init_stream_key(std::string name) {
    if (!name.starts_with("eam") && !name.starts_with("dam")) return name;
    for (std::string_view side : {"_left.", "_right."})
        if (auto at = name.find(side); at != std::string::npos) return name.replace(at, side.size(), "_view.");
    return name;
}

void add_conv(std::vector<ParamSpec>& out, const std::string& name, int in_c, int out_c, int k,
              InitRule rule = InitRule::he_normal) {
    out.push_back({name + ".weight", {out_c, in_c, k, k}, rule});
    out.push_back({name + ".bias", {out_c, 1, 1, 1}, InitRule::zero});
}

void add_resblocks(std::vector<ParamSpec>& out, const std::string& name, int channels) {
    for (int r = 1; r <= 2; ++r) {
        const std::string base = name + ".res" + std::to_string(r);
        add_conv(out, base + ".conv1", channels, channels, 3);
        add_conv(out, base + ".conv2", channels, channels, 3);
    }
}

int eam_context_channels(const NetConfig& cfg, int features) {
    const int corr = displacement_count(cfg.radius);
    switch (cfg.eam_context) {
        case EamContext::corr_plus_features: return 2 * features + corr;
        case EamContext::features_only: return 2 * features;
        case EamContext::corr_only: return corr;
    }
    return 0;
}

int skip_channels(const NetConfig& cfg, int j) { return cfg.encoder_channels(cfg.blocks - j); }

int dam_decoder_channels(const NetConfig& cfg, int j) {
    return j == 1 ? cfg.encoder_channels(cfg.blocks - 1) : cfg.decoder_channels(j - 1);
}

template <typename T>
ConvParams<T> conv_of(const ParamStore<T>& p, const std::string& name, int stride, int padding) {
    return {p.get(name + ".weight"), p.get(name + ".bias"), stride, padding};
}

template <typename T>
DeformKernel<T> deform_of(const ParamStore<T>& p, const std::string& name) {
    return {p.get(name + ".weight"), p.get(name + ".bias")};
}

template <typename T>
Tensor<T> conv3(const Tensor<T>& x, const ParamStore<T>& p, const std::string& name) {
    return conv2d(x, conv_of(p, name, 1, 1));
}

template <typename T>
Tensor<T> resblock(const Tensor<T>& x, const ParamStore<T>& p, const std::string& name) {
    return add(x, conv3(relu(conv3(x, p, name + ".conv1")), p, name + ".conv2"));
}

template <typename T>
Tensor<T> conv_res_res(const Tensor<T>& x, const ParamStore<T>& p, const std::string& name) {
    Tensor<T> h = relu(conv3(x, p, name + ".conv"));
    h = resblock(h, p, name + ".res1");
    return resblock(h, p, name + ".res2");
}

void expect_shape(const Shape& got, const Shape& want, const std::string& stage) {
    if (got != want)
        throw DimensionError("schedule violation at " + stage + ": got " + got.str() + ", expected " +
                             want.str());
}

// Aligns `feature` with one offset head and one deformable convolution.
template <typename T>
Tensor<T> align_view(const Tensor<T>& feature, const Tensor<T>& context, const ParamStore<T>& p,
                     const std::string& module, const std::string& side, const NetConfig& cfg) {
    Tensor<T> raw = offset_head(context, conv_of(p, module + ".offset_" + side, 1, 1), cfg.taps);
    OffsetField<T> field = split_offset_field(raw);
    return deform_conv2d(feature, deform_of(p, module + ".deform_" + side), field.offsets,
                         field.modulation);
}

}  // namespace

NetConfig NetConfig::desk() {
    NetConfig c;
    c.radius = 4;
    return c;
}

NetConfig NetConfig::ablation(int id, NetConfig base) {
    switch (id) {
        case 1: base.share_encoder = false; break;
        case 2: base.use_pfem = false; break;
        case 3: base.loss = LossMode::mse; break;
        case 4: base.use_eam = false; break;
        case 5: base.eam_context = EamContext::features_only; break;
        case 6: base.eam_context = EamContext::corr_only; break;
        case 7: base.use_dam = false; break;
        default: throw ConfigError("ablation id must be in 1..7, got " + std::to_string(id));
    }
    return base;
}

int NetConfig::kernel() const {
    const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(taps))));
    return k;
}

int NetConfig::size_multiple() const {
    const int pyramid = 1 << (blocks - 2);
    return use_pfem ? std::max(pyramid, 4) : pyramid;
}

int NetConfig::encoder_channels(int i) const { return base_channels << (i - 1); }

int NetConfig::decoder_channels(int j) const { return base_channels << (blocks - 1 - j); }

void NetConfig::validate() const {
    if (blocks < 2) throw ConfigError("blocks (M) must be >= 2, got " + std::to_string(blocks));
    if (blocks > 12) throw ConfigError("blocks (M) must be <= 12, got " + std::to_string(blocks));
    if (base_channels < 1) throw ConfigError("base_channels must be positive");
    if (radius < 1) throw ConfigError("radius (d) must be >= 1, got " + std::to_string(radius));
    const int k = kernel();
    if (taps < 1 || k * k != taps || k % 2 == 0)
        throw ConfigError("taps (K) must be the square of an odd kernel size, got " + std::to_string(taps));
}

const char* to_string(LossMode m) { return m == LossMode::mse ? "mse" : "charbonnier"; }

const char* to_string(EamContext c) {
    switch (c) {
        case EamContext::corr_plus_features: return "corr_plus_features";
        case EamContext::features_only: return "features_only";
        case EamContext::corr_only: return "corr_only";
    }
    return "?";
}

LossMode parse_loss_mode(std::string_view s) {
    if (s == "charbonnier") return LossMode::charbonnier;
    if (s == "mse") return LossMode::mse;
    throw ConfigError("loss must be charbonnier or mse, got '" + std::string(s) + "'");
}

EamContext parse_eam_context(std::string_view s) {
    if (s == "corr_plus_features") return EamContext::corr_plus_features;
    if (s == "features_only") return EamContext::features_only;
    if (s == "corr_only") return EamContext::corr_only;
    throw ConfigError("eam_context must be corr_plus_features, features_only or corr_only, got '" +
                      std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// ParamStore

template <typename T>
Tensor<T>& ParamStore<T>::add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
    return entries_.back().second;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter " + std::string(name));
    return entries_[it->second].second;
}

template <typename T>
Tensor<T>& ParamStore<T>::get(std::string_view name) {
    return const_cast<Tensor<T>&>(static_cast<const ParamStore&>(*this).get(name));
}

template <typename T>
bool ParamStore<T>::contains(std::string_view name) const {
    return index_.count(std::string(name)) > 0;
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
}

template <typename T>
void ParamStore<T>::set_requires_grad(bool on) {
    for (auto& e : entries_) e.second.set_requires_grad(on);
}

template <typename T>
ParamStore<T> ParamStore<T>::clone() const {
    ParamStore out;
    for (const auto& [name, t] : entries_) out.add(name, t.clone(t.requires_grad()));
    return out;
}

// ---------------------------------------------------------------------------
// Parameters

std::string encoder_prefix(const NetConfig& config, bool left) {
    if (config.share_encoder) return "enc.";
    return left ? "enc_left." : "enc_right.";
}

std::vector<ParamSpec> expected_parameters(const NetConfig& cfg) {
    cfg.validate();
    std::vector<ParamSpec> out;
    const int c0 = cfg.base_channels;
    const int m = cfg.blocks;
    const int k = cfg.kernel();
    const int off_c = 3 * cfg.taps;

    std::vector<std::string> branches{encoder_prefix(cfg, true)};
    if (!cfg.share_encoder) branches.push_back(encoder_prefix(cfg, false));
    for (const auto& b : branches) {
        if (cfg.use_pfem) {
            add_conv(out, b + "pfem.level0", 3, c0, 3);
            add_conv(out, b + "pfem.level1", c0, c0, 3);
            add_conv(out, b + "pfem.level2", c0, c0, 3);
            add_conv(out, b + "pfem.fuse", 3 * c0, c0, 1);
        } else {
            add_conv(out, b + "stem", 3, c0, 3);
        }
        for (int i = 1; i <= m - 1; ++i) {
            const int in_c = i == 1 ? c0 : cfg.encoder_channels(i - 1);
            const std::string name = b + "block" + std::to_string(i);
            add_conv(out, name + ".conv", in_c, cfg.encoder_channels(i), 3);
            add_resblocks(out, name, cfg.encoder_channels(i));
        }
    }
    if (cfg.use_eam) {
        for (int i = 1; i <= m - 1; ++i) {
            const int ch = cfg.encoder_channels(i);
            const std::string name = "eam" + std::to_string(i);
            add_conv(out, name + ".offset_left", eam_context_channels(cfg, ch), off_c, 3, InitRule::zero);
            add_conv(out, name + ".offset_right", eam_context_channels(cfg, ch), off_c, 3, InitRule::zero);
            add_conv(out, name + ".deform_left", ch, ch, k);
            add_conv(out, name + ".deform_right", ch, ch, k);
        }
    }
    const int bott = cfg.encoder_channels(m - 1);
    add_conv(out, "bottleneck.conv", 2 * bott, bott, 3);
    add_resblocks(out, "bottleneck", bott);
    for (int j = 1; j <= m - 1; ++j) {
        const int skip = skip_channels(cfg, j);
        const int dec_in = dam_decoder_channels(cfg, j);
        if (cfg.use_dam) {
            const std::string name = "dam" + std::to_string(j);
            add_conv(out, name + ".offset_left", 2 * skip + dec_in, off_c, 3, InitRule::zero);
            add_conv(out, name + ".offset_right", 2 * skip + dec_in, off_c, 3, InitRule::zero);
            add_conv(out, name + ".deform_left", skip, skip, k);
            add_conv(out, name + ".deform_right", skip, skip, k);
        }
        const std::string name = "dec" + std::to_string(j);
        add_conv(out, name + ".conv", 2 * skip + dec_in, cfg.decoder_channels(j), 3);
        add_resblocks(out, name, cfg.decoder_channels(j));
    }
    add_conv(out, "dec" + std::to_string(m) + ".conv", c0, 3, 3);
    return out;
}

template <typename T>
ParamStore<T> init_params(const NetConfig& config, std::uint64_t seed) {
    ParamStore<T> store;
    for (const ParamSpec& spec : expected_parameters(config)) {
        std::vector<T> values(spec.shape.numel(), T(0));
        if (spec.init == InitRule::he_normal) {
            const int fan_in = spec.shape.c * spec.shape.h * spec.shape.w;
            std::mt19937_64 rng(splitmix64(seed ^ fnv1a(init_stream_key(spec.name))));
            std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
            for (T& v : values) v = static_cast<T>(normal(rng));
        }
        store.add(spec.name, Tensor<T>(spec.shape, std::move(values), true));
    }
    return store;
}

// ---------------------------------------------------------------------------
// Forward pieces

template <typename T>
Tensor<T> pfem_forward(const Tensor<T>& image, const ParamStore<T>& p, const NetConfig& cfg, bool left) {
    const Shape s = image.shape();
    if (s.c != 3)
        throw DimensionError("pfem_forward: expected a 3-channel image, got " + s.str());
    const std::string b = encoder_prefix(cfg, left);
    if (!cfg.use_pfem) return leaky_relu(conv3(image, p, b + "stem"), kPfemSlope);
    if (s.h % 4 != 0 || s.w % 4 != 0)
        throw DimensionError("pfem_forward: image " + s.str() + " must have sides divisible by 4");
    Tensor<T> l0 = leaky_relu(conv3(image, p, b + "pfem.level0"), kPfemSlope);
    Tensor<T> l1 = leaky_relu(conv2d(l0, conv_of(p, b + "pfem.level1", 2, 1)), kPfemSlope);
    Tensor<T> l2 = leaky_relu(conv2d(l1, conv_of(p, b + "pfem.level2", 2, 1)), kPfemSlope);
    Tensor<T> fused =
        concat_channels<T>({l0, upsample_bilinear2(l1), upsample_bilinear2(upsample_bilinear2(l2))});
    return leaky_relu(conv2d(fused, conv_of(p, b + "pfem.fuse", 1, 0)), kPfemSlope);
}

template <typename T>
Tensor<T> encoder_block_forward(int i, const Tensor<T>& input, const ParamStore<T>& p, const NetConfig& cfg,
                                bool left) {
    if (i < 1 || i > cfg.blocks - 1)
        throw DimensionError("encoder block index " + std::to_string(i) + " outside 1.." +
                             std::to_string(cfg.blocks - 1));
    const std::string name = encoder_prefix(cfg, left) + "block" + std::to_string(i);
    const Tensor<T> x = i >= 2 ? maxpool2(input) : input;
    Tensor<T> out = conv_res_res(x, p, name);
    expect_shape(out.shape(), {x.shape().n, cfg.encoder_channels(i), x.shape().h, x.shape().w}, name);
    return out;
}

template <typename T>
ViewPair<T> eam_forward(int i, const Tensor<T>& left, const Tensor<T>& right, const ParamStore<T>& p,
                        const NetConfig& cfg) {
    if (left.shape() != right.shape())
        throw DimensionError("eam_forward: views differ, " + left.shape().str() + " vs " +
                             right.shape().str());
    if (!cfg.use_eam) return {left, right};
    const std::string name = "eam" + std::to_string(i);
    Tensor<T> context;
    switch (cfg.eam_context) {
        case EamContext::corr_plus_features:
            context = concat_channels<T>({left, cost_volume(left, right, cfg.radius), right});
            break;
        case EamContext::features_only:
            context = concat_channels<T>({left, right});
            break;
        case EamContext::corr_only:
            context = cost_volume(left, right, cfg.radius);
            break;
    }
    return {align_view(left, context, p, name, "left", cfg), align_view(right, context, p, name, "right", cfg)};
}

template <typename T>
Tensor<T> encoder_bottleneck(const Tensor<T>& left, const Tensor<T>& right, const ParamStore<T>& p,
                             const NetConfig& cfg) {
    const int ch = cfg.encoder_channels(cfg.blocks - 1);
    if (left.shape() != right.shape() || left.shape().c != ch)
        throw DimensionError("encoder_bottleneck: expected two " + std::to_string(ch) +
                             "-channel views of equal shape, got " + left.shape().str() + " and " +
                             right.shape().str());
    return conv_res_res(concat_channels<T>({left, right}), p, "bottleneck");
}

template <typename T>
DamOutput<T> dam_forward(int j, const Tensor<T>& decoder, const Tensor<T>& skip_left,
                         const Tensor<T>& skip_right, const ParamStore<T>& p, const NetConfig& cfg) {
    if (j < 1 || j > cfg.blocks - 1)
        throw DimensionError("DAM index " + std::to_string(j) + " outside 1.." + std::to_string(cfg.blocks - 1));
    Tensor<T> dec = j >= 2 ? upsample_bilinear2(decoder) : decoder;
    const Shape ds = dec.shape(), ls = skip_left.shape(), rs = skip_right.shape();
    if (ls != rs || ds.n != ls.n || ds.h != ls.h || ds.w != ls.w)
        throw DimensionError("dam" + std::to_string(j) + ": decoder " + ds.str() + " and skips " + ls.str() +
                             ", " + rs.str() + " do not share spatial size");
    if (!cfg.use_dam) return {skip_left, skip_right, dec};
    const std::string name = "dam" + std::to_string(j);
    Tensor<T> context = concat_channels<T>({skip_left, dec, skip_right});
    return {align_view(skip_left, context, p, name, "left", cfg),
            align_view(skip_right, context, p, name, "right", cfg), dec};
}

template <typename T>
Tensor<T> decoder_block_forward(int j, const Tensor<T>& left, const Tensor<T>& decoder, const Tensor<T>& right,
                                const ParamStore<T>& p, const NetConfig& cfg) {
    if (j < 1 || j > cfg.blocks)
        throw DimensionError("decoder block index " + std::to_string(j) + " outside 1.." +
                             std::to_string(cfg.blocks));
    const std::string name = "dec" + std::to_string(j);
    if (j == cfg.blocks) return conv3(decoder, p, name + ".conv");
    Tensor<T> out = conv_res_res(concat_channels<T>({left, decoder, right}), p, name);
    const Shape ds = decoder.shape();
    expect_shape(out.shape(), {ds.n, cfg.decoder_channels(j), ds.h, ds.w}, name);
    return out;
}

template <typename T>
Tensor<T> dpanet_forward(const Tensor<T>& left, const Tensor<T>& right, const ParamStore<T>& p,
                         const NetConfig& cfg, ForwardTrace<T>* trace) {
    cfg.validate();
    const Shape s = left.shape();
    if (s.c != 3 || right.shape() != s)
        throw DimensionError("dpanet_forward: expected two equal 3-channel images, got " + s.str() + " and " +
                             right.shape().str());
    const int mult = cfg.size_multiple();
    if (s.h % mult != 0 || s.w % mult != 0)
        throw DimensionError("dpanet_forward: image size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                             " must be a multiple of " + std::to_string(mult));
    const int m = cfg.blocks;

    Tensor<T> el = pfem_forward(left, p, cfg, true);
    Tensor<T> er = pfem_forward(right, p, cfg, false);
    expect_shape(el.shape(), {s.n, cfg.base_channels, s.h, s.w}, "initial features");

    std::vector<Tensor<T>> skip_l, skip_r;
    for (int i = 1; i <= m - 1; ++i) {
        Tensor<T> pre_l = encoder_block_forward(i, el, p, cfg, true);
        Tensor<T> pre_r = encoder_block_forward(i, er, p, cfg, false);
        ViewPair<T> aligned = eam_forward(i, pre_l, pre_r, p, cfg);
        expect_shape(aligned.left.shape(), pre_l.shape(), "eam" + std::to_string(i));
        if (trace) {
            trace->pre_align_left.push_back(pre_l);
            trace->pre_align_right.push_back(pre_r);
            trace->post_align_left.push_back(aligned.left);
            trace->post_align_right.push_back(aligned.right);
        }
        skip_l.push_back(cfg.skip_pre_eam ? pre_l : aligned.left);
        skip_r.push_back(cfg.skip_pre_eam ? pre_r : aligned.right);
        el = aligned.left;
        er = aligned.right;
    }

    Tensor<T> d = encoder_bottleneck(el, er, p, cfg);
    for (int j = 1; j <= m - 1; ++j) {
        DamOutput<T> aligned = dam_forward(j, d, skip_l[m - j - 1], skip_r[m - j - 1], p, cfg);
        d = decoder_block_forward(j, aligned.left, aligned.decoder, aligned.right, p, cfg);
    }
    Tensor<T> out = decoder_block_forward(m, Tensor<T>{}, d, Tensor<T>{}, p, cfg);
    expect_shape(out.shape(), s, "output");
    return out;
}

template <typename T>
Tensor<T> restore_image(const Tensor<T>& left, const Tensor<T>& right, const ParamStore<T>& params,
                        const NetConfig& config) {
    NoGradGuard guard;
    return clamp_values(dpanet_forward(left, right, params, config), T(0), T(1));
}

#define DPANET_INSTANTIATE_MODEL(T)                                                                         \
    template class ParamStore<T>;                                                                           \
    template ParamStore<T> init_params<T>(const NetConfig&, std::uint64_t);                                 \
    template Tensor<T> pfem_forward(const Tensor<T>&, const ParamStore<T>&, const NetConfig&, bool);        \
    template Tensor<T> encoder_block_forward(int, const Tensor<T>&, const ParamStore<T>&, const NetConfig&, \
                                             bool);                                                         \
    template ViewPair<T> eam_forward(int, const Tensor<T>&, const Tensor<T>&, const ParamStore<T>&,         \
                                     const NetConfig&);                                                     \
    template Tensor<T> encoder_bottleneck(const Tensor<T>&, const Tensor<T>&, const ParamStore<T>&,         \
                                          const NetConfig&);                                                \
    template DamOutput<T> dam_forward(int, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                      const ParamStore<T>&, const NetConfig&);                              \
    template Tensor<T> decoder_block_forward(int, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                             const ParamStore<T>&, const NetConfig&);                       \
    template Tensor<T> dpanet_forward(const Tensor<T>&, const Tensor<T>&, const ParamStore<T>&,             \
                                      const NetConfig&, ForwardTrace<T>*);                                  \
    template Tensor<T> restore_image(const Tensor<T>&, const Tensor<T>&, const ParamStore<T>&,              \
                                     const NetConfig&);

DPANET_INSTANTIATE_MODEL(float)
DPANET_INSTANTIATE_MODEL(double)

}  // namespace dpanet
