#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dpanet/align.hpp"

namespace dpanet {

enum class LossMode { charbonnier, mse };

/// What the EAM offset heads see.
enum class EamContext {
    corr_plus_features,  // [E_L, V, E_R]
    features_only,       // [E_L, E_R]
    corr_only,           // V
};

struct NetConfig {
    int blocks = 5;          // M encoder and M decoder blocks
    int base_channels = 16;  // C0
    int radius = 9;          // cost-volume search radius d
    int taps = 9;            // K, a square of an odd kernel size
    LossMode loss = LossMode::charbonnier;
    bool share_encoder = true;
    bool use_pfem = true;
    bool use_eam = true;
    EamContext eam_context = EamContext::corr_plus_features;
    bool use_dam = true;
    bool skip_pre_eam = false;  // feed pre-alignment encoder features to the skips

    /// CPU-friendly defaults: C0 = 16, M = 5, d = 4.
    static NetConfig desk();
    /// The full model with one ablation applied, 1 <= id <= 7:
    /// 1 unshared encoder, 2 no pyramid extractor, 3 MSE loss, 4 no EAM,
    /// 5 EAM offsets from features only, 6 EAM offsets from the cost volume
    /// only, 7 no DAM.
    static NetConfig ablation(int id, NetConfig base = desk());

    int kernel() const;
    /// Input height and width must be multiples of this.
    int size_multiple() const;
    /// Channel count of encoder level i (1 <= i <= M - 1); the bottleneck
    /// keeps level M - 1's width.
    int encoder_channels(int i) const;
    /// Output channel count of decoder block j (1 <= j <= M - 1).
    int decoder_channels(int j) const;
    void validate() const;
};

const char* to_string(LossMode m);
const char* to_string(EamContext c);
LossMode parse_loss_mode(std::string_view s);
EamContext parse_eam_context(std::string_view s);

/// Ordered name -> tensor map. Iteration follows insertion order.
template <typename T>
class ParamStore {
   public:
    using Entry = std::pair<std::string, Tensor<T>>;

    Tensor<T>& add(std::string name, Tensor<T> value);
    const Tensor<T>& get(std::string_view name) const;
    Tensor<T>& get(std::string_view name);
    bool contains(std::string_view name) const;

    std::size_t size() const { return entries_.size(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }

    /// Total number of scalar parameters.
    std::size_t parameter_count() const;
    void zero_grad();
    void set_requires_grad(bool on);
    /// Deep copy with independent storage.
    ParamStore clone() const;

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [name, t] : entries_) out.add(name, dpanet::cast<U>(t, t.requires_grad()));
        return out;
    }

   private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class InitRule { he_normal, zero };

struct ParamSpec {
    std::string name;
    Shape shape;
    InitRule init;
};

/// Every parameter the configuration uses, in store order.
std::vector<ParamSpec> expected_parameters(const NetConfig& config);

/// He-normal conv weights (std = sqrt(2 / (in_c * k * k))), zero biases,
/// zero offset heads. Each tensor draws from its own stream seeded by
/// (seed, name), so parameters shared between configurations start equal.
/// The left and right kernels of an alignment module share a stream and
/// start equal.
template <typename T>
ParamStore<T> init_params(const NetConfig& config, std::uint64_t seed);

/// Name prefix of the encoder branch for one view.
std::string encoder_prefix(const NetConfig& config, bool left);

/// Initial feature extractor (3 -> C0, full resolution).
template <typename T>
Tensor<T> pfem_forward(const Tensor<T>& image, const ParamStore<T>& params, const NetConfig& config,
                       bool left = true);

/// Feature extractor i of one encoder branch, 1 <= i <= M - 1.
template <typename T>
Tensor<T> encoder_block_forward(int i, const Tensor<T>& input, const ParamStore<T>& params,
                                const NetConfig& config, bool left = true);

template <typename T>
struct ViewPair {
    Tensor<T> left;
    Tensor<T> right;
};

/// Encoder alignment module i: cost volume, per-view offset heads and
/// per-view modulated deformable convolutions.
template <typename T>
ViewPair<T> eam_forward(int i, const Tensor<T>& left, const Tensor<T>& right,
                        const ParamStore<T>& params, const NetConfig& config);

/// Last encoder block: concatenates both views into the decoder's D^0.
template <typename T>
Tensor<T> encoder_bottleneck(const Tensor<T>& left, const Tensor<T>& right, const ParamStore<T>& params,
                             const NetConfig& config);

template <typename T>
struct DamOutput {
    Tensor<T> left;     // aligned left skip
    Tensor<T> right;    // aligned right skip
    Tensor<T> decoder;  // D^{j-1}, upsampled when j >= 2
};

/// Decoder alignment module j: aligns both skip features to the decoder.
template <typename T>
DamOutput<T> dam_forward(int j, const Tensor<T>& decoder, const Tensor<T>& skip_left,
                         const Tensor<T>& skip_right, const ParamStore<T>& params, const NetConfig& config);

/// Fusion block j. For j == M only `decoder` is read and the result is the
/// unclamped 3-channel image.
template <typename T>
Tensor<T> decoder_block_forward(int j, const Tensor<T>& left, const Tensor<T>& decoder,
                                const Tensor<T>& right, const ParamStore<T>& params,
                                const NetConfig& config);

/// Intermediate features recorded by dpanet_forward; index i - 1 holds
/// encoder level i.
template <typename T>
struct ForwardTrace {
    std::vector<Tensor<T>> pre_align_left, pre_align_right;
    std::vector<Tensor<T>> post_align_left, post_align_right;
};

/// Full network. Output has the input's shape and is not clamped.
template <typename T>
Tensor<T> dpanet_forward(const Tensor<T>& left, const Tensor<T>& right, const ParamStore<T>& params,
                         const NetConfig& config, ForwardTrace<T>* trace = nullptr);

/// Inference: no graph, output clamped to [0, 1].
template <typename T>
Tensor<T> restore_image(const Tensor<T>& left, const Tensor<T>& right, const ParamStore<T>& params,
                        const NetConfig& config);

}  // namespace dpanet
