#include "dpanet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#include "dpanet/metrics.hpp"

namespace dpanet {

template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& prediction, const Tensor<T>& target, LossMode mode,
                              double epsilon) {
    if (prediction.shape() != target.shape())
        throw DimensionError("reconstruction_loss: prediction " + prediction.shape().str() + " vs target " +
                             target.shape().str());
    if (mode == LossMode::charbonnier && !(epsilon > 0.0))
        throw ConfigError("reconstruction_loss: epsilon must be positive");
    const std::size_t n = prediction.numel();
    const double eps2 = epsilon * epsilon;
    double acc = 0;
    auto p = prediction.values(), t = target.values();
    for (std::size_t i = 0; i < n; ++i) {
        const double d = double(p[i]) - double(t[i]);
        acc += mode == LossMode::mse ? d * d : std::sqrt(d * d + eps2);
    }
    const double value = acc / static_cast<double>(n);
    return Tensor<T>::make_result(
        {1, 1, 1, 1}, {static_cast<T>(value)}, "reconstruction_loss", {prediction, target},
        [mode, eps2, n](Node<T>& self) {
            Node<T>& pn = *self.inputs[0];
            Node<T>& tn = *self.inputs[1];
            const double g = double(self.grad[0]) / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double d = double(pn.value[i]) - double(tn.value[i]);
                const double dd = mode == LossMode::mse ? 2.0 * d : d / std::sqrt(d * d + eps2);
                const T gi = static_cast<T>(g * dd);
                if (pn.requires_grad) pn.grad[i] += gi;
                if (tn.requires_grad) tn.grad[i] -= gi;
            }
        });
}

template <typename T>
OptimState<T> make_optim_state(const ParamStore<T>& params, AdamSettings settings) {
    OptimState<T> s;
    s.settings = settings;
    for (const auto& [name, t] : params) {
        s.m.emplace_back(t.numel(), T(0));
        s.v.emplace_back(t.numel(), T(0));
    }
    return s;
}

template <typename T>
void adam_step(ParamStore<T>& params, OptimState<T>& state) {
    if (state.m.size() != params.size())
        throw ConfigError("adam_step: optimizer state holds " + std::to_string(state.m.size()) +
                          " buffers for " + std::to_string(params.size()) + " parameters");
    for (const auto& [name, t] : params)
        if (!t.has_grad()) throw ConfigError("adam_step: parameter " + name + " has no gradient");

    ++state.step;
    const AdamSettings& a = state.settings;
    const double c1 = 1.0 - std::pow(a.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(a.beta2, static_cast<double>(state.step));
    std::size_t k = 0;
    for (auto& [name, t] : params) {
        auto g = t.grad();
        T* w = t.data();
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != t.numel())
            throw DimensionError("adam_step: state for " + name + " does not match its shape");
        for (std::size_t i = 0; i < m.size(); ++i) {
            m[i] = static_cast<T>(a.beta1 * m[i] + (1.0 - a.beta1) * g[i]);
            v[i] = static_cast<T>(a.beta2 * v[i] + (1.0 - a.beta2) * double(g[i]) * g[i]);
            const double mh = m[i] / c1, vh = v[i] / c2;
            w[i] = static_cast<T>(w[i] - state.lr * mh / (std::sqrt(vh) + a.epsilon));
        }
        ++k;
    }
}

void TrainConfig::validate(const NetConfig& net) const {
    net.validate();
    if (!(initial_lr > 0)) throw ConfigError("initial_lr must be positive");
    if (lr_half_period < 1) throw ConfigError("lr_half_period must be >= 1");
    if (total_epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(loss_epsilon > 0)) throw ConfigError("loss_epsilon must be positive");
    if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must be in [0, 1)");
    const int mult = net.size_multiple();
    if (patch_size < 1 || patch_size % mult != 0)
        throw ConfigError("patch_size " + std::to_string(patch_size) + " must be a positive multiple of " +
                          std::to_string(mult));
}

double lr_at_epoch(int epoch, const TrainConfig& config) {
    return config.initial_lr * std::pow(0.5, epoch / config.lr_half_period);
}

std::string epoch_log_header() { return "epoch,lr,mean_loss,val_psnr,val_ssim,val_mae"; }

std::string format_epoch(const EpochRecord& r) {
    char buf[192];
    std::snprintf(buf, sizeof buf, "%d,%.6e,%.8f,%.4f,%.6f,%.6f", r.epoch, r.lr, r.mean_loss, r.val_psnr, r.val_ssim,
                  r.val_mae);
    return buf;
}

Split split_dataset(int n, double val_fraction, std::uint64_t seed) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed ^ 0x5b1175eedULL);
    std::shuffle(order.begin(), order.end(), rng);
    const int held = static_cast<int>(std::lround(val_fraction * n));
    Split s;
    s.val.assign(order.begin(), order.begin() + held);
    s.train.assign(order.begin() + held, order.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.train.begin(), s.train.end());
    return s;
}

ValidationScores evaluate_samples(const std::vector<const Triplet*>& samples, const ParamStore<float>& params,
                                  const NetConfig& config) {
    ValidationScores s;
    if (samples.empty()) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        return {nan, nan, nan};
    }
    for (const Triplet* t : samples) {
        Tensor<float> out = restore_image(t->left, t->right, params, config);
        s.psnr += psnr(out, t->sharp);
        s.ssim += ssim(out, t->sharp);
        s.mae += mae(out, t->sharp);
    }
    const double n = static_cast<double>(samples.size());
    return {s.psnr / n, s.ssim / n, s.mae / n};
}

namespace {

// Copies a patch of item 0 of `src` into item `slot` of `dst`.
void crop_into(const Tensor<float>& src, int top, int left, Tensor<float>& dst, int slot) {
    const Shape s = src.shape(), d = dst.shape();
    float* out = dst.data() + static_cast<std::size_t>(slot) * d.c * d.plane();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < d.h; ++y) {
            const float* row = src.data() + (static_cast<std::size_t>(c) * s.h + top + y) * s.w + left;
            std::copy(row, row + d.w, out + (static_cast<std::size_t>(c) * d.h + y) * d.w);
        }
}

void check_dataset(const std::vector<Triplet>& data, const Split& split, const TrainConfig& cfg,
                   const NetConfig& net) {
    if (data.empty()) throw ConfigError("training set is empty");
    if (split.train.empty()) throw ConfigError("no training samples left after the validation split");
    const int mult = net.size_multiple();
    for (const Triplet& t : data) {
        if (!t.sharp.defined()) throw ConfigError("sample '" + t.id + "' has no sharp target");
        const Shape s = t.left.shape();
        if (s.h < cfg.patch_size || s.w < cfg.patch_size)
            throw DimensionError("sample '" + t.id + "' (" + std::to_string(s.h) + "x" + std::to_string(s.w) +
                                 ") is smaller than patch_size " + std::to_string(cfg.patch_size));
    }
    for (int i : split.val) {
        const Shape s = data[i].left.shape();
        if (s.h % mult != 0 || s.w % mult != 0)
            throw DimensionError("validation sample '" + data[i].id + "' size must be a multiple of " +
                                 std::to_string(mult));
    }
}

}  // namespace

TrainResult train_loop(const std::vector<Triplet>& data, const TrainConfig& cfg, const NetConfig& net,
                       const EpochCallback& on_epoch, const ParamStore<float>* initial) {
    cfg.validate(net);
    TrainResult result;
    result.split = split_dataset(static_cast<int>(data.size()), cfg.val_fraction, cfg.seed);
    check_dataset(data, result.split, cfg, net);

    result.params = initial ? initial->clone() : init_params<float>(net, cfg.seed);
    result.params.set_requires_grad(true);
    result.best_params = result.params.clone();
    OptimState<float> optim = make_optim_state(result.params);

    std::vector<const Triplet*> val;
    for (int i : result.split.val) val.push_back(&data[i]);

    std::mt19937_64 rng(cfg.seed ^ 0x7a11ULL);
    double best_psnr = -std::numeric_limits<double>::infinity();
    const int p = cfg.patch_size;
    for (int epoch = 1; epoch <= cfg.total_epochs; ++epoch) {
        optim.lr = lr_at_epoch(epoch - 1, cfg);
        std::vector<int> order = result.split.train;
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0;
        for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
            const int count = static_cast<int>(std::min<std::size_t>(cfg.batch_size, order.size() - first));
            Tensor<float> left = Tensor<float>::zeros({count, 3, p, p});
            Tensor<float> right = Tensor<float>::zeros({count, 3, p, p});
            Tensor<float> sharp = Tensor<float>::zeros({count, 3, p, p});
            for (int b = 0; b < count; ++b) {
                const Triplet& t = data[order[first + b]];
                const Shape s = t.left.shape();
                const int top = std::uniform_int_distribution<int>(0, s.h - p)(rng);
                const int lft = std::uniform_int_distribution<int>(0, s.w - p)(rng);
                crop_into(t.left, top, lft, left, b);
                crop_into(t.right, top, lft, right, b);
                crop_into(t.sharp, top, lft, sharp, b);
            }
            result.params.zero_grad();
            Tensor<float> loss =
                reconstruction_loss(dpanet_forward(left, right, result.params, net), sharp, net.loss, cfg.loss_epsilon);
            loss.backward();
            adam_step(result.params, optim);
            loss_sum += double(loss.item()) * count;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = optim.lr;
        rec.mean_loss = loss_sum / static_cast<double>(order.size());
        const ValidationScores v = evaluate_samples(val, result.params, net);
        rec.val_psnr = v.psnr;
        rec.val_ssim = v.ssim;
        rec.val_mae = v.mae;
        if (val.empty() || v.psnr > best_psnr) {
            best_psnr = v.psnr;
            result.best_params = result.params.clone();
        }
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec, result.params);
    }
    return result;
}

#define DPANET_INSTANTIATE_TRAIN(T)                                                                              \
    template Tensor<T> reconstruction_loss(const Tensor<T>&, const Tensor<T>&, LossMode, double);               \
    template OptimState<T> make_optim_state(const ParamStore<T>&, AdamSettings);                               \
    template void adam_step(ParamStore<T>&, OptimState<T>&);

DPANET_INSTANTIATE_TRAIN(float)
DPANET_INSTANTIATE_TRAIN(double)

}  // namespace dpanet
