#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dpanet/dataset.hpp"
#include "dpanet/model.hpp"

namespace dpanet {

/// Charbonnier: mean of sqrt(d^2 + eps^2) over all elements.
/// MSE: mean of d^2. Both record a graph node.
template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& prediction, const Tensor<T>& target, LossMode mode,
                              double epsilon = 1e-3);

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Moment buffers, one per parameter in store order.
template <typename T>
struct OptimState {
    AdamSettings settings;
    double lr = 2e-5;
    std::int64_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

template <typename T>
OptimState<T> make_optim_state(const ParamStore<T>& params, AdamSettings settings = {});

/// One bias-corrected Adam update from the parameters' accumulated grads at
/// state.lr. Throws ConfigError naming a parameter that has no gradient.
template <typename T>
void adam_step(ParamStore<T>& params, OptimState<T>& state);

struct TrainConfig {
    double initial_lr = 2e-5;
    int lr_half_period = 60;
    int total_epochs = 150;
    int batch_size = 4;
    int patch_size = 64;
    double loss_epsilon = 1e-3;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;

    void validate(const NetConfig& net) const;
};

/// initial_lr * 0.5^floor(epoch / lr_half_period), epoch counted from 0.
double lr_at_epoch(int epoch, const TrainConfig& config);

struct EpochRecord {
    int epoch = 0;  // 1-based
    double lr = 0;
    double mean_loss = 0;
    double val_psnr = 0;
    double val_ssim = 0;
    double val_mae = 0;
};

/// "epoch,lr,mean_loss,val_psnr,val_ssim,val_mae"
std::string epoch_log_header();
/// One comma-separated log line with fixed formatting.
std::string format_epoch(const EpochRecord& r);

/// Seeded split: the first round(val_fraction * n) entries of a shuffled
/// index list are held out. Both lists come back sorted.
struct Split {
    std::vector<int> train;
    std::vector<int> val;
};
Split split_dataset(int n, double val_fraction, std::uint64_t seed);

struct ValidationScores {
    double psnr = 0, ssim = 0, mae = 0;
};

/// Restores every sample and averages the metrics against `sharp`.
ValidationScores evaluate_samples(const std::vector<const Triplet*>& samples, const ParamStore<float>& params,
                                  const NetConfig& config);

struct TrainResult {
    ParamStore<float> params;       // after the last epoch
    ParamStore<float> best_params;  // best validation PSNR (last params when nothing is held out)
    std::vector<EpochRecord> log;
    Split split;
};

/// Called after each epoch with the record and the current parameters.
using EpochCallback = std::function<void(const EpochRecord&, const ParamStore<float>&)>;

/// Each epoch: seeded shuffle of the training split, random patch_size
/// crops (the same crop for L, R and S), batches of batch_size (last one
/// may be smaller), forward, loss, backward, Adam at lr_at_epoch(epoch - 1),
/// then validation on whole held-out images. `initial` defaults to
/// init_params(net, config.seed).
TrainResult train_loop(const std::vector<Triplet>& dataset, const TrainConfig& config, const NetConfig& net,
                       const EpochCallback& on_epoch = {}, const ParamStore<float>* initial = nullptr);

}  // namespace dpanet
