#pragma once

#include "rmap/checkpoint.hpp"
#include "rmap/loss.hpp"
#include "rmap/network.hpp"
#include "rmap/optim.hpp"
#include "rmap/rng.hpp"

#include <algorithm>
#include <filesystem>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmap {

struct TrainConfig {
  double base_lr = 1e-5;
  double weight_decay = 5e-5;
  std::size_t batch_size = 16;
  std::size_t epochs = 600;
  std::size_t checkpoint_every = 100;
  double lr_decay = 0.9;
  double lr_period = 20.0;
  bool continuous_decay = true;
  std::uint64_t seed = 1;
};

/// One training example: the network input and the per-stage ground truths.
struct TrainSample {
  PointCloud input;                 // exactly n_in points, normalized frame
  std::vector<PointCloud> targets;  // G_i per stage, normalized frame
};

/// Builds a sample from a normalized (input, ground-truth) patch pair:
/// resizes the input to n_in and precomputes the FPS stage targets.
inline TrainSample make_train_sample(const PointCloud& input, const PointCloud& gt,
                                     const NetworkConfig& cfg) {
  TrainSample s;
  s.input = fit_to_size(input, cfg.n_in);
  s.targets = chamfer_targets(gt, cfg.stage_sizes());
  return s;
}

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
};

/// AdamW training loop with the continuous learning-rate decay schedule.
/// Shuffling reseeds per epoch from (seed, epoch), so a run resumed from a
/// checkpoint at an epoch boundary replays the exact remaining sequence.
class Trainer {
 public:
  Trainer(const NetworkConfig& net_cfg, const TrainConfig& train_cfg)
      : net_cfg_(net_cfg), cfg_(train_cfg), params_(build_params(net_cfg)) {
    AdamW::Config oc;
    oc.lr = cfg_.base_lr;
    oc.weight_decay = cfg_.weight_decay;
    opt_ = AdamW(oc);
  }

  const NetworkConfig& network_config() const { return net_cfg_; }
  const TrainConfig& config() const { return cfg_; }
  ParamMap& params() { return params_; }
  const ParamMap& params() const { return params_; }
  std::size_t start_epoch() const { return start_epoch_; }

  /// Extra JSON merged into every checkpoint header (e.g. the network
  /// config, so inference can rebuild the model from the file alone).
  void set_checkpoint_meta(nlohmann::ordered_json meta) { ckpt_meta_ = std::move(meta); }

  void resume_from(const std::filesystem::path& checkpoint_path) {
    const auto ck = load_checkpoint(checkpoint_path);
    restore_params(ck, params_);
    restore_optimizer(ck, params_, opt_);
    start_epoch_ = ck.meta.value("epoch", 0);
  }

  /// Runs the remaining epochs. Checkpoints land in `checkpoint_dir` when
  /// given (epoch_{N}.ckpt every checkpoint_every epochs plus final.ckpt).
  std::vector<EpochLog> train(const std::vector<TrainSample>& dataset,
                              const std::filesystem::path& checkpoint_dir = {},
                              const std::function<void(const EpochLog&)>& on_epoch = {}) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    for (const TrainSample& s : dataset) {
      if (s.input.size() != net_cfg_.n_in)
        throw std::invalid_argument("train: sample input size != n_in");
      if (s.targets.size() != net_cfg_.stage_sizes().size())
        throw std::invalid_argument("train: sample target count mismatch");
    }
    if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);

    std::vector<EpochLog> logs;
    for (std::size_t epoch = start_epoch_; epoch < cfg_.epochs; ++epoch) {
      opt_.config().lr = lr_schedule(epoch, cfg_.base_lr, cfg_.lr_decay, cfg_.lr_period,
                                     cfg_.continuous_decay);

      std::vector<std::size_t> order(dataset.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng shuffle_rng(cfg_.seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
      shuffle_rng.shuffle(order);

      double loss_sum = 0.0;
      for (std::size_t b = 0; b < order.size(); b += cfg_.batch_size) {
        const std::size_t batch_end = std::min(order.size(), b + cfg_.batch_size);
        const double inv_batch = 1.0 / static_cast<double>(batch_end - b);
        zero_grads(params_);
        for (std::size_t i = b; i < batch_end; ++i) {
          const TrainSample& sample = dataset[order[i]];
          const std::vector<Tensor> stages = forward(sample.input, net_cfg_, params_);
          const Tensor j = total_loss_with_targets(stages, sample.targets);
          loss_sum += j.item();
          backward(scale(j, inv_batch));
        }
        opt_.step(params_);
      }

      EpochLog log;
      log.epoch = epoch;
      log.lr = opt_.config().lr;
      log.mean_loss = loss_sum / static_cast<double>(dataset.size());
      logs.push_back(log);
      if (on_epoch) on_epoch(log);

      if (!checkpoint_dir.empty() && cfg_.checkpoint_every > 0 &&
          (epoch + 1) % cfg_.checkpoint_every == 0)
        save_training_checkpoint(checkpoint_dir / ("epoch_" + std::to_string(epoch + 1) + ".ckpt"),
                                 params_, &opt_, epoch + 1, ckpt_meta_);
    }
    start_epoch_ = cfg_.epochs;
    if (!checkpoint_dir.empty())
      save_training_checkpoint(checkpoint_dir / "final.ckpt", params_, &opt_, cfg_.epochs,
                               ckpt_meta_);
    return logs;
  }

 private:
  NetworkConfig net_cfg_;
  TrainConfig cfg_;
  ParamMap params_;
  AdamW opt_;
  std::size_t start_epoch_ = 0;
  nlohmann::ordered_json ckpt_meta_;
};

}  // namespace rmap
