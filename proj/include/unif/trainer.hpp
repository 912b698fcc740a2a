#pragma once

// Optimization loop: Adam, the step-decay learning-rate schedule, frame
// batching, rigidness-coefficient learning and checkpointing.

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "unif/dataio.hpp"
#include "unif/model.hpp"
#include "unif/objective.hpp"

namespace unif {

struct TrainConfig {
  int epochs = 5000;
  double lr = 1e-3;
  double lr_decay = 0.3;
  std::vector<int> decay_epochs = {1000, 2000, 3000};
  int frames_per_batch = 4;
  uint64_t seed = 0;

  LossWeights weights;
  SampleCounts counts;
  double sigma_local = 0.1;
  double box_scale = 1.5;

  ModelConfig model;
  int width = 64;

  int checkpoint_every = 0;  // 0 disables checkpoints
  std::string out_dir;       // checkpoint directory when set
  int threads = 2;
  double divergence_limit = 1e6;
};

struct AdamState {
  VecX m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit AdamState(int n = 0) : m(VecX::Zero(n)), v(VecX::Zero(n)) {}
};

/// Standard bias-corrected Adam update; throws on non-finite gradients.
void adam_step(AdamState& state, VecX& params, const VecX& grad, double lr);

/// Step-decay schedule: lr * decay^(number of milestones <= epoch).
double lr_at(const TrainConfig& config, int epoch);

struct TrainHooks {
  std::function<void(int epoch, const LossReport&, double lr)> on_epoch;
};

/// Writes one CSV row per epoch to `log` (if non-null) in the fixed format
/// epoch,recon,unit,lim,sec,perim,total,lr. Bitwise reproducible per seed.
void run_training(const TrainConfig& config, UnifModel& model, AdamState& adam,
                  int start_epoch, const std::vector<ScanFrame>& frames,
                  std::ostream* log, const TrainHooks& hooks = {});

/// Fresh training run: builds the model, writes the log header, trains for
/// config.epochs steps (each step averages config.frames_per_batch frames).
UnifModel train(const TrainConfig& config, const Skeleton& skel,
                const std::vector<ScanFrame>& frames, std::ostream* log = nullptr,
                const TrainHooks& hooks = {});

}  // namespace unif
