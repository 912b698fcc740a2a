#include "unif/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <thread>

#include "unif/model_io.hpp"

namespace unif {

void adam_step(AdamState& state, VecX& params, const VecX& grad, double lr) {
  if (state.m.size() != params.size() || grad.size() != params.size())
    throw InvalidInput("adam_step: shape mismatch");
  if (!grad.allFinite()) throw InvalidInput("adam_step: non-finite gradient");
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.step));
  params.array() -= lr * (state.m / c1).array() /
                    ((state.v / c2).array().sqrt() + state.eps);
}

double lr_at(const TrainConfig& config, int epoch) {
  double lr = config.lr;
  for (int milestone : config.decay_epochs) {
    if (epoch >= milestone) lr *= config.lr_decay;
  }
  return lr;
}

namespace {

void log_row(std::ostream& log, int epoch, const LossReport& r, double lr) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", epoch, r.recon,
                r.unit, r.lim, r.sec, r.perim, r.total, lr);
  log << buf;
}

}  // namespace

void run_training(const TrainConfig& config, UnifModel& model, AdamState& adam,
                  int start_epoch, const std::vector<ScanFrame>& frames,
                  std::ostream* log, const TrainHooks& hooks) {
  if (frames.empty()) throw InvalidInput("train: no frames");
  for (const ScanFrame& f : frames) validate_pose(model.skeleton(), f.pose);
  if (config.epochs <= 0) throw InvalidInput("train: epochs must be positive");
  if (config.lr_decay <= 0.0 || config.lr_decay >= 1.0)
    throw InvalidInput("train: lr_decay must be in (0, 1)");

  const int F = int(frames.size());
  const int B = std::min(config.frames_per_batch, F);
  const int T = std::max(1, config.threads);

  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(config, epoch);

    // Batch frames: a deterministic draw without replacement per epoch.
    Rng pick(mix_seed(config.seed, 0xba7c4e5ull, uint64_t(epoch)));
    std::vector<int> chosen;
    {
      std::vector<int> pool(F);
      for (int i = 0; i < F; ++i) pool[i] = i;
      for (int b = 0; b < B; ++b) {
        const int k = b + int(pick.uniform_int(uint64_t(F - b)));
        std::swap(pool[b], pool[k]);
        chosen.push_back(pool[b]);
      }
    }

    // Per-frame losses and gradients, frames statically assigned to threads;
    // the reduction below runs in frame order, so the result does not depend
    // on the thread count.
    std::vector<LossGrad> results(B);
    std::vector<std::string> errors(B);
    auto work = [&](int t) {
      for (int b = t; b < B; b += T) {
        try {
          const ScanFrame& fr = frames[chosen[b]];
          const SampleBatch batch = sample_batch(
              fr, config.counts, config.sigma_local, config.box_scale,
              mix_seed(config.seed, uint64_t(epoch) * 0x9e37ull + 0x51ull,
                       uint64_t(fr.frame_id)));
          results[b] = loss_and_grad(model, batch, fr.pose, config.weights);
        } catch (const std::exception& e) {
          errors[b] = e.what();
        }
      }
    };
    if (T == 1 || B == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < std::min(T, B); ++t) pool.emplace_back(work, t);
      for (std::thread& th : pool) th.join();
    }
    for (const std::string& err : errors) {
      if (!err.empty()) throw InvalidInput("train: frame evaluation failed: " + err);
    }

    VecX grad = VecX::Zero(model.param_count());
    LossReport mean;
    for (int b = 0; b < B; ++b) {
      grad += results[b].grad;
      mean.recon += results[b].report.recon;
      mean.unit += results[b].report.unit;
      mean.lim += results[b].report.lim;
      mean.sec += results[b].report.sec;
      mean.perim += results[b].report.perim;
      mean.total += results[b].report.total;
    }
    grad /= B;
    mean.recon /= B;
    mean.unit /= B;
    mean.lim /= B;
    mean.sec /= B;
    mean.perim /= B;
    mean.total /= B;

    if (!std::isfinite(mean.total) || mean.total > config.divergence_limit) {
      throw InvalidInput("train: loss diverged at epoch " + std::to_string(epoch) +
                         " (total = " + std::to_string(mean.total) + ")");
    }

    adam_step(adam, model.params(), grad, lr);
    model.refresh();

    if (log) log_row(*log, epoch, mean, lr);
    if (hooks.on_epoch) hooks.on_epoch(epoch, mean, lr);

    if (config.checkpoint_every > 0 && !config.out_dir.empty() &&
        (epoch + 1) % config.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%05d.unif", epoch + 1);
      save_checkpoint(model, adam, epoch + 1,
                      (std::filesystem::path(config.out_dir) / name).string());
    }
  }
}

UnifModel train(const TrainConfig& config, const Skeleton& skel,
                const std::vector<ScanFrame>& frames, std::ostream* log,
                const TrainHooks& hooks) {
  UnifModel model(skel, config.model, config.width, config.seed);
  AdamState adam(model.param_count());
  if (log) *log << "epoch,recon,unit,lim,sec,perim,total,lr\n";
  run_training(config, model, adam, 0, frames, log, hooks);
  return model;
}

}  // namespace unif
