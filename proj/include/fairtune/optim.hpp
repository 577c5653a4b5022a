#pragma once

#include <span>
#include <vector>

#include "fairtune/nnet.hpp"

namespace fairtune::nnet {

/// Linear warmup over the first `warmup_frac` of steps, then cosine decay to `lr_end` at `total_steps`.
struct LrSchedule {
    double warmup_frac = 0.10;
    double lr_start = 1e-5;
    double lr_peak = 1e-4;
    double lr_end = 1e-6;
    long total_steps = 1;

    long warmup_steps() const;
    double lr(long step) const;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;  // decoupled
};

struct OptimizerState {
    AdamConfig adam;
    LrSchedule schedule;
    long step = 0;
    std::vector<Mat> m;
    std::vector<Mat> v;
};

OptimizerState make_optimizer(std::span<Mat* const> params, const AdamConfig& adam, const LrSchedule& schedule);
OptimizerState make_optimizer(NetParams& params, const AdamConfig& adam, const LrSchedule& schedule);

/// One Adam update at lr = schedule.lr(state.step); increments state.step. Returns the lr used.
double adam_step(OptimizerState& state, std::span<Mat* const> params, std::span<const Mat* const> grads);
double adam_step(OptimizerState& state, NetParams& params, const NetParams& grads);

std::vector<Mat*> tensor_ptrs(NetParams& p);
std::vector<const Mat*> tensor_ptrs(const NetParams& p);

}  // namespace fairtune::nnet
