#include "fairtune/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fairtune::nnet {

long LrSchedule::warmup_steps() const {
    const long w = std::lround(warmup_frac * static_cast<double>(total_steps));
    return std::clamp<long>(w, total_steps > 1 ? 1 : 0, total_steps);
}

double LrSchedule::lr(long step) const {
    const long warm = warmup_steps();
    step = std::clamp<long>(step, 0, total_steps);
    if (step < warm) {
        return lr_start + (lr_peak - lr_start) * static_cast<double>(step) / static_cast<double>(warm);
    }
    const long decay = total_steps - warm;
    if (decay <= 0) return lr_peak;
    const double progress = static_cast<double>(step - warm) / static_cast<double>(decay);
    return lr_end + 0.5 * (lr_peak - lr_end) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<Mat*> tensor_ptrs(NetParams& p) {
    std::vector<Mat*> out;
    for (auto& t : named_tensors(p)) out.push_back(t.value);
    return out;
}

std::vector<const Mat*> tensor_ptrs(const NetParams& p) {
    std::vector<const Mat*> out;
    for (const auto& t : named_tensors(p)) out.push_back(t.value);
    return out;
}

OptimizerState make_optimizer(std::span<Mat* const> params, const AdamConfig& adam, const LrSchedule& schedule) {
    OptimizerState s;
    s.adam = adam;
    s.schedule = schedule;
    for (const Mat* p : params) {
        s.m.push_back(Mat::Zero(p->rows(), p->cols()));
        s.v.push_back(Mat::Zero(p->rows(), p->cols()));
    }
    return s;
}

OptimizerState make_optimizer(NetParams& params, const AdamConfig& adam, const LrSchedule& schedule) {
    return make_optimizer(tensor_ptrs(params), adam, schedule);
}

double adam_step(OptimizerState& state, std::span<Mat* const> params, std::span<const Mat* const> grads) {
    require(params.size() == grads.size() && params.size() == state.m.size(), ErrorKind::Invalid,
            "adam_step: tensor count mismatch");
    const double lr = state.schedule.lr(state.step);
    const double t = static_cast<double>(state.step + 1);
    const auto& a = state.adam;
    const double c1 = 1.0 - std::pow(a.beta1, t);
    const double c2 = 1.0 - std::pow(a.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Mat& p = *params[i];
        const Mat& g = *grads[i];
        require(p.rows() == g.rows() && p.cols() == g.cols() && p.rows() == state.m[i].rows() &&
                    p.cols() == state.m[i].cols(),
                ErrorKind::Invalid, "adam_step: shape mismatch");
        state.m[i] = a.beta1 * state.m[i] + (1.0 - a.beta1) * g;
        state.v[i] = a.beta2 * state.v[i] + (1.0 - a.beta2) * g.cwiseAbs2();
        auto mhat = state.m[i].array() / c1;
        auto vhat = state.v[i].array() / c2;
        p.array() -= lr * (mhat / (vhat.sqrt() + a.eps) + a.weight_decay * p.array());
    }
    ++state.step;
    return lr;
}

double adam_step(OptimizerState& state, NetParams& params, const NetParams& grads) {
    return adam_step(state, tensor_ptrs(params), tensor_ptrs(grads));
}

}  // namespace fairtune::nnet
