#pragma once

// Composite fine-tuning objective: L1 on normalized heart rate plus a logit-Laplace reconstruction term.

#include <span>
#include <vector>

#include "fairtune/nnet.hpp"

namespace fairtune::nnet {

inline constexpr double kSqueezeEps = 0.1;

/// Min-max maps a window into [eps, 1 - eps]; a constant window maps to 0.5.
std::vector<double> squeeze_window(std::span<const double> window, double eps = kSqueezeEps);

/// Negative log-density of the logit-Laplace distribution at x in (0,1).
double logit_laplace_nll(double x, double mu, double log_b);

struct LaplaceTerm {
    double loss = 0.0;
    std::vector<double> d_mu;
    std::vector<double> d_log_b;
};

/// Mean NLL over a window with its gradients. `x` must already be squeezed into (0,1).
LaplaceTerm logit_laplace_loss(std::span<const double> x, std::span<const double> mu, std::span<const double> log_b);

struct CompositeLoss {
    double total = 0.0;            // weighted mean objective
    double mean_l1 = 0.0;          // unweighted batch means
    double mean_ll = 0.0;
    std::vector<double> l1;        // |pred - true| / hr_scale per record
    std::vector<double> ll;        // logit-Laplace NLL per record
    std::vector<double> per_record;  // l1 + alpha * ll, unweighted
    OutputGrads grads;             // dTotal/d outputs
};

/// Weights must be nonnegative with positive sum; they enter as sum(w_i * loss_i) / sum(w_i).
/// An empty `weights` span means uniform weights.
CompositeLoss composite_loss(const NetConfig& cfg, const ForwardOutput& out, const Mat& signals,
                             std::span<const double> hr_true, std::span<const double> weights = {});

}  // namespace fairtune::nnet
