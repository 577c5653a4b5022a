#include "fairtune/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fairtune::nnet {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::vector<double> squeeze_window(std::span<const double> window, double eps) {
    std::vector<double> out(window.size(), 0.5);
    if (window.empty()) return out;
    const auto [lo, hi] = std::minmax_element(window.begin(), window.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) return out;
    for (std::size_t i = 0; i < window.size(); ++i) {
        out[i] = eps + (1.0 - 2.0 * eps) * (window[i] - *lo) / range;
    }
    return out;
}

double logit_laplace_nll(double x, double mu, double log_b) {
    require(std::isfinite(x) && std::isfinite(mu) && std::isfinite(log_b), ErrorKind::Numerical,
            "logit-Laplace: non-finite input");
    require(x > 0.0 && x < 1.0, ErrorKind::Invalid, "logit-Laplace: x must lie in (0,1)");
    const double u = std::log(x / (1.0 - x));
    const double b = std::exp(log_b);
    return std::numbers::ln2 + log_b + std::abs(u - mu) / b + std::log(x * (1.0 - x));
}

LaplaceTerm logit_laplace_loss(std::span<const double> x, std::span<const double> mu,
                               std::span<const double> log_b) {
    require(x.size() == mu.size() && x.size() == log_b.size() && !x.empty(), ErrorKind::Invalid,
            "logit-Laplace: size mismatch");
    LaplaceTerm t;
    t.d_mu.resize(x.size());
    t.d_log_b.resize(x.size());
    const double inv_n = 1.0 / static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        t.loss += logit_laplace_nll(x[i], mu[i], log_b[i]);
        const double u = std::log(x[i] / (1.0 - x[i]));
        const double inv_b = std::exp(-log_b[i]);
        const double r = u - mu[i];
        t.d_mu[i] = -sign(r) * inv_b * inv_n;
        t.d_log_b[i] = (1.0 - std::abs(r) * inv_b) * inv_n;
    }
    t.loss *= inv_n;
    if (!std::isfinite(t.loss)) fail(ErrorKind::Numerical, "logit-Laplace: non-finite loss");
    return t;
}

CompositeLoss composite_loss(const NetConfig& cfg, const ForwardOutput& out, const Mat& signals,
                             std::span<const double> hr_true, std::span<const double> weights) {
    const auto B = static_cast<std::size_t>(out.hr_pred.size());
    require(B > 0, ErrorKind::Invalid, "composite_loss: empty batch");
    require(hr_true.size() == B, ErrorKind::Invalid, "composite_loss: hr_true size mismatch");
    require(weights.empty() || weights.size() == B, ErrorKind::Invalid, "composite_loss: weight size mismatch");
    require(static_cast<std::size_t>(signals.rows()) == B && signals.cols() == cfg.seq_len(), ErrorKind::Invalid,
            "composite_loss: signal shape mismatch");

    double wsum = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        const double wi = weights.empty() ? 1.0 : weights[i];
        require(wi >= 0.0 && std::isfinite(wi), ErrorKind::Invalid, "composite_loss: weights must be >= 0");
        wsum += wi;
    }
    require(wsum > 0.0, ErrorKind::Invalid, "composite_loss: weights sum to zero");

    const int T = cfg.context_patches;
    const int P = cfg.patch_len;
    const double alpha = cfg.recon_weight;

    CompositeLoss res;
    res.l1.resize(B);
    res.ll.resize(B);
    res.per_record.resize(B);
    res.grads.d_hr_raw = Vec::Zero(static_cast<Eigen::Index>(B));
    if (alpha > 0.0) res.grads.d_recon = Mat::Zero(out.recon.rows(), out.recon.cols());

    std::vector<double> mu(static_cast<std::size_t>(cfg.seq_len()));
    std::vector<double> log_b(mu.size());
    for (std::size_t i = 0; i < B; ++i) {
        const auto bi = static_cast<Eigen::Index>(i);
        const double wi = (weights.empty() ? 1.0 : weights[i]) / wsum;

        const double err = out.hr_pred[bi] - hr_true[i];
        res.l1[i] = std::abs(err) / cfg.hr_scale;
        // d/d hr_raw of |c + s*raw - y| / s
        res.grads.d_hr_raw[bi] = wi * sign(err);

        // The reconstruction term is always reported, even when it carries no weight.
        std::span<const double> sig(signals.row(bi).data(), mu.size());
        const auto x = squeeze_window(sig);
        for (int t = 0; t < T; ++t) {
            const auto row = out.recon.row(static_cast<Eigen::Index>(i) * T + t);
            for (int p = 0; p < P; ++p) {
                mu[static_cast<std::size_t>(t * P + p)] = row(p);
                log_b[static_cast<std::size_t>(t * P + p)] = row(P + p);
            }
        }
        auto term = logit_laplace_loss(x, mu, log_b);
        res.ll[i] = term.loss;
        if (alpha > 0.0) {
            for (int t = 0; t < T; ++t) {
                auto drow = res.grads.d_recon.row(static_cast<Eigen::Index>(i) * T + t);
                for (int p = 0; p < P; ++p) {
                    drow(p) = wi * alpha * term.d_mu[static_cast<std::size_t>(t * P + p)];
                    drow(P + p) = wi * alpha * term.d_log_b[static_cast<std::size_t>(t * P + p)];
                }
            }
        }
        res.per_record[i] = res.l1[i] + alpha * res.ll[i];
        res.total += wi * res.per_record[i];
        res.mean_l1 += res.l1[i];
        res.mean_ll += res.ll[i];
    }
    res.mean_l1 /= static_cast<double>(B);
    res.mean_ll /= static_cast<double>(B);
    if (!std::isfinite(res.total)) fail(ErrorKind::Numerical, "composite_loss: non-finite loss");
    return res;
}

}  // namespace fairtune::nnet
