#include "fairtune/mitigate.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fairtune/loss.hpp"

namespace fairtune::mitigate {

std::string_view kind_name(MitigationKind k) {
    switch (k) {
        case MitigationKind::Unbalanced: return "none";
        case MitigationKind::IF: return "if";
        case MitigationKind::GroupDRO: return "dro";
        case MitigationKind::ADV: return "adv";
    }
    return "none";
}

std::string_view kind_label(MitigationKind k) {
    switch (k) {
        case MitigationKind::Unbalanced: return "Unbalanced";
        case MitigationKind::IF: return "IF";
        case MitigationKind::GroupDRO: return "GroupDRO";
        case MitigationKind::ADV: return "ADV";
    }
    return "Unbalanced";
}

MitigationKind parse_kind(std::string_view s) {
    if (s == "none" || s == "Unbalanced" || s == "unbalanced") return MitigationKind::Unbalanced;
    if (s == "if" || s == "IF") return MitigationKind::IF;
    if (s == "dro" || s == "GroupDRO" || s == "groupdro") return MitigationKind::GroupDRO;
    if (s == "adv" || s == "ADV") return MitigationKind::ADV;
    fail(ErrorKind::Usage, "unknown mitigation \"" + std::string(s) + "\"");
}

void MitigationConfig::validate() const {
    require(std::isfinite(eta) && eta >= 0.0, ErrorKind::Invalid, "eta must be >= 0");
    require(std::isfinite(lambda) && lambda >= 0.0, ErrorKind::Invalid, "lambda must be >= 0");
    require(group_loss_momentum >= 0.0 && group_loss_momentum < 1.0, ErrorKind::Invalid,
            "group_loss_momentum must lie in [0,1)");
    require(adversary.hidden_dim >= 1 && adversary.steps_per_batch >= 0 && adversary.lr > 0.0, ErrorKind::Invalid,
            "invalid adversary config");
}

nlohmann::json to_json(const MitigationConfig& c) {
    return {{"kind", kind_name(c.kind)},
            {"eta", c.eta},
            {"lambda", c.lambda},
            {"group_loss_momentum", c.group_loss_momentum},
            {"adversary",
             {{"hidden_dim", c.adversary.hidden_dim},
              {"lr", c.adversary.lr},
              {"steps_per_batch", c.adversary.steps_per_batch}}}};
}

MitigationConfig mitigation_from_json(const nlohmann::json& j) {
    MitigationConfig c;
    try {
        c.kind = parse_kind(j.value("kind", std::string(kind_name(c.kind))));
        c.eta = j.value("eta", c.eta);
        c.lambda = j.value("lambda", c.lambda);
        c.group_loss_momentum = j.value("group_loss_momentum", c.group_loss_momentum);
        if (j.contains("adversary")) {
            const auto& a = j.at("adversary");
            c.adversary.hidden_dim = a.value("hidden_dim", c.adversary.hidden_dim);
            c.adversary.lr = a.value("lr", c.adversary.lr);
            c.adversary.steps_per_batch = a.value("steps_per_batch", c.adversary.steps_per_batch);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("mitigation: ") + e.what());
    }
    c.validate();
    return c;
}

GroupCounts count_groups(std::span<const Gender> genders) {
    GroupCounts c{0, 0};
    for (Gender g : genders) ++c[static_cast<std::size_t>(g)];
    return c;
}

GroupValues if_weights(const GroupCounts& counts) {
    const std::size_t total = counts[0] + counts[1];
    GroupValues w{};
    for (std::size_t g = 0; g < kNumGenders; ++g) {
        require(counts[g] > 0, ErrorKind::Invalid, "if_weights: a group has zero count");
        const double freq = static_cast<double>(counts[g]) / static_cast<double>(total);
        w[g] = 1.0 / (2.0 * freq);
    }
    return w;
}

std::vector<double> per_sample_weights(std::span<const Gender> genders, const GroupValues& group_weight) {
    std::vector<double> w(genders.size());
    for (std::size_t i = 0; i < genders.size(); ++i) w[i] = group_weight[static_cast<std::size_t>(genders[i])];
    return w;
}

std::vector<std::size_t> weighted_sampler(std::span<const double> weights, std::size_t n_draws, std::uint64_t seed) {
    require(!weights.empty(), ErrorKind::Invalid, "weighted_sampler: no weights");
    for (double w : weights) {
        require(std::isfinite(w) && w > 0.0, ErrorKind::Invalid, "weighted_sampler: weights must be > 0");
    }
    std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
    Rng rng(seed);
    std::vector<std::size_t> out(n_draws);
    for (auto& i : out) i = dist(rng);
    return out;
}

DroWeights dro_weights(std::span<const double> group_losses, std::span<const std::size_t> group_sizes, double eta) {
    require(!group_losses.empty() && group_losses.size() == group_sizes.size(), ErrorKind::Invalid,
            "dro_weights: size mismatch");
    require(std::isfinite(eta) && eta >= 0.0, ErrorKind::Invalid, "dro_weights: eta must be >= 0");
    for (double l : group_losses) require(std::isfinite(l), ErrorKind::Numerical, "dro_weights: non-finite loss");
    const auto [lo_it, hi_it] = std::minmax_element(group_losses.begin(), group_losses.end());
    const double lo = *lo_it;
    const double range = *hi_it - lo;
    DroWeights out;
    for (std::size_t g = 0; g < group_losses.size(); ++g) {
        const double norm = range > 0.0 ? (group_losses[g] - lo) / range : 0.0;
        const double wg = 1.0 + eta * norm;
        out.normalized_loss.push_back(norm);
        out.group_weight.push_back(wg);
        out.sample_weight.push_back(group_sizes[g] > 0 ? wg / static_cast<double>(group_sizes[g]) : 0.0);
    }
    return out;
}

GroupState make_group_state(const GroupCounts& counts) {
    GroupState s;
    s.counts = counts;
    for (std::size_t g = 0; g < kNumGenders; ++g) {
        s.sample_weight[g] = counts[g] > 0 ? 1.0 / static_cast<double>(counts[g]) : 0.0;
    }
    return s;
}

void dro_update(GroupState& state, const GroupValues& epoch_group_loss, double eta, double momentum) {
    for (std::size_t g = 0; g < kNumGenders; ++g) {
        const double l = epoch_group_loss[g];
        if (std::isnan(l)) continue;
        require(std::isfinite(l), ErrorKind::Numerical, "dro_update: non-finite group loss");
        state.running_loss[g] = state.seen[g] ? momentum * state.running_loss[g] + (1.0 - momentum) * l : l;
        state.seen[g] = true;
    }
    std::vector<double> losses;
    std::vector<std::size_t> sizes;
    std::vector<std::size_t> ids;
    for (std::size_t g = 0; g < kNumGenders; ++g) {
        if (!state.seen[g]) continue;
        losses.push_back(state.running_loss[g]);
        sizes.push_back(state.counts[g]);
        ids.push_back(g);
    }
    if (losses.empty()) return;
    const auto w = dro_weights(losses, sizes, eta);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        state.group_weight[ids[i]] = w.group_weight[i];
        state.sample_weight[ids[i]] = w.sample_weight[i];
    }
}

double adversary_entropy(const Mat& probs) {
    require(probs.rows() > 0, ErrorKind::Invalid, "adversary_entropy: empty batch");
    double total = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        for (Eigen::Index k = 0; k < probs.cols(); ++k) {
            const double p = probs(i, k);
            require(p >= 0.0, ErrorKind::Invalid, "adversary_entropy: negative probability");
            if (p > 0.0) total -= p * std::log(p);
        }
    }
    return total / static_cast<double>(probs.rows());
}

Adversary make_adversary(int input_dim, const AdversaryConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    auto uniform = [&](Eigen::Index r, Eigen::Index c, double bound) {
        std::uniform_real_distribution<double> d(-bound, bound);
        Mat m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
        return m;
    };
    Adversary a;
    a.config = cfg;
    a.w1 = uniform(input_dim, cfg.hidden_dim, 1.0 / std::sqrt(static_cast<double>(input_dim)));
    a.b1 = Mat::Zero(1, cfg.hidden_dim);
    a.w2 = uniform(cfg.hidden_dim, kNumGenders, 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim)));
    a.b2 = Mat::Zero(1, kNumGenders);
    nnet::AdamConfig adam;
    adam.weight_decay = 0.0;
    nnet::LrSchedule constant{0.0, cfg.lr, cfg.lr, cfg.lr, 1};
    std::array<Mat*, 4> ptrs{&a.w1, &a.b1, &a.w2, &a.b2};
    a.opt = nnet::make_optimizer(ptrs, adam, constant);
    return a;
}

AdversaryOutput adversary_forward(const Adversary& adv, const Mat& features) {
    require(features.cols() == adv.w1.rows(), ErrorKind::Invalid, "adversary: feature dimension mismatch");
    AdversaryOutput o;
    Mat pre = features * adv.w1;
    pre.rowwise() += adv.b1.row(0);
    o.hidden = pre.array().tanh();
    o.logits = o.hidden * adv.w2;
    o.logits.rowwise() += adv.b2.row(0);
    o.probs.resize(o.logits.rows(), o.logits.cols());
    for (Eigen::Index i = 0; i < o.logits.rows(); ++i) {
        const double mx = o.logits.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (o.logits.row(i).array() - mx).exp();
        o.probs.row(i) = e / e.sum();
    }
    return o;
}

double adversary_loss(const Adversary& adv, const Mat& features, std::span<const Gender> labels) {
    require(static_cast<std::size_t>(features.rows()) == labels.size() && !labels.empty(), ErrorKind::Invalid,
            "adversary_loss: label count mismatch");
    const auto o = adversary_forward(adv, features);
    double loss = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double p = o.probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i]));
        loss -= std::log(std::max(p, 1e-300));
    }
    return loss / static_cast<double>(labels.size());
}

double adversary_accuracy(const Adversary& adv, const Mat& features, std::span<const Gender> labels) {
    const auto o = adversary_forward(adv, features);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        Eigen::Index arg = 0;
        o.probs.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
        if (arg == static_cast<Eigen::Index>(labels[i])) ++hit;
    }
    return labels.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(labels.size());
}

namespace {

struct AdvGrads {
    Mat w1, b1, w2, b2;
    Mat d_features;
};

// Backpropagates d_logits through the adversary.
AdvGrads adversary_backward(const Adversary& adv, const Mat& features, const AdversaryOutput& o,
                            const Mat& d_logits) {
    AdvGrads g;
    g.w2 = o.hidden.transpose() * d_logits;
    g.b2 = d_logits.colwise().sum();
    Mat d_hidden = d_logits * adv.w2.transpose();
    Mat d_pre = d_hidden.array() * (1.0 - o.hidden.array().square());
    g.w1 = features.transpose() * d_pre;
    g.b1 = d_pre.colwise().sum();
    g.d_features = d_pre * adv.w1.transpose();
    return g;
}

}  // namespace

double adversary_train_step(Adversary& adv, const Mat& features, std::span<const Gender> labels) {
    require(static_cast<std::size_t>(features.rows()) == labels.size() && !labels.empty(), ErrorKind::Invalid,
            "adversary_train_step: label count mismatch");
    const auto o = adversary_forward(adv, features);
    const double n = static_cast<double>(labels.size());
    Mat d_logits = o.probs / n;
    double loss = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const auto c = static_cast<Eigen::Index>(labels[i]);
        loss -= std::log(std::max(o.probs(r, c), 1e-300));
        d_logits(r, c) -= 1.0 / n;
    }
    loss /= n;
    require(std::isfinite(loss), ErrorKind::Numerical, "adversary: non-finite cross-entropy");
    const auto g = adversary_backward(adv, features, o, d_logits);
    std::array<Mat*, 4> params{&adv.w1, &adv.b1, &adv.w2, &adv.b2};
    std::array<const Mat*, 4> grads{&g.w1, &g.b1, &g.w2, &g.b2};
    // lr_start == lr_peak == lr_end, so the schedule is flat at every step.
    nnet::adam_step(adv.opt, params, grads);
    return loss;
}

EntropyGrad adversary_entropy_grad(const Adversary& adv, const Mat& features) {
    const auto o = adversary_forward(adv, features);
    EntropyGrad eg;
    eg.entropy = adversary_entropy(o.probs);
    const double n = static_cast<double>(features.rows());
    // dH/dz_k = -p_k (log p_k + H_row)
    Mat d_logits(o.probs.rows(), o.probs.cols());
    for (Eigen::Index i = 0; i < o.probs.rows(); ++i) {
        double h = 0.0;
        for (Eigen::Index k = 0; k < o.probs.cols(); ++k) {
            const double p = o.probs(i, k);
            if (p > 0.0) h -= p * std::log(p);
        }
        for (Eigen::Index k = 0; k < o.probs.cols(); ++k) {
            const double p = o.probs(i, k);
            d_logits(i, k) = p > 0.0 ? -p * (std::log(p) + h) / n : 0.0;
        }
    }
    eg.d_features = adversary_backward(adv, features, o, d_logits).d_features;
    return eg;
}

StepResult adv_training_step(nnet::TinyPpgNet& net, nnet::OptimizerState& opt, Adversary& adv,
                             std::span<const synthpg::PpgRecord* const> batch, double lambda) {
    require(!batch.empty(), ErrorKind::Invalid, "adv_training_step: empty batch");
    const Mat signals = nnet::batch_signals(batch, net.config);
    std::vector<double> hr(batch.size());
    std::vector<Gender> labels(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        hr[i] = batch[i]->hr_bpm;
        labels[i] = batch[i]->gender;
    }
    const auto counts = count_groups(labels);

    nnet::ForwardCache cache;
    const auto out = nnet::forward(net, signals, &cache);
    StepResult res;
    res.loss = nnet::composite_loss(net.config, out, signals, hr);

    nnet::OutputGrads grads = res.loss.grads;
    if (counts[0] == 0 || counts[1] == 0) {
        res.adv.skipped = true;
    } else {
        // Phase 1: adversary on detached features.
        for (int s = 0; s < adv.config.steps_per_batch; ++s) adversary_train_step(adv, out.penultimate, labels);
        res.adv.adversary_loss = adversary_loss(adv, out.penultimate, labels);
        // Phase 2: backbone maximizes the frozen adversary's entropy.
        const auto eg = adversary_entropy_grad(adv, out.penultimate);
        res.adv.entropy = eg.entropy;
        if (lambda != 0.0) grads.d_penultimate = -lambda * eg.d_features;
    }
    res.lr = nnet::adam_step(opt, net.params, nnet::backward(net, cache, grads));
    return res;
}

}  // namespace fairtune::mitigate
