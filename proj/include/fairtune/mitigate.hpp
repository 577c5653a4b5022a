#pragma once

// Training-time bias mitigation: inverse-frequency sampling, GroupDRO reweighting and an adversarial
// demographic classifier whose prediction entropy the backbone maximizes.

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairtune/nnet.hpp"
#include "fairtune/loss.hpp"
#include "fairtune/optim.hpp"

namespace fairtune::mitigate {

using nnet::Mat;

enum class MitigationKind { Unbalanced, IF, GroupDRO, ADV };

std::string_view kind_name(MitigationKind k);  // "none" | "if" | "dro" | "adv"
std::string_view kind_label(MitigationKind k);  // "Unbalanced" | "IF" | "GroupDRO" | "ADV"
MitigationKind parse_kind(std::string_view s);

struct AdversaryConfig {
    int hidden_dim = 16;
    double lr = 1e-3;
    int steps_per_batch = 1;
};

struct MitigationConfig {
    MitigationKind kind = MitigationKind::Unbalanced;
    double eta = 1.0;
    double lambda = 0.1;
    AdversaryConfig adversary;
    double group_loss_momentum = 0.9;

    void validate() const;
};

nlohmann::json to_json(const MitigationConfig& c);
MitigationConfig mitigation_from_json(const nlohmann::json& j);

using GroupCounts = std::array<std::size_t, kNumGenders>;
using GroupValues = std::array<double, kNumGenders>;

GroupCounts count_groups(std::span<const Gender> genders);

/// Per-sample weight 1 / (2 f_g) for each binary group. Throws Invalid if a group is empty.
GroupValues if_weights(const GroupCounts& counts);

/// Expands per-group weights to one weight per sample.
std::vector<double> per_sample_weights(std::span<const Gender> genders, const GroupValues& group_weight);

/// I.i.d. draws with replacement, P(i) proportional to weights[i]. Throws Invalid on a nonpositive weight.
std::vector<std::size_t> weighted_sampler(std::span<const double> weights, std::size_t n_draws, std::uint64_t seed);

struct DroWeights {
    std::vector<double> normalized_loss;  // (L_g - min) / (max - min), 0 when max == min
    std::vector<double> group_weight;     // 1 + eta * normalized_loss
    std::vector<double> sample_weight;    // group_weight / |G_g|
};

/// Pure normalization and reweighting formula over any number of groups.
DroWeights dro_weights(std::span<const double> group_losses, std::span<const std::size_t> group_sizes, double eta);

struct GroupState {
    GroupValues running_loss{0.0, 0.0};
    std::array<bool, kNumGenders> seen{false, false};
    GroupCounts counts{0, 0};
    GroupValues group_weight{1.0, 1.0};
    GroupValues sample_weight{0.0, 0.0};
};

GroupState make_group_state(const GroupCounts& counts);

/// Folds this epoch's mean per-group losses into the running averages, then recomputes weights.
/// Groups with a NaN epoch loss (not sampled) keep their running value.
void dro_update(GroupState& state, const GroupValues& epoch_group_loss, double eta, double momentum);

/// Batch-mean Shannon entropy (natural log) of rows of `probs`.
double adversary_entropy(const Mat& probs);

struct Adversary {
    AdversaryConfig config;
    Mat w1, b1, w2, b2;
    nnet::OptimizerState opt;
};

Adversary make_adversary(int input_dim, const AdversaryConfig& cfg, std::uint64_t seed);

struct AdversaryOutput {
    Mat hidden;
    Mat logits;
    Mat probs;
};

AdversaryOutput adversary_forward(const Adversary& adv, const Mat& features);

/// Cross-entropy of the adversary on (features, labels).
double adversary_loss(const Adversary& adv, const Mat& features, std::span<const Gender> labels);
double adversary_accuracy(const Adversary& adv, const Mat& features, std::span<const Gender> labels);

/// One Adam step on the cross-entropy; features are treated as constants. Returns the pre-step loss.
double adversary_train_step(Adversary& adv, const Mat& features, std::span<const Gender> labels);

struct EntropyGrad {
    double entropy = 0.0;
    Mat d_features;  // d(batch-mean entropy)/d features
};

EntropyGrad adversary_entropy_grad(const Adversary& adv, const Mat& features);

struct AdvDiagnostics {
    bool skipped = false;  // batch held a single group
    double adversary_loss = 0.0;
    double entropy = 0.0;
};

struct StepResult {
    nnet::CompositeLoss loss;
    double lr = 0.0;
    AdvDiagnostics adv;
};

/// Alternating update: `steps_per_batch` adversary steps on detached penultimate features, then one
/// backbone step on composite_loss - lambda * H(adversary) with the adversary frozen.
StepResult adv_training_step(nnet::TinyPpgNet& net, nnet::OptimizerState& opt, Adversary& adv,
                             std::span<const synthpg::PpgRecord* const> batch, double lambda);

}  // namespace fairtune::mitigate
