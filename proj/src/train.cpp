#include "fairtune/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fairtune/io.hpp"
#include "fairtune/loss.hpp"

namespace fairtune::nnet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_finite(const NetParams& g, const char* what) {
    for (const auto& t : named_tensors(g)) {
        if (!t.value->allFinite()) fail(ErrorKind::Numerical, std::string(what) + ": non-finite value in " + t.name);
    }
}

}  // namespace

long steps_per_epoch(std::size_t n_records, int batch_size) {
    require(batch_size >= 1, ErrorKind::Invalid, "batch_size must be >= 1");
    return static_cast<long>((n_records + static_cast<std::size_t>(batch_size) - 1) /
                             static_cast<std::size_t>(batch_size));
}

std::vector<std::size_t> epoch_indices(std::size_t n_records, std::span<const double> sample_weights,
                                       bool weighted, std::uint64_t seed) {
    if (weighted) return mitigate::weighted_sampler(sample_weights, n_records, seed);
    std::vector<std::size_t> idx(n_records);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

TrainResult train(TinyPpgNet& net, std::span<const synthpg::PpgRecord> records,
                  const mitigate::MitigationConfig& mitigation, const TrainConfig& cfg) {
    using mitigate::MitigationKind;
    require(!records.empty(), ErrorKind::Invalid, "train: empty corpus");
    require(cfg.epochs >= 0 && cfg.epochs <= 50, ErrorKind::Invalid, "train: epochs must lie in [0, 50]");
    mitigation.validate();
    net.config.validate();

    std::vector<Gender> genders(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) genders[i] = records[i].gender;
    const auto counts = mitigate::count_groups(genders);
    if (mitigation.kind != MitigationKind::Unbalanced) {
        require(counts[0] > 0 && counts[1] > 0, ErrorKind::Invalid,
                "train: group-aware mitigation needs both genders in the training set");
    }

    TrainResult result;
    result.steps_per_epoch = steps_per_epoch(records.size(), cfg.batch_size);
    result.total_steps = result.steps_per_epoch * cfg.epochs;

    LrSchedule schedule = cfg.schedule;
    schedule.total_steps = std::max<long>(result.total_steps, 1);
    OptimizerState opt = make_optimizer(net.params, cfg.adam, schedule);

    const bool weighted = mitigation.kind == MitigationKind::IF || mitigation.kind == MitigationKind::GroupDRO;
    std::vector<double> sample_weights;
    mitigate::GroupState dro_state = mitigate::make_group_state(counts);
    if (mitigation.kind == MitigationKind::IF) {
        sample_weights = mitigate::per_sample_weights(genders, mitigate::if_weights(counts));
    } else if (mitigation.kind == MitigationKind::GroupDRO) {
        sample_weights = mitigate::per_sample_weights(genders, dro_state.sample_weight);
    }

    mitigate::Adversary adversary;
    if (mitigation.kind == MitigationKind::ADV) {
        adversary = mitigate::make_adversary(net.config.d_model, mitigation.adversary,
                                             derive_seed(cfg.seed, "adversary"));
    }

    const std::uint64_t sampler_seed = derive_seed(cfg.seed, "sampler");
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order =
            epoch_indices(records.size(), sample_weights, weighted, derive_seed(sampler_seed, epoch));

        EpochSummary summary;
        summary.epoch = epoch;
        mitigate::GroupValues group_sum{0.0, 0.0};
        std::array<std::size_t, kNumGenders> group_n{0, 0};
        double loss_sum = 0.0;
        double l1_sum = 0.0;
        std::size_t seen = 0;
        double adv_loss_sum = 0.0;
        double adv_entropy_sum = 0.0;
        long adv_batches = 0;

        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            std::vector<const synthpg::PpgRecord*> members;
            members.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) members.push_back(&records[order[i]]);

            CompositeLoss loss;
            double lr = 0.0;
            if (mitigation.kind == MitigationKind::ADV) {
                auto r = mitigate::adv_training_step(net, opt, adversary, members, mitigation.lambda);
                loss = std::move(r.loss);
                lr = r.lr;
                if (r.adv.skipped) {
                    ++summary.skipped_adversary_batches;
                } else {
                    adv_loss_sum += r.adv.adversary_loss;
                    adv_entropy_sum += r.adv.entropy;
                    ++adv_batches;
                }
            } else {
                const Mat signals = batch_signals(members, net.config);
                std::vector<double> hr(members.size());
                for (std::size_t i = 0; i < members.size(); ++i) hr[i] = members[i]->hr_bpm;
                ForwardCache cache;
                const auto out = forward(net, signals, &cache);
                loss = composite_loss(net.config, out, signals, hr);
                const NetParams grads = backward(net, cache, loss.grads);
                check_finite(grads, "gradient");
                lr = adam_step(opt, net.params, grads);
            }
            if (!std::isfinite(loss.total)) {
                fail(ErrorKind::Numerical, "training diverged at epoch " + std::to_string(epoch) + " step " +
                                               std::to_string(step) + ": loss is not finite");
            }
            check_finite(net.params, "parameters");

            TrainLogRow row;
            row.epoch = epoch;
            row.step = step;
            row.lr = lr;
            row.loss_total = loss.total;
            row.loss_l1 = loss.mean_l1;
            row.loss_ll = loss.mean_ll;
            mitigate::GroupValues bsum{0.0, 0.0};
            std::array<std::size_t, kNumGenders> bn{0, 0};
            for (std::size_t i = 0; i < members.size(); ++i) {
                const auto g = static_cast<std::size_t>(members[i]->gender);
                bsum[g] += loss.per_record[i];
                ++bn[g];
                group_sum[g] += loss.per_record[i];
                ++group_n[g];
                loss_sum += loss.per_record[i];
                l1_sum += loss.l1[i];
            }
            seen += members.size();
            row.loss_group_f = bn[0] ? bsum[0] / static_cast<double>(bn[0]) : kNaN;
            row.loss_group_m = bn[1] ? bsum[1] / static_cast<double>(bn[1]) : kNaN;
            result.log.push_back(row);
            summary.lr_last = lr;
            ++step;
        }

        for (std::size_t g = 0; g < kNumGenders; ++g) {
            summary.group_loss[g] = group_n[g] ? group_sum[g] / static_cast<double>(group_n[g]) : kNaN;
        }
        summary.loss_total = seen ? loss_sum / static_cast<double>(seen) : kNaN;
        summary.mae_bpm = seen ? l1_sum / static_cast<double>(seen) * net.config.hr_scale : kNaN;
        if (adv_batches > 0) {
            summary.adversary_loss = adv_loss_sum / static_cast<double>(adv_batches);
            summary.adversary_entropy = adv_entropy_sum / static_cast<double>(adv_batches);
        }

        if (mitigation.kind == MitigationKind::GroupDRO) {
            mitigate::dro_update(dro_state, summary.group_loss, mitigation.eta, mitigation.group_loss_momentum);
            sample_weights = mitigate::per_sample_weights(genders, dro_state.sample_weight);
            summary.group_weight = dro_state.group_weight;
        } else if (mitigation.kind == MitigationKind::IF) {
            summary.group_weight = mitigate::if_weights(counts);
        }
        result.epochs.push_back(summary);
    }
    return result;
}

std::string train_log_csv(const TrainResult& r) {
    std::string out = "epoch,step,lr,loss_total,loss_l1,loss_ll,loss_group_F,loss_group_M\n";
    for (const auto& row : r.log) {
        out += std::to_string(row.epoch) + ',' + std::to_string(row.step) + ',' + io::format_float(row.lr) + ',' +
               io::format_float(row.loss_total) + ',' + io::format_float(row.loss_l1) + ',' +
               io::format_float(row.loss_ll) + ',' + io::format_float(row.loss_group_f) + ',' +
               io::format_float(row.loss_group_m) + '\n';
    }
    return out;
}

}  // namespace fairtune::nnet
