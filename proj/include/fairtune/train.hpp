#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fairtune/mitigate.hpp"
#include "fairtune/nnet.hpp"
#include "fairtune/optim.hpp"

namespace fairtune::nnet {

struct TrainConfig {
    int epochs = 10;  // <= 50
    int batch_size = 32;
    std::uint64_t seed = 0;
    LrSchedule schedule;  // total_steps is filled in by train()
    AdamConfig adam;
};

struct TrainLogRow {
    int epoch = 0;
    long step = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_l1 = 0.0;
    double loss_ll = 0.0;
    double loss_group_f = 0.0;  // NaN when the batch holds no such record
    double loss_group_m = 0.0;
};

struct EpochSummary {
    int epoch = 0;
    double loss_total = 0.0;
    double mae_bpm = 0.0;
    mitigate::GroupValues group_loss{0.0, 0.0};
    mitigate::GroupValues group_weight{1.0, 1.0};
    double lr_last = 0.0;
    double adversary_loss = 0.0;
    double adversary_entropy = 0.0;
    long skipped_adversary_batches = 0;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    std::vector<EpochSummary> epochs;
    long steps_per_epoch = 0;
    long total_steps = 0;
};

long steps_per_epoch(std::size_t n_records, int batch_size);

/// Index stream for one epoch: a shuffle for Unbalanced/ADV, weighted draws with replacement for IF and
/// GroupDRO.
std::vector<std::size_t> epoch_indices(std::size_t n_records, std::span<const double> sample_weights,
                                       bool weighted, std::uint64_t seed);

/// Trains in place. Deterministic given (initial net, records, configs). Throws Error(Numerical) on divergence
/// and Error(Invalid) when a group-aware method is missing a group.
TrainResult train(TinyPpgNet& net, std::span<const synthpg::PpgRecord> records,
                  const mitigate::MitigationConfig& mitigation, const TrainConfig& cfg);

/// CSV with header epoch,step,lr,loss_total,loss_l1,loss_ll,loss_group_F,loss_group_M.
std::string train_log_csv(const TrainResult& r);

}  // namespace fairtune::nnet
