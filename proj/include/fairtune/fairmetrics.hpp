#pragma once

// Accuracy, fairness and representation metrics over evaluation dumps.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairtune/common.hpp"
#include "fairtune/nnet.hpp"

namespace fairtune::fairmetrics {

using nnet::Mat;

struct EvalRecord {
    double hr_true = 0.0;
    double hr_pred = 0.0;
    Gender gender = Gender::Female;
    std::string dataset;
    std::vector<double> embedding;
};

std::string eval_record_to_jsonl(const EvalRecord& r);
EvalRecord eval_record_from_json_line(std::string_view line);
void write_eval_dump(const std::filesystem::path& path, std::span<const EvalRecord> records);
std::vector<EvalRecord> read_eval_dump(const std::filesystem::path& path);

enum class HrBin { Bradycardia = 0, Normal = 1, Tachycardia = 2 };

/// < 75 bradycardia, [75, 95] normal, > 95 tachycardia.
HrBin hr_bin(double hr_bpm);
std::string_view bin_name(HrBin b);

double mae(std::span<const EvalRecord> records);

struct GroupMae {
    double total = 0.0;
    double male = 0.0;
    double female = 0.0;
    double gap = 0.0;  // |male - female|
    std::size_t n_male = 0;
    std::size_t n_female = 0;
};

GroupMae group_mae(std::span<const EvalRecord> records);
double fairness_gap(std::span<const EvalRecord> records);

/// Mean silhouette with Euclidean distances. Rows of `embeddings` are points; labels are arbitrary ints.
/// Points whose label occurs once score 0. Throws Invalid with fewer than two distinct labels.
double silhouette(const Mat& embeddings, std::span<const int> labels);

/// Silhouette of the embeddings labeled by hr_bin(hr_true) or hr_bin(hr_pred). Subsamples (seeded) to
/// `max_points` first. Returns NaN when fewer than two bins are populated.
double silhouette_by_hr(std::span<const EvalRecord> records, bool use_prediction, std::size_t max_points,
                        std::uint64_t seed);

struct StratifiedSample {
    std::vector<std::size_t> indices;                // into the input, grouped by stratum
    std::map<std::string, std::size_t> cell_counts;  // "dataset|gender|bin" -> realized count
};

/// Up to `per_stratum` draws without replacement per (dataset, gender, hr_bin(hr_true)) cell.
StratifiedSample stratified_sample(std::span<const EvalRecord> records, std::size_t per_stratum,
                                   std::uint64_t seed);

/// Biased (V-statistic) squared MMD with k(x,y) = exp(-gamma ||x - y||^2). Rows are samples.
double mmd2_rbf(const Mat& x, const Mat& y, double gamma = 1.0);

/// Stratified sample, then MMD^2 between male and female embeddings. NaN if a gender is absent.
double gender_mmd2(std::span<const EvalRecord> records, std::size_t per_stratum, std::uint64_t seed,
                   double gamma = 1.0);

struct Interval {
    double median = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

double median(std::span<const double> values);
/// Linear-interpolated quantile of sorted values, q in [0, 1].
double quantile_sorted(std::span<const double> sorted, double q);

/// Percentile bootstrap of the median over `values` (one per seed).
Interval bootstrap_ci(std::span<const double> values, int resamples = 1000, double level = 0.95,
                      std::uint64_t seed = 0);

struct RunMetrics {
    GroupMae mae;
    double silhouette_true = 0.0;
    double silhouette_pred = 0.0;
    double mmd2 = 0.0;
};

RunMetrics compute_run_metrics(std::span<const EvalRecord> records, std::uint64_t seed);
nlohmann::json run_metrics_to_json(const RunMetrics& m);
RunMetrics run_metrics_from_json(const nlohmann::json& j);

struct FairnessReport {
    std::string source;
    std::string target;
    std::string method;
    std::vector<std::uint64_t> seeds;
    Interval mae_total, mae_male, mae_female, gap;
    Interval silhouette_true, silhouette_pred, mmd2;
    std::size_t n_male = 0;
    std::size_t n_female = 0;
};

/// Aggregates per-seed metrics: each field is the bootstrap median and CI of its per-run values
/// (so the gap is a median of per-run gaps).
FairnessReport aggregate(std::string source, std::string target, std::string method,
                         std::span<const std::uint64_t> seeds, std::span<const RunMetrics> runs,
                         std::uint64_t bootstrap_seed, int resamples = 1000);

nlohmann::json report_to_json(const FairnessReport& r);

inline constexpr std::string_view kTable3Header =
    "trainset,testset,method,mae_total_med,mae_total_lo,mae_total_hi,mae_male_med,mae_male_lo,mae_male_hi,"
    "mae_female_med,mae_female_lo,mae_female_hi,gap_med,gap_lo,gap_hi,silhouette_true,silhouette_pred,mmd2";

std::string table3_row(const FairnessReport& r);

}  // namespace fairtune::fairmetrics
