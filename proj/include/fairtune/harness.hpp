#pragma once

// Transfer-matrix orchestration: scenarios, seed sweeps, scaling study, MMD study and report tables.
//
// Output layout under an output root:
//   runs/<hash>/{checkpoint, eval.jsonl, log.csv, metrics.json, config.json}
//   reports/{table3.csv, table3.json, table2.csv, scaling.csv, scaling_runs.csv, mmd.csv}

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairtune/fairmetrics.hpp"
#include "fairtune/mitigate.hpp"
#include "fairtune/nnet.hpp"
#include "fairtune/optim.hpp"
#include "fairtune/synthpg.hpp"

namespace fairtune::harness {

namespace fs = std::filesystem;

/// Dataset id -> corpus JSONL path.
using Registry = std::map<std::string, fs::path>;

inline constexpr std::uint64_t kDefaultSplitSeed = 20250917;

struct SplitConfig {
    double train_fraction = 0.8;
    std::uint64_t split_seed = kDefaultSplitSeed;
};

struct Split {
    std::vector<synthpg::PpgRecord> train;
    std::vector<synthpg::PpgRecord> test;
};

/// Whole subjects go to one side. Depends only on the set of subject ids, not on record order.
Split split_by_subject(const std::vector<synthpg::PpgRecord>& records, const SplitConfig& cfg = {});

struct Scenario {
    std::string source;
    std::string target;
    mitigate::MitigationConfig method;
    nnet::SizeClass size = nnet::SizeClass::XS;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    SplitConfig split;
    int epochs = 30;
    int batch_size = 32;
    nnet::LrSchedule schedule;
    nnet::AdamConfig adam;

    bool intra() const { return source == target; }
    std::string label() const;  // "source->target/method/size"
};

nlohmann::json scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const nlohmann::json& j);

/// Throws Invalid on unknown datasets, empty or repeated seeds, and on a cross-dataset scenario whose
/// source corpus resolves to the target corpus file.
void validate(const Scenario& s, const Registry& corpora);

/// Network initialization used by every entry point, so `--epochs 0` reproduces it exactly.
nnet::TinyPpgNet initial_net(nnet::SizeClass size, std::uint64_t seed);

/// Canonical JSON of everything that determines one run's outputs.
nlohmann::json run_identity(const Scenario& s, std::uint64_t seed, const Registry& corpora);
std::string config_hash(const nlohmann::json& identity);

struct RunArtifact {
    std::string source;
    std::string target;
    std::string method;  // kind label
    std::string size;
    std::uint64_t seed = 0;
    std::string hash;
    fs::path dir;
    bool ok = false;
    bool reused = false;  // loaded from an existing run directory
    std::string error;
    fairmetrics::RunMetrics metrics;    // trained net on the target test split
    fairmetrics::RunMetrics zero_shot;  // initial net on the same split
    double train_mae = 0.0;             // trained net on the source train split
    double wall_clock_s = 0.0;

    fs::path checkpoint() const { return dir / "checkpoint"; }
    fs::path eval_dump() const { return dir / "eval.jsonl"; }
    fs::path log_csv() const { return dir / "log.csv"; }
    fs::path metrics_file() const { return dir / "metrics.json"; }
};

nlohmann::json artifact_to_json(const RunArtifact& a);
RunArtifact artifact_from_json(const nlohmann::json& j, const fs::path& dir);

struct RunOptions {
    fs::path out_root = ".";
    int workers = 1;
    bool force = false;
    bool verbose = false;
};

/// FAIRTUNE_WORKERS when set to a positive integer, else `requested` (at least 1).
int resolve_workers(int requested);

/// Trains one net per seed on the source train split, then evaluates every seed on the target test split.
/// Training completes for all seeds before the target corpus is opened. Seeds that diverge are recorded
/// with ok = false. Existing run directories with a matching hash are reused unless `force`.
std::vector<RunArtifact> run_scenario(const Scenario& s, const Registry& corpora, const RunOptions& opt);

/// Every artifact found under out_root/runs.
std::vector<RunArtifact> load_artifacts(const fs::path& out_root);

struct ScalingRow {
    std::string source, target, size;
    std::size_t parameters = 0;
    double mae_median = 0.0;
    double gap_median = 0.0;
    double train_mae_median = 0.0;
    std::size_t runs = 0;
};

struct ScalingPoint {
    std::string source, target, size;
    std::uint64_t seed = 0;
    double mae = 0.0;
    double gap = 0.0;
};

struct ScalingResult {
    std::vector<ScalingRow> rows;      // one per size class
    std::vector<ScalingPoint> points;  // one per (size class, seed)
};

ScalingResult scaling_sweep(const std::string& source, const std::string& target,
                            const std::vector<nnet::SizeClass>& sizes, const Scenario& base,
                            const Registry& corpora, const RunOptions& opt);

std::string scaling_csv(const std::vector<ScalingResult>& results);
std::string scaling_runs_csv(const std::vector<ScalingResult>& results);

struct MmdEntry {
    std::string method;
    std::map<std::string, fs::path> checkpoints;  // dataset id -> checkpoint trained on that dataset
};

struct MmdRow {
    std::string method;
    double mmd2 = 0.0;
    std::size_t n_male = 0;
    std::size_t n_female = 0;
};

/// Penultimate features of each dataset's test split under its own checkpoint, concatenated, stratified
/// (dataset x gender x HR bin, 50 per cell) and compared across genders.
std::vector<MmdRow> mmd_study(const std::vector<MmdEntry>& entries, const Registry& corpora,
                              const SplitConfig& split, std::uint64_t seed);
std::string mmd_csv(const std::vector<MmdRow>& rows);

/// Evaluates a net on records, keeping penultimate features.
std::vector<fairmetrics::EvalRecord> evaluate(const nnet::TinyPpgNet& net,
                                              const std::vector<synthpg::PpgRecord>& records);

struct Report {
    std::vector<fairmetrics::FairnessReport> table3;
    std::string table3_csv;
    nlohmann::json table3_json;
    std::string table2_csv;
    std::vector<std::string> warnings;
};

inline constexpr std::string_view kTable2Header =
    "dataset,mae_pre,mae_fine,silhouette_true_pre,silhouette_true_fine,silhouette_pred_pre,silhouette_pred_fine,runs";

/// Aggregates artifacts per (source, target, method), sorted by that key. Failed runs are excluded with a
/// warning. Table 2 rows come from Unbalanced runs per target dataset, preferring intra-dataset runs.
/// With `size` set, artifacts of other model sizes are ignored; otherwise a group mixing sizes is Invalid.
Report make_report(const std::vector<RunArtifact>& artifacts, std::uint64_t bootstrap_seed = 0,
                   std::optional<nnet::SizeClass> size = std::nullopt);

/// Writes reports/table3.csv, reports/table3.json and reports/table2.csv under out_root.
void write_report(const Report& r, const fs::path& out_root);

// Experiment description for `fairtune all` and friends.

struct CorpusSpec {
    std::string id;
    synthpg::DomainProfile profile;
    int n_subjects = 1000;
    int windows = 5;
    std::uint64_t seed = 0;
    fs::path path;  // relative to the output root unless absolute
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::vector<CorpusSpec> corpora;
    std::vector<std::pair<std::string, std::string>> pairs;  // empty -> all ordered cross-dataset pairs
    std::vector<mitigate::MitigationKind> methods{
        mitigate::MitigationKind::Unbalanced, mitigate::MitigationKind::IF, mitigate::MitigationKind::GroupDRO,
        mitigate::MitigationKind::ADV};
    Scenario base;  // method, seeds, size, epochs and split shared by all scenarios
    std::vector<nnet::SizeClass> sweep_sizes{nnet::SizeClass::XS, nnet::SizeClass::S};
    std::vector<std::pair<std::string, std::string>> sweep_pairs;  // empty -> same as pairs
    bool run_sweep = true;
    bool run_mmd = true;
};

ExperimentConfig default_experiment();
nlohmann::json experiment_to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const fs::path& path);

std::vector<std::pair<std::string, std::string>> resolved_pairs(const ExperimentConfig& c);
Registry registry_for(const ExperimentConfig& c, const fs::path& out_root);

/// Generates any corpus file that does not exist yet.
void generate_corpora(const ExperimentConfig& c, const fs::path& out_root, int workers);

struct ExperimentSummary {
    std::vector<RunArtifact> artifacts;
    Report report;
    std::vector<ScalingResult> scaling;
    std::vector<MmdRow> mmd;
};

/// Corpora, full scenario matrix, optional scaling sweep and MMD study, then all report files.
ExperimentSummary run_experiment(const ExperimentConfig& c, const RunOptions& opt);

/// Per-method MMD entries built from the matrix artifacts: for each dataset, the first-seed checkpoint of a
/// run trained on it (intra-dataset preferred). `size` restricts the candidates to one model size.
std::vector<MmdEntry> mmd_entries_from_artifacts(const std::vector<RunArtifact>& artifacts,
                                                std::optional<nnet::SizeClass> size = std::nullopt);

}  // namespace fairtune::harness
