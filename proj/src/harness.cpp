#include "fairtune/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

#include "fairtune/checkpoint.hpp"
#include "fairtune/io.hpp"
#include "fairtune/train.hpp"

namespace fairtune::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kRunFormatVersion = 1;

// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first escaping exception.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!first) first = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first) std::rethrow_exception(first);
}

nlohmann::json schedule_to_json(const nnet::LrSchedule& s) {
    return {{"warmup_frac", s.warmup_frac}, {"lr_start", s.lr_start}, {"lr_peak", s.lr_peak}, {"lr_end", s.lr_end}};
}

nnet::LrSchedule schedule_from_json(const nlohmann::json& j) {
    nnet::LrSchedule s;
    s.warmup_frac = j.value("warmup_frac", s.warmup_frac);
    s.lr_start = j.value("lr_start", s.lr_start);
    s.lr_peak = j.value("lr_peak", s.lr_peak);
    s.lr_end = j.value("lr_end", s.lr_end);
    return s;
}

nlohmann::json adam_to_json(const nnet::AdamConfig& a) {
    return {{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay}};
}

nnet::AdamConfig adam_from_json(const nlohmann::json& j) {
    nnet::AdamConfig a;
    a.beta1 = j.value("beta1", a.beta1);
    a.beta2 = j.value("beta2", a.beta2);
    a.eps = j.value("eps", a.eps);
    a.weight_decay = j.value("weight_decay", a.weight_decay);
    return a;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::vector<synthpg::PpgRecord> test_split_of(const fs::path& corpus, const SplitConfig& split) {
    return split_by_subject(io::read_corpus(corpus), split).test;
}

double finite_median(const std::vector<double>& v) {
    std::vector<double> f;
    for (double x : v) {
        if (std::isfinite(x)) f.push_back(x);
    }
    return f.empty() ? kNaN : fairmetrics::median(f);
}

std::string pair_list_error(const std::string& a, const std::string& b) {
    return "unknown dataset in pair (" + a + ", " + b + ")";
}

}  // namespace

Split split_by_subject(const std::vector<synthpg::PpgRecord>& records, const SplitConfig& cfg) {
    require(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0, ErrorKind::Invalid,
            "train_fraction must lie in (0, 1)");
    std::set<std::string> ids;
    for (const auto& r : records) ids.insert(r.subject_id);
    std::vector<std::string> order(ids.begin(), ids.end());
    Rng rng(cfg.split_seed);
    std::shuffle(order.begin(), order.end(), rng);

    auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(order.size())));
    if (order.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, order.size() - 1);
    const std::set<std::string> train_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));

    Split s;
    for (const auto& r : records) (train_ids.count(r.subject_id) ? s.train : s.test).push_back(r);
    return s;
}

std::string Scenario::label() const {
    return source + "->" + target + "/" + std::string(mitigate::kind_label(method.kind)) + "/" +
           std::string(nnet::size_class_name(size));
}

nlohmann::json scenario_to_json(const Scenario& s) {
    return {{"source", s.source},
            {"target", s.target},
            {"method", mitigate::to_json(s.method)},
            {"size", nnet::size_class_name(s.size)},
            {"seeds", s.seeds},
            {"train_fraction", s.split.train_fraction},
            {"split_seed", s.split.split_seed},
            {"epochs", s.epochs},
            {"batch_size", s.batch_size},
            {"schedule", schedule_to_json(s.schedule)},
            {"adam", adam_to_json(s.adam)}};
}

Scenario scenario_from_json(const nlohmann::json& j) {
    Scenario s;
    try {
        s.source = j.value("source", s.source);
        s.target = j.value("target", s.target);
        if (j.contains("method")) s.method = mitigate::mitigation_from_json(j.at("method"));
        if (j.contains("size")) s.size = nnet::parse_size_class(j.at("size").get<std::string>());
        if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        s.split.train_fraction = j.value("train_fraction", s.split.train_fraction);
        s.split.split_seed = j.value("split_seed", s.split.split_seed);
        s.epochs = j.value("epochs", s.epochs);
        s.batch_size = j.value("batch_size", s.batch_size);
        if (j.contains("schedule")) s.schedule = schedule_from_json(j.at("schedule"));
        if (j.contains("adam")) s.adam = adam_from_json(j.at("adam"));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("scenario: ") + e.what());
    }
    return s;
}

void validate(const Scenario& s, const Registry& corpora) {
    require(corpora.count(s.source) == 1, ErrorKind::Invalid, "unknown source dataset '" + s.source + "'");
    require(corpora.count(s.target) == 1, ErrorKind::Invalid, "unknown target dataset '" + s.target + "'");
    require(!s.seeds.empty(), ErrorKind::Invalid, "scenario needs at least one seed");
    const std::set<std::uint64_t> distinct(s.seeds.begin(), s.seeds.end());
    require(distinct.size() == s.seeds.size(), ErrorKind::Invalid, "scenario seeds must be distinct");
    require(s.epochs >= 0 && s.epochs <= 50, ErrorKind::Invalid, "epochs must lie in [0, 50]");
    require(s.batch_size >= 1, ErrorKind::Invalid, "batch_size must be >= 1");
    require(s.split.train_fraction > 0.0 && s.split.train_fraction < 1.0, ErrorKind::Invalid,
            "train_fraction must lie in (0, 1)");
    s.method.validate();
    if (!s.intra()) {
        require(io::normalize_path(corpora.at(s.source)) != io::normalize_path(corpora.at(s.target)),
                ErrorKind::Invalid,
                "scenario " + s.label() + ": the training corpus is the target corpus; cross-dataset training "
                                          "must not read target data");
    }
}

nnet::TinyPpgNet initial_net(nnet::SizeClass size, std::uint64_t seed) {
    return nnet::init_net(nnet::NetConfig::for_size(size), derive_seed(seed, "init"));
}

nlohmann::json run_identity(const Scenario& s, std::uint64_t seed, const Registry& corpora) {
    auto corpus_id = [&](const std::string& id) {
        const auto& p = corpora.at(id);
        std::error_code ec;
        const auto size = fs::file_size(p, ec);
        return nlohmann::json{{"path", io::normalize_path(p)}, {"bytes", ec ? 0 : size}};
    };
    Scenario one = s;
    one.seeds = {seed};
    return {{"version", kRunFormatVersion},
            {"scenario", scenario_to_json(one)},
            {"net", nnet::net_config_to_json(nnet::NetConfig::for_size(s.size))},
            {"source_corpus", corpus_id(s.source)},
            {"target_corpus", corpus_id(s.target)}};
}

std::string config_hash(const nlohmann::json& identity) { return hex64(fnv1a(identity.dump())); }

nlohmann::json artifact_to_json(const RunArtifact& a) {
    return {{"source", a.source},
            {"target", a.target},
            {"method", a.method},
            {"size", a.size},
            {"seed", a.seed},
            {"hash", a.hash},
            {"ok", a.ok},
            {"error", a.error},
            {"metrics", fairmetrics::run_metrics_to_json(a.metrics)},
            {"zero_shot", fairmetrics::run_metrics_to_json(a.zero_shot)},
            {"train_mae", a.ok ? nlohmann::json(a.train_mae) : nlohmann::json(nullptr)},
            {"wall_clock_s", a.wall_clock_s}};
}

RunArtifact artifact_from_json(const nlohmann::json& j, const fs::path& dir) {
    RunArtifact a;
    try {
        a.source = j.at("source").get<std::string>();
        a.target = j.at("target").get<std::string>();
        a.method = j.at("method").get<std::string>();
        a.size = j.at("size").get<std::string>();
        a.seed = j.at("seed").get<std::uint64_t>();
        a.hash = j.at("hash").get<std::string>();
        a.ok = j.at("ok").get<bool>();
        a.error = j.value("error", "");
        if (a.ok) {
            a.metrics = fairmetrics::run_metrics_from_json(j.at("metrics"));
            a.zero_shot = fairmetrics::run_metrics_from_json(j.at("zero_shot"));
            a.train_mae = j.at("train_mae").get<double>();
        }
        a.wall_clock_s = j.value("wall_clock_s", 0.0);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, "run metadata in " + dir.string() + ": " + e.what());
    }
    a.dir = dir;
    return a;
}

int resolve_workers(int requested) {
    if (const char* env = std::getenv("FAIRTUNE_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) return static_cast<int>(v);
    }
    return std::max(1, requested);
}

std::vector<fairmetrics::EvalRecord> evaluate(const nnet::TinyPpgNet& net,
                                              const std::vector<synthpg::PpgRecord>& records) {
    constexpr std::size_t kChunk = 256;
    std::vector<fairmetrics::EvalRecord> out;
    out.reserve(records.size());
    for (std::size_t start = 0; start < records.size(); start += kChunk) {
        const std::size_t end = std::min(records.size(), start + kChunk);
        const std::span<const synthpg::PpgRecord> chunk(records.data() + start, end - start);
        const auto o = nnet::forward(net, nnet::batch_signals(chunk, net.config));
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            fairmetrics::EvalRecord e;
            e.hr_true = chunk[i].hr_bpm;
            e.hr_pred = o.hr_pred[static_cast<Eigen::Index>(i)];
            e.gender = chunk[i].gender;
            e.dataset = chunk[i].dataset;
            const auto row = o.penultimate.row(static_cast<Eigen::Index>(i));
            e.embedding.assign(row.data(), row.data() + row.size());
            out.push_back(std::move(e));
        }
    }
    return out;
}

std::vector<RunArtifact> run_scenario(const Scenario& s, const Registry& corpora, const RunOptions& opt) {
    validate(s, corpora);
    const int workers = resolve_workers(opt.workers);
    const fs::path runs_dir = opt.out_root / "runs";

    std::vector<RunArtifact> arts(s.seeds.size());
    std::vector<nlohmann::json> identities(s.seeds.size());
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < s.seeds.size(); ++i) {
        identities[i] = run_identity(s, s.seeds[i], corpora);
        auto& a = arts[i];
        a.hash = config_hash(identities[i]);
        a.dir = runs_dir / a.hash;
        if (!opt.force && fs::exists(a.metrics_file())) {
            a = artifact_from_json(nlohmann::json::parse(io::read_file(a.metrics_file())), a.dir);
            a.reused = true;
            continue;
        }
        a.source = s.source;
        a.target = s.target;
        a.method = std::string(mitigate::kind_label(s.method.kind));
        a.size = std::string(nnet::size_class_name(s.size));
        a.seed = s.seeds[i];
        pending.push_back(i);
    }
    if (pending.empty()) return arts;

    auto& access = io::AccessLog::instance();
    std::vector<std::optional<nnet::TinyPpgNet>> trained(s.seeds.size());
    std::vector<double> seconds(s.seeds.size(), 0.0);

    // Training phase: only the source corpus path is visible here.
    std::vector<synthpg::PpgRecord> intra_test;
    {
        access.mark("train:" + s.label());
        Split source = split_by_subject(io::read_corpus(corpora.at(s.source)), s.split);
        require(!source.train.empty(), ErrorKind::Invalid, "source train split is empty");
        parallel_for(pending.size(), workers, [&](std::size_t k) {
            const std::size_t i = pending[k];
            auto& a = arts[i];
            const auto t0 = std::chrono::steady_clock::now();
            fs::create_directories(a.dir);
            auto net = initial_net(s.size, a.seed);
            nnet::TrainConfig tc;
            tc.epochs = s.epochs;
            tc.batch_size = s.batch_size;
            tc.seed = a.seed;
            tc.schedule = s.schedule;
            tc.adam = s.adam;
            try {
                const auto result = nnet::train(net, source.train, s.method, tc);
                io::write_file_atomic(a.log_csv(), nnet::train_log_csv(result));
                nnet::save_checkpoint(a.checkpoint(), net, mitigate::to_json(s.method),
                                      {{"scenario", identities[i]["scenario"]}, {"hash", a.hash}});
                a.train_mae = fairmetrics::mae(evaluate(net, source.train));
                a.ok = true;
                trained[i] = std::move(net);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::Numerical) throw;
                a.ok = false;
                a.error = e.what();
                std::cerr << "warning: " << s.label() << " seed " << a.seed << " failed: " << e.what() << '\n';
            }
            seconds[i] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (opt.verbose) std::cerr << "trained " << s.label() << " seed " << a.seed << '\n';
        });
        if (s.intra()) intra_test = std::move(source.test);
    }

    // Evaluation phase.
    access.mark("eval:" + s.label());
    const std::vector<synthpg::PpgRecord> test =
        s.intra() ? std::move(intra_test) : test_split_of(corpora.at(s.target), s.split);
    require(!test.empty(), ErrorKind::Invalid, "target test split is empty");

    parallel_for(pending.size(), workers, [&](std::size_t k) {
        const std::size_t i = pending[k];
        auto& a = arts[i];
        const auto t0 = std::chrono::steady_clock::now();
        if (a.ok) {
            const auto records = evaluate(*trained[i], test);
            write_eval_dump(a.eval_dump(), records);
            a.metrics = fairmetrics::compute_run_metrics(records, a.seed);
            a.zero_shot = fairmetrics::compute_run_metrics(evaluate(initial_net(s.size, a.seed), test), a.seed);
        }
        seconds[i] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        a.wall_clock_s = seconds[i];
        io::write_file_atomic(a.dir / "config.json", identities[i].dump(2) + "\n");
        io::write_file_atomic(a.metrics_file(), artifact_to_json(a).dump(2) + "\n");
    });
    return arts;
}

std::vector<RunArtifact> load_artifacts(const fs::path& out_root) {
    const fs::path runs_dir = out_root / "runs";
    require(fs::is_directory(runs_dir), ErrorKind::Io, "no runs directory at " + runs_dir.string());
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(runs_dir)) {
        if (entry.is_directory() && fs::exists(entry.path() / "metrics.json")) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    std::vector<RunArtifact> out;
    for (const auto& d : dirs) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(io::read_file(d / "metrics.json"));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Schema, "run metadata in " + d.string() + ": " + e.what());
        }
        out.push_back(artifact_from_json(j, d));
    }
    return out;
}

ScalingResult scaling_sweep(const std::string& source, const std::string& target,
                            const std::vector<nnet::SizeClass>& sizes, const Scenario& base,
                            const Registry& corpora, const RunOptions& opt) {
    require(sizes.size() >= 2, ErrorKind::Invalid, "scaling sweep needs at least two size classes");
    ScalingResult result;
    for (auto size : sizes) {
        Scenario s = base;
        s.source = source;
        s.target = target;
        s.size = size;
        const auto arts = run_scenario(s, corpora, opt);
        ScalingRow row;
        row.source = source;
        row.target = target;
        row.size = std::string(nnet::size_class_name(size));
        row.parameters = nnet::parameter_count(nnet::NetConfig::for_size(size));
        std::vector<double> maes, gaps, train_maes;
        for (const auto& a : arts) {
            if (!a.ok) continue;
            maes.push_back(a.metrics.mae.total);
            gaps.push_back(a.metrics.mae.gap);
            train_maes.push_back(a.train_mae);
            result.points.push_back({source, target, row.size, a.seed, a.metrics.mae.total, a.metrics.mae.gap});
        }
        row.runs = maes.size();
        row.mae_median = finite_median(maes);
        row.gap_median = finite_median(gaps);
        row.train_mae_median = finite_median(train_maes);
        result.rows.push_back(row);
    }
    return result;
}

std::string scaling_csv(const std::vector<ScalingResult>& results) {
    std::string out = "trainset,testset,size,parameters,mae_med,gap_med,train_mae_med,runs\n";
    for (const auto& r : results) {
        for (const auto& row : r.rows) {
            out += row.source + ',' + row.target + ',' + row.size + ',' + std::to_string(row.parameters) + ',' +
                   io::format_float(row.mae_median) + ',' + io::format_float(row.gap_median) + ',' +
                   io::format_float(row.train_mae_median) + ',' + std::to_string(row.runs) + '\n';
        }
    }
    return out;
}

std::string scaling_runs_csv(const std::vector<ScalingResult>& results) {
    std::string out = "trainset,testset,size,seed,mae,gap\n";
    for (const auto& r : results) {
        for (const auto& p : r.points) {
            out += p.source + ',' + p.target + ',' + p.size + ',' + std::to_string(p.seed) + ',' +
                   io::format_float(p.mae) + ',' + io::format_float(p.gap) + '\n';
        }
    }
    return out;
}

std::vector<MmdRow> mmd_study(const std::vector<MmdEntry>& entries, const Registry& corpora,
                              const SplitConfig& split, std::uint64_t seed) {
    std::map<std::string, std::vector<synthpg::PpgRecord>> tests;
    std::vector<MmdRow> rows;
    for (const auto& entry : entries) {
        require(!entry.checkpoints.empty(), ErrorKind::Invalid, "mmd study: method " + entry.method + " has no checkpoint");
        std::vector<fairmetrics::EvalRecord> features;
        for (const auto& [dataset, ckpt] : entry.checkpoints) {
            require(corpora.count(dataset) == 1, ErrorKind::Invalid, "mmd study: unknown dataset '" + dataset + "'");
            require(fs::exists(ckpt), ErrorKind::Io, "mmd study: missing checkpoint " + ckpt.string());
            auto it = tests.find(dataset);
            if (it == tests.end()) it = tests.emplace(dataset, test_split_of(corpora.at(dataset), split)).first;
            const auto net = nnet::load_checkpoint(ckpt).net;
            auto recs = evaluate(net, it->second);
            features.insert(features.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
        }
        MmdRow row;
        row.method = entry.method;
        const auto sample = fairmetrics::stratified_sample(features, 50, seed);
        for (auto i : sample.indices) ++(features[i].gender == Gender::Male ? row.n_male : row.n_female);
        row.mmd2 = fairmetrics::gender_mmd2(features, 50, seed);
        rows.push_back(row);
    }
    std::sort(rows.begin(), rows.end(), [](const MmdRow& a, const MmdRow& b) { return a.method < b.method; });
    return rows;
}

std::string mmd_csv(const std::vector<MmdRow>& rows) {
    std::string out = "method,mmd2,n_male,n_female\n";
    for (const auto& r : rows) {
        out += r.method + ',' + io::format_float(r.mmd2) + ',' + std::to_string(r.n_male) + ',' +
               std::to_string(r.n_female) + '\n';
    }
    return out;
}

Report make_report(const std::vector<RunArtifact>& artifacts, std::uint64_t bootstrap_seed,
                   std::optional<nnet::SizeClass> size) {
    require(!artifacts.empty(), ErrorKind::Invalid, "report: no artifacts");
    Report rep;
    using Key = std::tuple<std::string, std::string, std::string>;
    std::map<Key, std::vector<const RunArtifact*>> groups;
    std::map<Key, std::set<std::string>> sizes;
    for (const auto& a : artifacts) {
        if (size && a.size != nnet::size_class_name(*size)) continue;
        if (!a.ok) {
            rep.warnings.push_back(a.source + "->" + a.target + "/" + a.method + " seed " + std::to_string(a.seed) +
                                   " excluded: " + a.error);
            continue;
        }
        groups[{a.source, a.target, a.method}].push_back(&a);
        sizes[{a.source, a.target, a.method}].insert(a.size);
    }
    for (const auto& [key, s] : sizes) {
        require(s.size() == 1, ErrorKind::Invalid,
                "report: " + std::get<0>(key) + "->" + std::get<1>(key) + "/" + std::get<2>(key) +
                    " mixes model sizes; select one size");
    }
    require(!groups.empty() || !rep.warnings.empty(), ErrorKind::Invalid, "report: no artifacts of the selected size");

    rep.table3_csv = std::string(fairmetrics::kTable3Header) + "\n";
    rep.table3_json = nlohmann::json::array();
    for (auto& [key, runs] : groups) {
        std::sort(runs.begin(), runs.end(),
                  [](auto* x, auto* y) { return std::tie(x->seed, x->hash) < std::tie(y->seed, y->hash); });
        // Runs of one seed under different hyperparameters: keep the first by hash.
        const auto dup = std::unique(runs.begin(), runs.end(), [](auto* x, auto* y) { return x->seed == y->seed; });
        for (auto it = dup; it != runs.end(); ++it) {
            rep.warnings.push_back(std::get<0>(key) + "->" + std::get<1>(key) + "/" + std::get<2>(key) + " seed " +
                                   std::to_string((*it)->seed) + " has several runs; kept " + (*(it - 1))->hash);
        }
        runs.erase(dup, runs.end());
        std::vector<std::uint64_t> seeds;
        std::vector<fairmetrics::RunMetrics> metrics;
        for (const auto* r : runs) {
            seeds.push_back(r->seed);
            metrics.push_back(r->metrics);
        }
        auto fr = fairmetrics::aggregate(std::get<0>(key), std::get<1>(key), std::get<2>(key), seeds, metrics,
                                         bootstrap_seed);
        rep.table3_csv += fairmetrics::table3_row(fr) + "\n";
        rep.table3_json.push_back(fairmetrics::report_to_json(fr));
        rep.table3.push_back(std::move(fr));
    }

    // Table 2: zero-shot initial net versus Unbalanced fine-tuning, per target dataset.
    const std::string unbalanced(mitigate::kind_label(mitigate::MitigationKind::Unbalanced));
    std::map<std::string, std::vector<const RunArtifact*>> by_target;
    for (const auto& [key, runs] : groups) {
        if (std::get<2>(key) != unbalanced) continue;
        auto& dst = by_target[std::get<1>(key)];
        dst.insert(dst.end(), runs.begin(), runs.end());
    }
    rep.table2_csv = std::string(kTable2Header) + "\n";
    for (auto& [target, runs] : by_target) {
        std::vector<const RunArtifact*> chosen;
        for (const auto* r : runs) {
            if (r->source == r->target) chosen.push_back(r);
        }
        if (chosen.empty()) chosen = runs;
        std::vector<double> pre, fine, st_pre, st_fine, sp_pre, sp_fine;
        for (const auto* r : chosen) {
            pre.push_back(r->zero_shot.mae.total);
            fine.push_back(r->metrics.mae.total);
            st_pre.push_back(r->zero_shot.silhouette_true);
            st_fine.push_back(r->metrics.silhouette_true);
            sp_pre.push_back(r->zero_shot.silhouette_pred);
            sp_fine.push_back(r->metrics.silhouette_pred);
        }
        auto f = [](const std::vector<double>& v) { return io::format_float(finite_median(v)); };
        rep.table2_csv += target + ',' + f(pre) + ',' + f(fine) + ',' + f(st_pre) + ',' + f(st_fine) + ',' +
                          f(sp_pre) + ',' + f(sp_fine) + ',' + std::to_string(chosen.size()) + '\n';
    }
    return rep;
}

void write_report(const Report& r, const fs::path& out_root) {
    const fs::path dir = out_root / "reports";
    fs::create_directories(dir);
    io::write_file_atomic(dir / "table3.csv", r.table3_csv);
    io::write_file_atomic(dir / "table3.json", r.table3_json.dump(2) + "\n");
    io::write_file_atomic(dir / "table2.csv", r.table2_csv);
}

ExperimentConfig default_experiment() {
    ExperimentConfig c;
    std::uint64_t corpus_seed = 1;
    for (const char* name : {"dalia", "butppg", "mimic"}) {
        CorpusSpec cs;
        cs.id = name;
        cs.profile = synthpg::preset_profile(name);
        cs.seed = corpus_seed++;
        cs.path = fs::path("corpora") / (std::string(name) + ".jsonl");
        c.corpora.push_back(cs);
    }
    return c;
}

namespace {

nlohmann::json pairs_to_json(const std::vector<std::pair<std::string, std::string>>& pairs) {
    auto j = nlohmann::json::array();
    for (const auto& [a, b] : pairs) j.push_back({a, b});
    return j;
}

std::vector<std::pair<std::string, std::string>> pairs_from_json(const nlohmann::json& j) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& p : j) {
        require(p.is_array() && p.size() == 2, ErrorKind::Schema, "pairs must be [source, target] arrays");
        out.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
    }
    return out;
}

}  // namespace

nlohmann::json experiment_to_json(const ExperimentConfig& c) {
    auto corpora = nlohmann::json::array();
    for (const auto& cs : c.corpora) {
        corpora.push_back({{"id", cs.id},
                           {"profile", synthpg::profile_to_json(cs.profile)},
                           {"n_subjects", cs.n_subjects},
                           {"windows", cs.windows},
                           {"seed", cs.seed},
                           {"path", cs.path.generic_string()}});
    }
    auto methods = nlohmann::json::array();
    for (auto m : c.methods) methods.push_back(mitigate::kind_name(m));
    auto sizes = nlohmann::json::array();
    for (auto s : c.sweep_sizes) sizes.push_back(nnet::size_class_name(s));
    auto scenario = scenario_to_json(c.base);
    scenario.erase("source");
    scenario.erase("target");
    scenario["method"].erase("kind");
    return {{"seed", c.seed},
            {"corpora", corpora},
            {"pairs", pairs_to_json(resolved_pairs(c))},
            {"methods", methods},
            {"scenario", scenario},
            {"sweep", {{"enabled", c.run_sweep}, {"sizes", sizes}, {"pairs", pairs_to_json(c.sweep_pairs)}}},
            {"mmd", {{"enabled", c.run_mmd}}}};
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        if (j.contains("corpora")) {
            c.corpora.clear();
            for (const auto& cj : j.at("corpora")) {
                CorpusSpec cs;
                cs.id = cj.at("id").get<std::string>();
                const auto& pj = cj.contains("profile") ? cj.at("profile") : nlohmann::json(cs.id);
                cs.profile = pj.is_string() ? synthpg::preset_profile(pj.get<std::string>())
                                            : synthpg::profile_from_json(pj);
                cs.profile.name = cs.id;
                if (cj.contains("bias_strength")) cs.profile.bias_strength = cj.at("bias_strength").get<double>();
                if (cj.contains("female_fraction")) cs.profile.female_fraction = cj.at("female_fraction").get<double>();
                cs.profile.validate();
                cs.n_subjects = cj.value("n_subjects", cs.n_subjects);
                cs.windows = cj.value("windows", cs.windows);
                cs.seed = cj.value("seed", cs.seed);
                cs.path = cj.value("path", "corpora/" + cs.id + ".jsonl");
                c.corpora.push_back(cs);
            }
        } else {
            c.corpora = default_experiment().corpora;
        }
        if (j.contains("pairs")) c.pairs = pairs_from_json(j.at("pairs"));
        if (j.contains("methods")) {
            c.methods.clear();
            for (const auto& m : j.at("methods")) c.methods.push_back(mitigate::parse_kind(m.get<std::string>()));
        }
        if (j.contains("scenario")) c.base = scenario_from_json(j.at("scenario"));
        if (j.contains("sweep")) {
            const auto& sj = j.at("sweep");
            c.run_sweep = sj.value("enabled", c.run_sweep);
            if (sj.contains("sizes")) {
                c.sweep_sizes.clear();
                for (const auto& s : sj.at("sizes")) c.sweep_sizes.push_back(nnet::parse_size_class(s.get<std::string>()));
            }
            if (sj.contains("pairs")) c.sweep_pairs = pairs_from_json(sj.at("pairs"));
        }
        if (j.contains("mmd")) c.run_mmd = j.at("mmd").value("enabled", c.run_mmd);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("experiment config: ") + e.what());
    }
    require(!c.corpora.empty(), ErrorKind::Invalid, "experiment config lists no corpora");
    require(!c.methods.empty(), ErrorKind::Invalid, "experiment config lists no methods");
    std::set<std::string> ids;
    for (const auto& cs : c.corpora) {
        require(ids.insert(cs.id).second, ErrorKind::Invalid, "duplicate corpus id '" + cs.id + "'");
        require(cs.n_subjects >= 2 && cs.windows >= 1, ErrorKind::Invalid, "corpus '" + cs.id + "' is too small");
    }
    for (const auto& [a, b] : resolved_pairs(c)) {
        require(ids.count(a) && ids.count(b), ErrorKind::Invalid, pair_list_error(a, b));
    }
    for (const auto& [a, b] : c.sweep_pairs) {
        require(ids.count(a) && ids.count(b), ErrorKind::Invalid, pair_list_error(a, b));
    }
    return c;
}

ExperimentConfig load_experiment(const fs::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, "experiment config " + path.string() + ": " + e.what());
    }
    return experiment_from_json(j);
}

std::vector<std::pair<std::string, std::string>> resolved_pairs(const ExperimentConfig& c) {
    if (!c.pairs.empty()) return c.pairs;
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& a : c.corpora) {
        for (const auto& b : c.corpora) {
            if (a.id != b.id) out.emplace_back(a.id, b.id);
        }
    }
    return out;
}

Registry registry_for(const ExperimentConfig& c, const fs::path& out_root) {
    Registry r;
    for (const auto& cs : c.corpora) r[cs.id] = cs.path.is_absolute() ? cs.path : out_root / cs.path;
    return r;
}

void generate_corpora(const ExperimentConfig& c, const fs::path& out_root, int workers) {
    const auto reg = registry_for(c, out_root);
    for (const auto& cs : c.corpora) {
        const auto& path = reg.at(cs.id);
        if (fs::exists(path)) continue;
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        auto profile = cs.profile;
        profile.name = cs.id;
        synthpg::generate_corpus(profile, cs.n_subjects, cs.windows, cs.seed, path, resolve_workers(workers));
    }
}

std::vector<MmdEntry> mmd_entries_from_artifacts(const std::vector<RunArtifact>& artifacts,
                                                std::optional<nnet::SizeClass> size) {
    // method -> dataset -> best candidate so far
    std::map<std::string, std::map<std::string, const RunArtifact*>> pick;
    auto better = [](const RunArtifact* cand, const RunArtifact* cur) {
        const bool ci = cand->source == cand->target;
        const bool ui = cur->source == cur->target;
        if (ci != ui) return ci;
        return std::tie(cand->seed, cand->target, cand->size) < std::tie(cur->seed, cur->target, cur->size);
    };
    for (const auto& a : artifacts) {
        if (!a.ok || (size && a.size != nnet::size_class_name(*size))) continue;
        auto& slot = pick[a.method][a.source];
        if (!slot || better(&a, slot)) slot = &a;
    }
    std::vector<MmdEntry> out;
    for (const auto& [method, by_dataset] : pick) {
        MmdEntry e;
        e.method = method;
        for (const auto& [dataset, a] : by_dataset) e.checkpoints[dataset] = a->checkpoint();
        out.push_back(std::move(e));
    }
    return out;
}

ExperimentSummary run_experiment(const ExperimentConfig& c, const RunOptions& opt) {
    ExperimentSummary sum;
    generate_corpora(c, opt.out_root, opt.workers);
    const auto reg = registry_for(c, opt.out_root);

    for (const auto& [src, tgt] : resolved_pairs(c)) {
        for (auto kind : c.methods) {
            Scenario s = c.base;
            s.source = src;
            s.target = tgt;
            s.method.kind = kind;
            auto arts = run_scenario(s, reg, opt);
            sum.artifacts.insert(sum.artifacts.end(), arts.begin(), arts.end());
        }
    }
    sum.report = make_report(sum.artifacts, derive_seed(c.seed, "bootstrap"), c.base.size);
    for (const auto& w : sum.report.warnings) std::cerr << "warning: " << w << '\n';
    write_report(sum.report, opt.out_root);

    const fs::path reports = opt.out_root / "reports";
    if (c.run_sweep && c.sweep_sizes.size() >= 2) {
        Scenario base = c.base;
        base.method.kind = mitigate::MitigationKind::Unbalanced;
        const auto pairs = c.sweep_pairs.empty() ? resolved_pairs(c) : c.sweep_pairs;
        for (const auto& [src, tgt] : pairs) sum.scaling.push_back(scaling_sweep(src, tgt, c.sweep_sizes, base, reg, opt));
        io::write_file_atomic(reports / "scaling.csv", scaling_csv(sum.scaling));
        io::write_file_atomic(reports / "scaling_runs.csv", scaling_runs_csv(sum.scaling));
    }
    if (c.run_mmd) {
        sum.mmd = mmd_study(mmd_entries_from_artifacts(sum.artifacts, c.base.size), reg, c.base.split, derive_seed(c.seed, "mmd"));
        io::write_file_atomic(reports / "mmd.csv", mmd_csv(sum.mmd));
    }
    return sum;
}

}  // namespace fairtune::harness
