// fairtune command-line driver.
//
// Exit codes: 0 success, 2 usage, 3 I/O, 4 numerical failure, 5 schema mismatch.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fairtune/checkpoint.hpp"
#include "fairtune/fairmetrics.hpp"
#include "fairtune/harness.hpp"
#include "fairtune/io.hpp"
#include "fairtune/synthpg.hpp"
#include "fairtune/train.hpp"

namespace fs = std::filesystem;
using namespace fairtune;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    std::string config;
    std::string out = ".";
    int workers = 1;
};

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::Usage:
        case ErrorKind::Invalid: return 2;
        case ErrorKind::Io: return 3;
        case ErrorKind::Numerical: return 4;
        case ErrorKind::Schema: return 5;
    }
    return 1;
}

nlohmann::json option_values(const CLI::App& app) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto* opt : app.get_options()) {
        if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
        const auto& name = opt->get_lnames().front();
        if (opt->count() > 0) {
            const auto& r = opt->results();
            j[name] = r.size() == 1 ? nlohmann::json(r.front()) : nlohmann::json(r);
        } else {
            j[name] = opt->get_default_str();
        }
    }
    return j;
}

// Records every flag (given or defaulted) next to the command's outputs.
void write_sidecar(const CLI::App& root, const CLI::App& sub, const fs::path& out_root,
                   nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json j{{"subcommand", sub.get_name()}, {"global", option_values(root)}, {"options", option_values(sub)}};
    for (auto& [k, v] : extra.items()) j[k] = v;
    fs::create_directories(out_root);
    io::write_file_atomic(out_root / (sub.get_name() + ".resolved.json"), j.dump(2) + "\n");
}

fs::path under(const fs::path& root, const fs::path& p) { return p.is_absolute() ? p : root / p; }

harness::ExperimentConfig experiment(const Globals& g) {
    auto c = g.config.empty() ? harness::default_experiment() : harness::load_experiment(g.config);
    if (g.config.empty()) c.seed = g.seed;
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fairness-aware fine-tuning benchmark on synthetic PPG corpora"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Global seed")->capture_default_str();
    app.add_option("--config", g.config, "Experiment config (JSON)");
    app.add_option("--out", g.out, "Output root directory")->capture_default_str();
    app.add_option("--workers", g.workers, "Worker threads (FAIRTUNE_WORKERS overrides)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus");
    std::string profile_arg = "dalia";
    int n_subjects = 1000;
    int windows = 5;
    double bias_strength = -1.0;
    double female_fraction = -1.0;
    std::string gen_file;
    gen->add_option("--profile", profile_arg, "dalia | butppg | mimic | path to a profile JSON")->capture_default_str();
    gen->add_option("--n", n_subjects, "Number of subjects")->check(CLI::Range(1, 1000000))->capture_default_str();
    gen->add_option("--windows", windows, "Windows per subject")->check(CLI::Range(1, 100000))->capture_default_str();
    gen->add_option("--bias-strength", bias_strength, "Gender pathway strength in [0, 1]")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--female-fraction", female_fraction, "Female share in (0, 1)")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--file", gen_file, "Corpus file name under --out (default <profile>.jsonl)");

    // train
    auto* tr = app.add_subcommand("train", "Fine-tune on the train split of a source corpus");
    std::string source;
    std::string method = "none";
    std::string size = "xs";
    int epochs = 30;
    int batch_size = 32;
    double lambda = 0.1;
    double eta = 1.0;
    double train_fraction = 0.8;
    std::uint64_t split_seed = harness::kDefaultSplitSeed;
    tr->add_option("--source", source, "Source corpus (JSONL)")->required();
    tr->add_option("--method", method, "none | if | dro | adv")
        ->check(CLI::IsMember({"none", "if", "dro", "adv"}))
        ->capture_default_str();
    tr->add_option("--size", size, "xs | s | m | l")->check(CLI::IsMember({"xs", "s", "m", "l"}))->capture_default_str();
    tr->add_option("--epochs", epochs, "Epochs (at most 50)")->check(CLI::Range(0, 50))->capture_default_str();
    tr->add_option("--batch-size", batch_size, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
    tr->add_option("--lambda", lambda, "Adversarial entropy weight")->check(CLI::NonNegativeNumber)->capture_default_str();
    tr->add_option("--eta", eta, "GroupDRO step size")->check(CLI::NonNegativeNumber)->capture_default_str();
    tr->add_option("--train-fraction", train_fraction, "Subject share of the train split")
        ->check(CLI::Range(0.01, 0.99))
        ->capture_default_str();
    tr->add_option("--split-seed", split_seed, "Subject split seed")->capture_default_str();

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split of a target corpus");
    std::string ckpt;
    std::string target;
    ev->add_option("--ckpt", ckpt, "Checkpoint path")->required();
    ev->add_option("--target", target, "Target corpus (JSONL)")->required();
    ev->add_option("--train-fraction", train_fraction, "Subject share of the train split")
        ->check(CLI::Range(0.01, 0.99))
        ->capture_default_str();
    ev->add_option("--split-seed", split_seed, "Subject split seed")->capture_default_str();

    // sweep, mmd, report, all
    auto* sw = app.add_subcommand("sweep", "Model-size scaling sweep over the configured pairs");
    std::vector<std::string> sizes;
    sw->add_option("--sizes", sizes, "Size classes (default from config)")
        ->check(CLI::IsMember({"xs", "s", "m", "l"}))
        ->delimiter(',');
    auto* mm = app.add_subcommand("mmd", "Gender MMD^2 of penultimate features per method");
    std::string runs_dir;
    mm->add_option("--runs", runs_dir, "Output root holding runs/ (default --out)");
    auto* rp = app.add_subcommand("report", "Aggregate run artifacts into report tables");
    rp->add_option("--runs", runs_dir, "Output root holding runs/ (default --out)");
    auto* all = app.add_subcommand("all", "Corpora, transfer matrix, sweep, MMD study and reports");
    bool force = false;
    for (auto* sub : {sw, mm, all}) sub->add_flag("--force", force, "Re-run existing run directories");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const fs::path out = g.out;
        harness::RunOptions opt;
        opt.out_root = out;
        opt.workers = g.workers;
        opt.force = force;

        if (gen->parsed()) {
            auto profile = synthpg::is_preset(profile_arg) ? synthpg::preset_profile(profile_arg)
                                                           : synthpg::load_profile(profile_arg);
            if (bias_strength >= 0.0) profile.bias_strength = bias_strength;
            if (female_fraction >= 0.0) profile.female_fraction = female_fraction;
            profile.validate();
            const fs::path file = under(out, gen_file.empty() ? profile.name + ".jsonl" : gen_file);
            if (file.has_parent_path()) fs::create_directories(file.parent_path());
            write_sidecar(app, *gen, out, {{"profile", synthpg::profile_to_json(profile)}});
            synthpg::generate_corpus(profile, n_subjects, windows, g.seed, file, harness::resolve_workers(g.workers));
            std::cout << file.string() << '\n';
        } else if (tr->parsed()) {
            mitigate::MitigationConfig mc;
            mc.kind = mitigate::parse_kind(method);
            mc.lambda = lambda;
            mc.eta = eta;
            mc.validate();
            write_sidecar(app, *tr, out, {{"mitigation", mitigate::to_json(mc)}});
            const auto split = harness::split_by_subject(io::read_corpus(source), {train_fraction, split_seed}).train;
            auto net = harness::initial_net(nnet::parse_size_class(size), g.seed);
            nnet::TrainConfig tc;
            tc.epochs = epochs;
            tc.batch_size = batch_size;
            tc.seed = g.seed;
            const auto result = nnet::train(net, split, mc, tc);
            io::write_file_atomic(out / "log.csv", nnet::train_log_csv(result));
            nnet::save_checkpoint(out / "checkpoint", net, mitigate::to_json(mc),
                                  {{"source", io::normalize_path(source)}, {"seed", g.seed}, {"epochs", epochs}});
            if (!result.epochs.empty()) {
                std::cout << "final epoch train MAE " << result.epochs.back().mae_bpm << " bpm over "
                          << result.total_steps << " steps\n";
            }
        } else if (ev->parsed()) {
            write_sidecar(app, *ev, out);
            const auto cp = nnet::load_checkpoint(ckpt);
            const auto test = harness::split_by_subject(io::read_corpus(target), {train_fraction, split_seed}).test;
            const auto records = harness::evaluate(cp.net, test);
            fairmetrics::write_eval_dump(out / "eval.jsonl", records);
            const auto m = fairmetrics::compute_run_metrics(records, g.seed);
            io::write_file_atomic(out / "metrics.json", fairmetrics::run_metrics_to_json(m).dump(2) + "\n");
            std::cout << "MAE " << m.mae.total << " (M " << m.mae.male << ", F " << m.mae.female << ") gap "
                      << m.mae.gap << " over " << records.size() << " windows\n";
        } else if (sw->parsed()) {
            auto c = experiment(g);
            if (!sizes.empty()) {
                c.sweep_sizes.clear();
                for (const auto& s : sizes) c.sweep_sizes.push_back(nnet::parse_size_class(s));
            }
            write_sidecar(app, *sw, out, {{"experiment", harness::experiment_to_json(c)}});
            harness::generate_corpora(c, out, g.workers);
            const auto reg = harness::registry_for(c, out);
            auto base = c.base;
            base.method.kind = mitigate::MitigationKind::Unbalanced;
            std::vector<harness::ScalingResult> results;
            const auto pairs = c.sweep_pairs.empty() ? harness::resolved_pairs(c) : c.sweep_pairs;
            for (const auto& [s, t] : pairs) results.push_back(harness::scaling_sweep(s, t, c.sweep_sizes, base, reg, opt));
            fs::create_directories(out / "reports");
            io::write_file_atomic(out / "reports" / "scaling.csv", harness::scaling_csv(results));
            io::write_file_atomic(out / "reports" / "scaling_runs.csv", harness::scaling_runs_csv(results));
        } else if (mm->parsed()) {
            const auto c = experiment(g);
            const fs::path root = runs_dir.empty() ? out : fs::path(runs_dir);
            write_sidecar(app, *mm, out, {{"experiment", harness::experiment_to_json(c)}});
            const auto rows = harness::mmd_study(harness::mmd_entries_from_artifacts(harness::load_artifacts(root), c.base.size),
                                                 harness::registry_for(c, root), c.base.split,
                                                 derive_seed(c.seed, "mmd"));
            fs::create_directories(out / "reports");
            io::write_file_atomic(out / "reports" / "mmd.csv", harness::mmd_csv(rows));
            std::cout << harness::mmd_csv(rows);
        } else if (rp->parsed()) {
            const auto c = experiment(g);
            const fs::path root = runs_dir.empty() ? out : fs::path(runs_dir);
            write_sidecar(app, *rp, out);
            const auto report = harness::make_report(harness::load_artifacts(root), derive_seed(c.seed, "bootstrap"), c.base.size);
            for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
            harness::write_report(report, out);
        } else if (all->parsed()) {
            const auto c = experiment(g);
            write_sidecar(app, *all, out, {{"experiment", harness::experiment_to_json(c)}});
            const auto sum = harness::run_experiment(c, opt);
            std::cout << sum.report.table3_csv;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
