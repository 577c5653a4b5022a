#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "fairtune/checkpoint.hpp"
#include "fairtune/fairmetrics.hpp"
#include "fairtune/harness.hpp"
#include "fairtune/io.hpp"

using namespace fairtune;
namespace fs = std::filesystem;

namespace {

const fs::path& root() {
    static const fs::path r = [] {
        const auto d = fs::temp_directory_path() / "fairtune_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return r;
}

int run(const std::string& args) {
    const std::string cmd = std::string(FAIRTUNE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string p(const std::string& rel) { return (root() / rel).string(); }

std::size_t lines(const fs::path& f) {
    std::ifstream in(f);
    return static_cast<std::size_t>(std::count(std::istreambuf_iterator<char>(in), {}, '\n'));
}

// One small corpus reused across cases.
std::string corpus() {
    static const std::string c = [] {
        REQUIRE(run("--out " + p("data") + " --seed 2 gen --profile butppg --n 30 --windows 3") == 0);
        return p("data/butppg.jsonl");
    }();
    return c;
}

}  // namespace

TEST_CASE("gen is deterministic") {
    REQUIRE(run("--out " + p("g1") + " gen --profile dalia --n 200 --seed 7") == 0);
    REQUIRE(run("--out " + p("g2") + " gen --profile dalia --n 200 --seed 7") == 0);
    CHECK(io::read_file(p("g1/dalia.jsonl")) == io::read_file(p("g2/dalia.jsonl")));
    CHECK(fs::exists(p("g1/gen.resolved.json")));
    const auto side = nlohmann::json::parse(io::read_file(p("g1/gen.resolved.json")));
    CHECK(side["options"]["n"] == "200");
    CHECK(side["options"]["windows"] == "5");
    CHECK(side["global"]["seed"] == "7");
}

TEST_CASE("gen female share for the clinical preset") {
    REQUIRE(run("--out " + p("g3") + " gen --profile mimic --n 1000 --windows 1 --seed 1") == 0);
    const auto recs = io::read_corpus(p("g3/mimic.jsonl"));
    std::size_t f = 0;
    for (const auto& r : recs) f += r.gender == Gender::Female;
    CHECK(std::abs(static_cast<double>(f) / recs.size() - 0.623) <= 0.03);
}

TEST_CASE("usage errors exit with 2") {
    CHECK(run("gen --bias-strength 1.5") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("") == 2);
    CHECK(run("train --source x --method boost") == 2);
    CHECK(run("train --source x --epochs 51") == 2);
    CHECK(run("--help") == 0);
}

TEST_CASE("I/O and schema failures map to 3 and 5") {
    CHECK(run("--out " + p("e1") + " train --source " + p("missing.jsonl")) == 3);
    {
        std::ofstream bad(p("bad.jsonl"));
        bad << "{\"subject_id\": 1}\n";
    }
    CHECK(run("--out " + p("e2") + " train --source " + p("bad.jsonl")) == 5);
    {
        std::ofstream junk(p("junk.ckpt"));
        junk << "not a checkpoint";
    }
    CHECK(run("--out " + p("e3") + " eval --ckpt " + p("junk.ckpt") + " --target " + corpus()) == 5);
    CHECK(run("--out " + p("e4") + " report --runs " + p("nowhere")) == 3);
}

TEST_CASE("train: zero epochs reproduces the initialization") {
    REQUIRE(run("--out " + p("t0") + " --seed 4 train --source " + corpus() + " --epochs 0 --size s") == 0);
    const auto cp = nnet::load_checkpoint(p("t0/checkpoint"));
    CHECK(nnet::bitwise_equal(cp.net.params, harness::initial_net(nnet::SizeClass::S, 4).params));
    CHECK(lines(p("t0/log.csv")) == 1);
}

TEST_CASE("train: adv with lambda 0 equals no mitigation; log rows = epochs x steps") {
    REQUIRE(run("--out " + p("tn") + " --seed 1 train --source " + corpus() + " --epochs 3 --method none") == 0);
    REQUIRE(run("--out " + p("ta") + " --seed 1 train --source " + corpus() + " --epochs 3 --method adv --lambda 0") ==
            0);
    const auto a = nnet::load_checkpoint(p("tn/checkpoint"));
    const auto b = nnet::load_checkpoint(p("ta/checkpoint"));
    CHECK(nnet::bitwise_equal(a.net.params, b.net.params));
    const auto train_n = harness::split_by_subject(io::read_corpus(corpus())).train.size();
    const auto steps = (train_n + 31) / 32;
    CHECK(lines(p("tn/log.csv")) == 1 + 3 * steps);
    CHECK(fs::exists(p("tn/train.resolved.json")));
}

TEST_CASE("eval dumps one line per target test window") {
    REQUIRE(run("--out " + p("tv") + " --seed 1 train --source " + corpus() + " --epochs 1") == 0);
    REQUIRE(run("--out " + p("ev") + " eval --ckpt " + p("tv/checkpoint") + " --target " + corpus()) == 0);
    const auto test_n = harness::split_by_subject(io::read_corpus(corpus())).test.size();
    CHECK(lines(p("ev/eval.jsonl")) == test_n);
    CHECK(fairmetrics::read_eval_dump(p("ev/eval.jsonl")).front().embedding.size() == 16);
    CHECK(fs::exists(p("ev/metrics.json")));
}

TEST_CASE("all and report on a tiny experiment") {
    {
        std::ofstream cfg(p("exp.json"));
        cfg << R"({
          "corpora": [{"id": "a", "profile": "dalia", "n_subjects": 40, "windows": 2, "seed": 1},
                      {"id": "b", "profile": "mimic", "n_subjects": 40, "windows": 2, "seed": 2}],
          "methods": ["none", "if"],
          "scenario": {"seeds": [0, 1], "epochs": 1},
          "sweep": {"sizes": ["xs", "s"], "pairs": [["a", "b"]]}
        })";
    }
    REQUIRE(run("--out " + p("exp") + " --config " + p("exp.json") + " all") == 0);
    const auto t3 = io::read_file(p("exp/reports/table3.csv"));
    CHECK(t3.substr(0, t3.find('\n')) == fairmetrics::kTable3Header);
    CHECK(std::count(t3.begin(), t3.end(), '\n') == 1 + 2 * 2);
    CHECK(lines(p("exp/reports/scaling_runs.csv")) == 1 + 2 * 2);
    CHECK(lines(p("exp/reports/mmd.csv")) == 3);
    CHECK(fs::exists(p("exp/reports/table2.csv")));
    CHECK(fs::exists(p("exp/all.resolved.json")));

    REQUIRE(run("--out " + p("rep") + " --config " + p("exp.json") + " report --runs " + p("exp")) == 0);
    CHECK(io::read_file(p("rep/reports/table3.csv")) == t3);
    REQUIRE(run("--out " + p("exp") + " --config " + p("exp.json") + " mmd") == 0);
    REQUIRE(run("--out " + p("exp") + " --config " + p("exp.json") + " sweep --sizes xs,s") == 0);
}
