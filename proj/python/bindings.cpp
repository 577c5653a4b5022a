#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

#include "fairtune/checkpoint.hpp"
#include "fairtune/fairmetrics.hpp"
#include "fairtune/harness.hpp"
#include "fairtune/io.hpp"
#include "fairtune/mitigate.hpp"
#include "fairtune/train.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace fairtune;

namespace {

// JSON crosses the boundary as text; the Python package decodes it.
std::string generate(const std::string& profile_name, int n_subjects, int windows, std::uint64_t seed,
                     const fs::path& path, std::optional<double> bias_strength,
                     std::optional<double> female_fraction) {
    auto p = synthpg::is_preset(profile_name) ? synthpg::preset_profile(profile_name)
                                              : synthpg::load_profile(profile_name);
    if (bias_strength) p.bias_strength = *bias_strength;
    if (female_fraction) p.female_fraction = *female_fraction;
    p.validate();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    py::gil_scoped_release nogil;
    synthpg::generate_corpus(p, n_subjects, windows, seed, path);
    return synthpg::profile_to_json(p).dump();
}

std::string train(const fs::path& source, const fs::path& out_dir, const std::string& method,
                  const std::string& size, int epochs, std::uint64_t seed, int batch_size, double lambda,
                  double eta) {
    mitigate::MitigationConfig mc;
    mc.kind = mitigate::parse_kind(method);
    mc.lambda = lambda;
    mc.eta = eta;
    mc.validate();
    py::gil_scoped_release nogil;
    const auto split = harness::split_by_subject(io::read_corpus(source)).train;
    auto net = harness::initial_net(nnet::parse_size_class(size), seed);
    nnet::TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = batch_size;
    tc.seed = seed;
    const auto r = nnet::train(net, split, mc, tc);
    fs::create_directories(out_dir);
    io::write_file_atomic(out_dir / "log.csv", nnet::train_log_csv(r));
    nnet::save_checkpoint(out_dir / "checkpoint", net, mitigate::to_json(mc),
                          {{"source", io::normalize_path(source)}, {"seed", seed}, {"epochs", epochs}});
    nlohmann::json j{{"checkpoint", (out_dir / "checkpoint").string()},
                     {"steps", r.total_steps},
                     {"parameters", nnet::parameter_count(net.params)}};
    auto mae = nlohmann::json::array();
    for (const auto& e : r.epochs) mae.push_back(e.mae_bpm);
    j["epoch_mae"] = mae;
    return j.dump();
}

std::string evaluate(const fs::path& checkpoint, const fs::path& target, std::optional<fs::path> dump,
                     std::uint64_t seed) {
    py::gil_scoped_release nogil;
    const auto cp = nnet::load_checkpoint(checkpoint);
    const auto test = harness::split_by_subject(io::read_corpus(target)).test;
    const auto records = harness::evaluate(cp.net, test);
    if (dump) fairmetrics::write_eval_dump(*dump, records);
    auto j = fairmetrics::run_metrics_to_json(fairmetrics::compute_run_metrics(records, seed));
    j["windows"] = records.size();
    return j.dump();
}

std::string run_experiment(const std::string& config_json, const fs::path& out_root, int workers, bool force) {
    const auto c = harness::experiment_from_json(nlohmann::json::parse(config_json));
    harness::RunOptions opt;
    opt.out_root = out_root;
    opt.workers = workers;
    opt.force = force;
    py::gil_scoped_release nogil;
    return harness::run_experiment(c, opt).report.table3_json.dump();
}

py::dict dro(const std::vector<double>& losses, const std::vector<std::size_t>& sizes, double eta) {
    const auto w = mitigate::dro_weights(losses, sizes, eta);
    py::dict d;
    d["normalized_loss"] = w.normalized_loss;
    d["group_weight"] = w.group_weight;
    d["sample_weight"] = w.sample_weight;
    return d;
}

}  // namespace

PYBIND11_MODULE(_fairtune, m) {
    m.doc() = "Native core of the fairtune toolkit";

    static py::exception<Error> error(m, "FairtuneError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = py::handle(error.ptr())(py::str(e.what()));
            exc.attr("kind") = static_cast<int>(e.kind());
            PyErr_SetObject(error.ptr(), exc.ptr());
        }
    });

    m.def("generate_corpus", &generate, py::arg("profile"), py::arg("n_subjects"), py::arg("windows"),
          py::arg("seed"), py::arg("path"), py::arg("bias_strength") = py::none(),
          py::arg("female_fraction") = py::none());
    m.def("train", &train, py::arg("source"), py::arg("out_dir"), py::arg("method") = "none",
          py::arg("size") = "xs", py::arg("epochs") = 30, py::arg("seed") = 0, py::arg("batch_size") = 32,
          py::arg("lambda_") = 0.1, py::arg("eta") = 1.0);
    m.def("evaluate", &evaluate, py::arg("checkpoint"), py::arg("target"), py::arg("dump") = py::none(),
          py::arg("seed") = 0);
    m.def("run_experiment", &run_experiment, py::arg("config_json"), py::arg("out_root"), py::arg("workers") = 1,
          py::arg("force") = false);

    m.def("mmd2_rbf", &fairmetrics::mmd2_rbf, py::arg("x"), py::arg("y"), py::arg("gamma") = 1.0);
    m.def(
        "silhouette",
        [](const nnet::Mat& x, const std::vector<int>& labels) { return fairmetrics::silhouette(x, labels); },
        py::arg("x"), py::arg("labels"));
    m.def(
        "if_weights",
        [](std::size_t n_female, std::size_t n_male) {
            const auto w = mitigate::if_weights({n_female, n_male});
            return py::make_tuple(w[0], w[1]);
        },
        py::arg("n_female"), py::arg("n_male"));
    m.def("dro_weights", &dro, py::arg("losses"), py::arg("sizes"), py::arg("eta"));
    m.def(
        "adversary_entropy", [](const nnet::Mat& probs) { return mitigate::adversary_entropy(probs); },
        py::arg("probs"));
}
