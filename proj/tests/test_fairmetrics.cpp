#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "fairtune/fairmetrics.hpp"
#include "oracles.hpp"

using namespace fairtune;
using namespace fairtune::fairmetrics;

namespace {

EvalRecord rec(double t, double p, Gender g, std::string ds = "d", std::vector<double> emb = {0.0}) {
    return {t, p, g, std::move(ds), std::move(emb)};
}

}  // namespace

TEST_SUITE("fairmetrics") {

TEST_CASE("hr bins follow the clinical cut points, boundaries to Normal") {
    CHECK(hr_bin(70) == HrBin::Bradycardia);
    CHECK(hr_bin(74.999) == HrBin::Bradycardia);
    CHECK(hr_bin(75) == HrBin::Normal);
    CHECK(hr_bin(95) == HrBin::Normal);
    CHECK(hr_bin(95.001) == HrBin::Tachycardia);
    CHECK(hr_bin(100) == HrBin::Tachycardia);
    CHECK_THROWS_AS(hr_bin(std::nan("")), Error);
}

TEST_CASE("mae and fairness gap") {
    std::vector<EvalRecord> r{rec(80, 82, Gender::Male), rec(80, 78, Gender::Female)};
    CHECK(mae(r) == doctest::Approx(2.0));
    CHECK(fairness_gap(r) == doctest::Approx(0.0));
    r.push_back(rec(60, 70, Gender::Male));
    const auto g = group_mae(r);
    CHECK(g.male == doctest::Approx(6.0));
    CHECK(g.female == doctest::Approx(2.0));
    CHECK(g.gap == doctest::Approx(4.0));
    CHECK(g.n_male == 2);
    // Shifting truth and prediction together leaves the gap unchanged; so does swapping labels.
    auto shifted = r;
    for (auto& x : shifted) {
        x.hr_true += 13.0;
        x.hr_pred += 13.0;
    }
    CHECK(fairness_gap(shifted) == doctest::Approx(4.0));
    auto swapped = r;
    for (auto& x : swapped) x.gender = x.gender == Gender::Male ? Gender::Female : Gender::Male;
    CHECK(fairness_gap(swapped) == doctest::Approx(4.0));
    CHECK_THROWS_AS(fairness_gap(std::vector<EvalRecord>{rec(1, 2, Gender::Male)}), Error);
    CHECK_THROWS_AS(mae(std::vector<EvalRecord>{}), Error);
}

TEST_CASE("silhouette on two tight 1-D clusters") {
    const oracle::Points pts{{0.0}, {0.1}, {5.0}, {5.1}};
    const std::vector<int> lab{0, 0, 1, 1};
    const double s = silhouette(oracle::to_mat(pts), lab);
    CHECK(s == doctest::Approx(oracle::silhouette(pts, lab)).epsilon(1e-12));
    CHECK(s == doctest::Approx(0.9799).epsilon(2e-4));
    CHECK_THROWS_AS(silhouette(oracle::to_mat(pts), std::vector<int>{1, 1, 1, 1}), Error);
}

TEST_CASE("silhouette singletons score zero and coincident clusters score <= 0") {
    const oracle::Points pts{{0.0}, {1.0}, {2.0}};
    const std::vector<int> lab{0, 0, 7};
    CHECK(silhouette(oracle::to_mat(pts), lab) == doctest::Approx(oracle::silhouette(pts, lab)));
    const oracle::Points same{{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}};
    CHECK(silhouette(oracle::to_mat(same), std::vector<int>{0, 1, 0, 1}) <= 0.0);
}

TEST_CASE("silhouette of shuffled labels on separated clusters is near zero") {
    std::mt19937_64 rng(4);
    oracle::Points pts;
    std::vector<int> lab;
    for (int c = 0; c < 3; ++c) {
        auto p = oracle::random_points(rng, 30, 3, 0.2, 10.0 * c);
        pts.insert(pts.end(), p.begin(), p.end());
        lab.insert(lab.end(), 30, c);
    }
    const auto m = oracle::to_mat(pts);
    CHECK(silhouette(m, lab) > 0.9);
    double mean = 0.0;
    for (int s = 0; s < 100; ++s) {
        std::shuffle(lab.begin(), lab.end(), rng);
        mean += silhouette(m, lab) / 100.0;
    }
    CHECK(std::abs(mean) < 0.1);
}

TEST_CASE("silhouette is invariant under rotation and translation") {
    std::mt19937_64 rng(9);
    const auto pts = oracle::random_points(rng, 40, 2);
    std::vector<int> lab(40);
    for (int i = 0; i < 40; ++i) lab[i] = i % 3;
    const auto m = oracle::to_mat(pts);
    Eigen::Matrix2d rot;
    rot << std::cos(0.7), -std::sin(0.7), std::sin(0.7), std::cos(0.7);
    nnet::Mat moved = (m * rot.transpose()).rowwise() + Eigen::RowVector2d(3.0, -8.0);
    CHECK(silhouette(moved, lab) == doctest::Approx(silhouette(m, lab)).epsilon(1e-10));
}

TEST_CASE("silhouette by HR bin returns NaN when only one bin is populated") {
    std::vector<EvalRecord> r{rec(60, 85, Gender::Male, "d", {0.0}), rec(100, 86, Gender::Female, "d", {1.0}),
                              rec(61, 87, Gender::Male, "d", {0.1})};
    CHECK(std::isnan(silhouette_by_hr(r, true, 2000, 1)));
    CHECK(std::isfinite(silhouette_by_hr(r, false, 2000, 1)));
}

TEST_CASE("mmd hand-derived value, identity and symmetry") {
    const oracle::Points x{{0.0}}, y{{1.0}};
    CHECK(mmd2_rbf(oracle::to_mat(x), oracle::to_mat(y)) == doctest::Approx(2.0 - 2.0 * std::exp(-1.0)).epsilon(1e-14));
    std::mt19937_64 rng(1);
    const auto a = oracle::random_points(rng, 12, 4);
    const auto b = oracle::random_points(rng, 9, 4, 1.0, 0.5);
    CHECK(std::abs(mmd2_rbf(oracle::to_mat(a), oracle::to_mat(a))) < 1e-12);
    CHECK(mmd2_rbf(oracle::to_mat(a), oracle::to_mat(b)) ==
          doctest::Approx(mmd2_rbf(oracle::to_mat(b), oracle::to_mat(a))).epsilon(1e-14));
    CHECK(mmd2_rbf(oracle::to_mat(a), oracle::to_mat(b)) == doctest::Approx(oracle::mmd2(a, b, 1.0)).epsilon(1e-12));
    CHECK(mmd2_rbf(oracle::to_mat(a), oracle::to_mat(b), 0.3) == doctest::Approx(oracle::mmd2(a, b, 0.3)).epsilon(1e-12));
    CHECK_THROWS_AS(mmd2_rbf(oracle::to_mat(a), oracle::to_mat(oracle::random_points(rng, 3, 2))), Error);
}

TEST_CASE("mmd between samples of one distribution sits inside its permutation null") {
    std::mt19937_64 rng(21);
    const auto x = oracle::random_points(rng, 450, 4, 0.4);
    const auto y = oracle::random_points(rng, 450, 4, 0.4);
    const double observed = mmd2_rbf(oracle::to_mat(x), oracle::to_mat(y));
    oracle::Points pooled = x;
    pooled.insert(pooled.end(), y.begin(), y.end());
    std::vector<double> null;
    for (int p = 0; p < 40; ++p) {
        std::shuffle(pooled.begin(), pooled.end(), rng);
        const oracle::Points a(pooled.begin(), pooled.begin() + 450), b(pooled.begin() + 450, pooled.end());
        null.push_back(mmd2_rbf(oracle::to_mat(a), oracle::to_mat(b)));
    }
    std::sort(null.begin(), null.end());
    CHECK(observed < null[static_cast<std::size_t>(0.95 * (null.size() - 1))]);
}

TEST_CASE("stratified sample caps cells and is seed-deterministic") {
    std::vector<EvalRecord> r;
    const char* ds[] = {"a", "b", "c"};
    for (const char* d : ds)
        for (auto g : {Gender::Female, Gender::Male})
            for (double hr : {60.0, 85.0, 110.0})
                for (int i = 0; i < 70; ++i) r.push_back(rec(hr, hr, g, d));
    const auto s = stratified_sample(r, 50, 3);
    CHECK(s.indices.size() == 900);
    CHECK(s.cell_counts.size() == 18);
    CHECK(s.indices == stratified_sample(r, 50, 3).indices);
    CHECK(s.indices != stratified_sample(r, 50, 4).indices);
    std::vector<std::size_t> sorted = s.indices;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());

    std::vector<EvalRecord> small(20, rec(80, 80, Gender::Male));
    const auto t = stratified_sample(small, 50, 1);
    CHECK(t.indices.size() == 20);
    CHECK(t.cell_counts.at("d|M|normal") == 20);
    CHECK_THROWS_AS(stratified_sample(std::vector<EvalRecord>{}, 50, 1), Error);
}

TEST_CASE("bootstrap CI properties") {
    const std::vector<double> c{2.0, 2.0, 2.0};
    const auto ic = bootstrap_ci(c, 1000, 0.95, 1);
    CHECK(ic.lo == 2.0);
    CHECK(ic.median == 2.0);
    CHECK(ic.hi == 2.0);
    const std::vector<double> v{1, 2, 3, 4, 5};
    const auto iv = bootstrap_ci(v, 1000, 0.95, 7);
    CHECK(iv.median == 3.0);
    CHECK(iv.lo >= 1.0);
    CHECK(iv.hi <= 5.0);
    CHECK(iv.lo <= iv.median);
    CHECK(iv.median <= iv.hi);
    std::vector<double> scaled;
    for (double x : v) scaled.push_back(0.1 * x);
    const auto is = bootstrap_ci(scaled, 1000, 0.95, 7);
    CHECK((is.hi - is.lo) == doctest::Approx(0.1 * (iv.hi - iv.lo)).epsilon(1e-12));
    CHECK(bootstrap_ci(v, 1000, 0.95, 7).lo == iv.lo);
    CHECK_THROWS_AS(bootstrap_ci(std::vector<double>{1.0}), Error);
}

TEST_CASE("aggregate takes the median of per-run gaps") {
    std::vector<RunMetrics> runs(5);
    const double males[] = {20, 21, 19, 25, 22}, females[] = {18, 17, 20, 23, 21};
    for (int i = 0; i < 5; ++i) {
        runs[i].mae.male = males[i];
        runs[i].mae.female = females[i];
        runs[i].mae.total = 0.5 * (males[i] + females[i]);
        runs[i].mae.gap = std::abs(males[i] - females[i]);
        runs[i].mmd2 = 0.01 * i;
    }
    const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    const auto r = aggregate("a", "b", "IF", seeds, runs, 0);
    CHECK(r.gap.median == doctest::Approx(2.0));      // gaps {2, 4, 1, 2, 1}
    CHECK(r.mae_male.median - r.mae_female.median != doctest::Approx(r.gap.median));
    CHECK(r.mmd2.median == doctest::Approx(0.02));
    const auto row = table3_row(r);
    CHECK(std::count(row.begin(), row.end(), ',') == std::count(kTable3Header.begin(), kTable3Header.end(), ','));
}

TEST_CASE("eval dump round trip") {
    const std::vector<EvalRecord> r{rec(70.5, 72.25, Gender::Female, "mimic", {0.5, -0.25}),
                                    rec(99, 90, Gender::Male, "mimic", {1, 2})};
    const auto path = std::filesystem::temp_directory_path() / "fairtune_unit_eval.jsonl";
    write_eval_dump(path, r);
    const auto back = read_eval_dump(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].hr_pred == 72.25);
    CHECK(back[1].gender == Gender::Male);
    CHECK(back[0].embedding == std::vector<double>{0.5, -0.25});
    CHECK(eval_record_to_jsonl(r[0]) ==
          R"({"hr_true":70.5,"hr_pred":72.25,"gender":"F","dataset":"mimic","embedding":[0.5,-0.25]})");
}

}  // TEST_SUITE
