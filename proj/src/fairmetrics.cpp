#include "fairtune/fairmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "fairtune/io.hpp"

namespace fairtune::fairmetrics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

double number_or_nan(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

}  // namespace

std::string eval_record_to_jsonl(const EvalRecord& r) {
    std::string s = "{\"hr_true\":" + io::format_float(r.hr_true) + ",\"hr_pred\":" + io::format_float(r.hr_pred) +
                    ",\"gender\":\"" + gender_code(r.gender) + "\",\"dataset\":" + nlohmann::json(r.dataset).dump() +
                    ",\"embedding\":[";
    for (std::size_t i = 0; i < r.embedding.size(); ++i) {
        if (i) s += ',';
        s += io::format_float(r.embedding[i]);
    }
    s += "]}";
    return s;
}

EvalRecord eval_record_from_json_line(std::string_view line) {
    EvalRecord r;
    try {
        const auto j = nlohmann::json::parse(line);
        r.hr_true = j.at("hr_true").get<double>();
        r.hr_pred = j.at("hr_pred").get<double>();
        r.gender = parse_gender(j.at("gender").get<std::string>());
        r.dataset = j.at("dataset").get<std::string>();
        r.embedding = j.at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("eval record: ") + e.what());
    }
    return r;
}

void write_eval_dump(const std::filesystem::path& path, std::span<const EvalRecord> records) {
    std::string out;
    for (const auto& r : records) {
        out += eval_record_to_jsonl(r);
        out += '\n';
    }
    io::write_file_atomic(path, out);
}

std::vector<EvalRecord> read_eval_dump(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open eval dump " + path.string());
    std::vector<EvalRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(eval_record_from_json_line(line));
    }
    if (!out.empty()) {
        const auto d = out.front().embedding.size();
        for (const auto& r : out) {
            require(r.embedding.size() == d, ErrorKind::Schema, "eval dump: embedding dimension is not uniform");
        }
    }
    return out;
}

HrBin hr_bin(double hr_bpm) {
    require(std::isfinite(hr_bpm), ErrorKind::Invalid, "hr_bin: non-finite heart rate");
    if (hr_bpm < 75.0) return HrBin::Bradycardia;
    if (hr_bpm > 95.0) return HrBin::Tachycardia;
    return HrBin::Normal;
}

std::string_view bin_name(HrBin b) {
    switch (b) {
        case HrBin::Bradycardia: return "brady";
        case HrBin::Normal: return "normal";
        case HrBin::Tachycardia: return "tachy";
    }
    return "normal";
}

double mae(std::span<const EvalRecord> records) {
    require(!records.empty(), ErrorKind::Invalid, "mae: empty record set");
    double s = 0.0;
    for (const auto& r : records) s += std::abs(r.hr_pred - r.hr_true);
    return s / static_cast<double>(records.size());
}

GroupMae group_mae(std::span<const EvalRecord> records) {
    require(!records.empty(), ErrorKind::Invalid, "group_mae: empty record set");
    GroupMae g;
    double sum[2] = {0.0, 0.0};
    std::size_t n[2] = {0, 0};
    for (const auto& r : records) {
        const auto k = static_cast<std::size_t>(r.gender);
        sum[k] += std::abs(r.hr_pred - r.hr_true);
        ++n[k];
    }
    g.n_female = n[0];
    g.n_male = n[1];
    g.total = (sum[0] + sum[1]) / static_cast<double>(records.size());
    g.female = n[0] ? sum[0] / static_cast<double>(n[0]) : kNaN;
    g.male = n[1] ? sum[1] / static_cast<double>(n[1]) : kNaN;
    g.gap = (n[0] && n[1]) ? std::abs(g.male - g.female) : kNaN;
    return g;
}

double fairness_gap(std::span<const EvalRecord> records) {
    const auto g = group_mae(records);
    require(g.n_male > 0 && g.n_female > 0, ErrorKind::Invalid, "fairness_gap: both genders are required");
    return g.gap;
}

double silhouette(const Mat& embeddings, std::span<const int> labels) {
    const auto n = static_cast<std::size_t>(embeddings.rows());
    require(labels.size() == n, ErrorKind::Invalid, "silhouette: label count mismatch");
    std::vector<int> distinct(labels.begin(), labels.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    require(distinct.size() >= 2, ErrorKind::Invalid, "silhouette: need at least two distinct labels");

    const std::size_t k = distinct.size();
    std::vector<std::size_t> cluster(n);
    std::vector<std::size_t> size(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
        cluster[i] = static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), labels[i]) -
                                              distinct.begin());
        ++size[cluster[i]];
    }

    // Row sums of distances per cluster: sums(i, c) = sum_{j in c} ||x_i - x_j||.
    std::vector<double> sums(n * k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = (embeddings.row(static_cast<Eigen::Index>(i)) -
                              embeddings.row(static_cast<Eigen::Index>(j)))
                                 .norm();
            sums[i * k + cluster[j]] += d;
            sums[j * k + cluster[i]] += d;
        }
    }

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = cluster[i];
        if (size[c] < 2) continue;  // singleton scores 0
        const double a = sums[i * k + c] / static_cast<double>(size[c] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t o = 0; o < k; ++o) {
            if (o != c) b = std::min(b, sums[i * k + o] / static_cast<double>(size[o]));
        }
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(n);
}

double silhouette_by_hr(std::span<const EvalRecord> records, bool use_prediction, std::size_t max_points,
                        std::uint64_t seed) {
    if (records.empty()) return kNaN;
    std::vector<std::size_t> idx(records.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > max_points) {
        Rng rng(seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(max_points);
        std::sort(idx.begin(), idx.end());
    }
    const auto d = static_cast<Eigen::Index>(records[idx.front()].embedding.size());
    Mat emb(static_cast<Eigen::Index>(idx.size()), d);
    std::vector<int> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& r = records[idx[i]];
        require(static_cast<Eigen::Index>(r.embedding.size()) == d, ErrorKind::Invalid,
                "silhouette: embedding dimension is not uniform");
        emb.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(r.embedding.data(), d);
        labels[i] = static_cast<int>(hr_bin(use_prediction ? r.hr_pred : r.hr_true));
    }
    if (std::adjacent_find(labels.begin(), labels.end(), std::not_equal_to<>()) == labels.end()) return kNaN;
    return silhouette(emb, labels);
}

StratifiedSample stratified_sample(std::span<const EvalRecord> records, std::size_t per_stratum,
                                   std::uint64_t seed) {
    require(!records.empty(), ErrorKind::Invalid, "stratified_sample: empty input");
    std::map<std::string, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        std::string key = r.dataset + "|" + gender_code(r.gender) + "|" + std::string(bin_name(hr_bin(r.hr_true)));
        cells[key].push_back(i);
    }
    StratifiedSample out;
    for (auto& [key, members] : cells) {
        Rng rng(derive_seed(seed, key));
        std::shuffle(members.begin(), members.end(), rng);
        const std::size_t take = std::min(per_stratum, members.size());
        out.indices.insert(out.indices.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
        out.cell_counts[key] = take;
    }
    return out;
}

double mmd2_rbf(const Mat& x, const Mat& y, double gamma) {
    require(x.rows() >= 1 && y.rows() >= 1, ErrorKind::Invalid, "mmd2_rbf: empty sample");
    require(x.cols() == y.cols(), ErrorKind::Invalid, "mmd2_rbf: dimension mismatch");
    const Eigen::VectorXd xx = x.rowwise().squaredNorm();
    const Eigen::VectorXd yy = y.rowwise().squaredNorm();
    auto kernel_sum = [gamma](const Mat& a, const Eigen::VectorXd& an, const Mat& b, const Eigen::VectorXd& bn) {
        const Mat dot = a * b.transpose();
        double s = 0.0;
        for (Eigen::Index i = 0; i < dot.rows(); ++i) {
            for (Eigen::Index j = 0; j < dot.cols(); ++j) {
                const double d2 = std::max(0.0, an[i] + bn[j] - 2.0 * dot(i, j));
                s += std::exp(-gamma * d2);
            }
        }
        return s;
    };
    const double n = static_cast<double>(x.rows());
    const double m = static_cast<double>(y.rows());
    const double kxx = kernel_sum(x, xx, x, xx);
    const double kyy = kernel_sum(y, yy, y, yy);
    const double kxy = kernel_sum(x, xx, y, yy);
    return kxx / (n * n) + kyy / (m * m) - 2.0 * kxy / (n * m);
}

double gender_mmd2(std::span<const EvalRecord> records, std::size_t per_stratum, std::uint64_t seed, double gamma) {
    if (records.empty()) return kNaN;
    const auto sample = stratified_sample(records, per_stratum, seed);
    std::vector<const EvalRecord*> male, female;
    for (auto i : sample.indices) (records[i].gender == Gender::Male ? male : female).push_back(&records[i]);
    if (male.empty() || female.empty()) return kNaN;
    const auto d = static_cast<Eigen::Index>(records.front().embedding.size());
    auto pack = [d](const std::vector<const EvalRecord*>& rs) {
        Mat m(static_cast<Eigen::Index>(rs.size()), d);
        for (std::size_t i = 0; i < rs.size(); ++i) {
            require(static_cast<Eigen::Index>(rs[i]->embedding.size()) == d, ErrorKind::Invalid,
                    "gender_mmd2: embedding dimension is not uniform");
            m.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(rs[i]->embedding.data(), d);
        }
        return m;
    };
    return mmd2_rbf(pack(male), pack(female), gamma);
}

double quantile_sorted(std::span<const double> sorted, double q) {
    require(!sorted.empty(), ErrorKind::Invalid, "quantile: empty input");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double median(std::span<const double> values) {
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    return quantile_sorted(v, 0.5);
}

Interval bootstrap_ci(std::span<const double> values, int resamples, double level, std::uint64_t seed) {
    require(values.size() >= 2, ErrorKind::Invalid, "bootstrap_ci: need at least two values");
    require(resamples >= 1 && level > 0.0 && level < 1.0, ErrorKind::Invalid, "bootstrap_ci: bad parameters");
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    std::vector<double> stats(static_cast<std::size_t>(resamples));
    std::vector<double> draw(values.size());
    for (auto& s : stats) {
        for (auto& d : draw) d = values[pick(rng)];
        s = median(draw);
    }
    std::sort(stats.begin(), stats.end());
    const double tail = 0.5 * (1.0 - level);
    return {median(values), quantile_sorted(stats, tail), quantile_sorted(stats, 1.0 - tail)};
}

RunMetrics compute_run_metrics(std::span<const EvalRecord> records, std::uint64_t seed) {
    RunMetrics m;
    m.mae = group_mae(records);
    m.silhouette_true = silhouette_by_hr(records, false, 2000, derive_seed(seed, "silhouette"));
    m.silhouette_pred = silhouette_by_hr(records, true, 2000, derive_seed(seed, "silhouette"));
    m.mmd2 = gender_mmd2(records, 50, derive_seed(seed, "mmd"));
    return m;
}

nlohmann::json run_metrics_to_json(const RunMetrics& m) {
    return {{"mae_total", number_or_null(m.mae.total)},
            {"mae_male", number_or_null(m.mae.male)},
            {"mae_female", number_or_null(m.mae.female)},
            {"gap", number_or_null(m.mae.gap)},
            {"n_male", m.mae.n_male},
            {"n_female", m.mae.n_female},
            {"silhouette_true", number_or_null(m.silhouette_true)},
            {"silhouette_pred", number_or_null(m.silhouette_pred)},
            {"mmd2", number_or_null(m.mmd2)}};
}

RunMetrics run_metrics_from_json(const nlohmann::json& j) {
    RunMetrics m;
    try {
        m.mae.total = number_or_nan(j.at("mae_total"));
        m.mae.male = number_or_nan(j.at("mae_male"));
        m.mae.female = number_or_nan(j.at("mae_female"));
        m.mae.gap = number_or_nan(j.at("gap"));
        m.mae.n_male = j.at("n_male").get<std::size_t>();
        m.mae.n_female = j.at("n_female").get<std::size_t>();
        m.silhouette_true = number_or_nan(j.at("silhouette_true"));
        m.silhouette_pred = number_or_nan(j.at("silhouette_pred"));
        m.mmd2 = number_or_nan(j.at("mmd2"));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("run metrics: ") + e.what());
    }
    return m;
}

namespace {

// Bootstrap over the finite values; a single finite value gives a degenerate interval.
Interval summarize(const std::vector<double>& raw, std::uint64_t seed, int resamples) {
    std::vector<double> v;
    for (double x : raw) {
        if (std::isfinite(x)) v.push_back(x);
    }
    if (v.empty()) return {kNaN, kNaN, kNaN};
    if (v.size() == 1) return {v[0], v[0], v[0]};
    return bootstrap_ci(v, resamples, 0.95, seed);
}

}  // namespace

FairnessReport aggregate(std::string source, std::string target, std::string method,
                         std::span<const std::uint64_t> seeds, std::span<const RunMetrics> runs,
                         std::uint64_t bootstrap_seed, int resamples) {
    require(!runs.empty(), ErrorKind::Invalid, "aggregate: no runs");
    FairnessReport r;
    r.source = std::move(source);
    r.target = std::move(target);
    r.method = std::move(method);
    r.seeds.assign(seeds.begin(), seeds.end());
    auto column = [&](auto getter) {
        std::vector<double> v;
        for (const auto& m : runs) v.push_back(getter(m));
        return v;
    };
    const std::string key = r.source + "|" + r.target + "|" + r.method;
    auto field = [&](std::string_view name, auto getter) {
        return summarize(column(getter), derive_seed(bootstrap_seed, key + "|" + std::string(name)), resamples);
    };
    r.mae_total = field("mae_total", [](const RunMetrics& m) { return m.mae.total; });
    r.mae_male = field("mae_male", [](const RunMetrics& m) { return m.mae.male; });
    r.mae_female = field("mae_female", [](const RunMetrics& m) { return m.mae.female; });
    r.gap = field("gap", [](const RunMetrics& m) { return m.mae.gap; });
    r.silhouette_true = field("silhouette_true", [](const RunMetrics& m) { return m.silhouette_true; });
    r.silhouette_pred = field("silhouette_pred", [](const RunMetrics& m) { return m.silhouette_pred; });
    r.mmd2 = field("mmd2", [](const RunMetrics& m) { return m.mmd2; });
    r.n_male = runs.front().mae.n_male;
    r.n_female = runs.front().mae.n_female;
    return r;
}

nlohmann::json report_to_json(const FairnessReport& r) {
    auto iv = [](const Interval& i) {
        return nlohmann::json{{"median", number_or_null(i.median)}, {"lo", number_or_null(i.lo)},
                              {"hi", number_or_null(i.hi)}};
    };
    return {{"source", r.source},
            {"target", r.target},
            {"method", r.method},
            {"seeds", r.seeds},
            {"mae_total", iv(r.mae_total)},
            {"mae_male", iv(r.mae_male)},
            {"mae_female", iv(r.mae_female)},
            {"fairness_gap", iv(r.gap)},
            {"silhouette_true", iv(r.silhouette_true)},
            {"silhouette_pred", iv(r.silhouette_pred)},
            {"mmd2", iv(r.mmd2)},
            {"n_male", r.n_male},
            {"n_female", r.n_female}};
}

std::string table3_row(const FairnessReport& r) {
    auto f = [](double v) { return io::format_float(v); };
    auto iv = [&](const Interval& i) { return f(i.median) + ',' + f(i.lo) + ',' + f(i.hi); };
    return r.source + ',' + r.target + ',' + r.method + ',' + iv(r.mae_total) + ',' + iv(r.mae_male) + ',' +
           iv(r.mae_female) + ',' + iv(r.gap) + ',' + f(r.silhouette_true.median) + ',' +
           f(r.silhouette_pred.median) + ',' + f(r.mmd2.median);
}

}  // namespace fairtune::fairmetrics
