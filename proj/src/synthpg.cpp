#include "fairtune/synthpg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <thread>

#include "fairtune/io.hpp"

namespace fairtune::synthpg {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Standard-normal 75th percentile.
constexpr double kZ75 = 0.6744897501960817;

bool finite_positive(double v) { return std::isfinite(v) && v > 0.0; }

void check_hr_dist(const HrDistribution& d, const std::string& which) {
    require(finite_positive(d.q25) && d.q25 < d.median && d.median < d.q75 && std::isfinite(d.q75),
            ErrorKind::Invalid, which + ": need 0 < q25 < median < q75");
}

}  // namespace

double HrDistribution::log_mean() const { return std::log(median); }

double HrDistribution::log_sigma() const { return std::log(q75 / q25) / (2.0 * kZ75); }

void DomainProfile::validate() const {
    require(!name.empty(), ErrorKind::Invalid, "profile name is empty");
    require(finite_positive(native_rate_hz), ErrorKind::Invalid, "native_rate_hz must be positive");
    require(female_fraction > 0.0 && female_fraction < 1.0, ErrorKind::Invalid, "female_fraction must lie in (0,1)");
    check_hr_dist(hr_female, "hr_female");
    check_hr_dist(hr_male, "hr_male");
    require(!std::isnan(noise_snr_db), ErrorKind::Invalid, "noise_snr_db is NaN");
    require(motion_artifact_prob >= 0.0 && motion_artifact_prob <= 1.0, ErrorKind::Invalid,
            "motion_artifact_prob must lie in [0,1]");
    require(bias_strength >= 0.0 && bias_strength <= 1.0, ErrorKind::Invalid, "bias_strength must lie in [0,1]");
    require(window_seconds >= 1, ErrorKind::Invalid, "window_seconds must be >= 1");
    require(n_harmonics >= 3, ErrorKind::Invalid, "n_harmonics must be >= 3");
    require(harmonic_decay > 0.0 && harmonic_decay < 1.0, ErrorKind::Invalid, "harmonic_decay must lie in (0,1)");
    require(amplitude_jitter >= 0.0 && baseline_wander >= 0.0 && hrv_fraction >= 0.0 && hrv_fraction < 0.5,
            ErrorKind::Invalid, "negative generative knob");
    require(missing_sample_prob >= 0.0 && missing_sample_prob < 1.0, ErrorKind::Invalid,
            "missing_sample_prob must lie in [0,1)");
}

bool is_preset(std::string_view name) { return name == "dalia" || name == "butppg" || name == "mimic"; }

DomainProfile preset_profile(std::string_view name) {
    DomainProfile p;
    p.name = std::string(name);
    if (name == "dalia") {
        // wrist wearable, motion rich
        p.native_rate_hz = 64.0;
        p.female_fraction = 0.543;
        p.hr_female = {85.2, 73.3, 96.8};
        p.hr_male = {85.5, 73.4, 110.2};
        p.noise_snr_db = 15.0;
        p.motion_artifact_prob = 0.10;
        p.missing_sample_prob = 0.001;
    } else if (name == "butppg") {
        // smartphone camera
        p.native_rate_hz = 30.0;
        p.female_fraction = 0.511;
        p.hr_female = {75.0, 70.0, 83.0};
        p.hr_male = {78.0, 67.0, 87.0};
        p.noise_snr_db = 12.0;
        p.motion_artifact_prob = 0.05;
    } else if (name == "mimic") {
        // ICU monitor
        p.native_rate_hz = 125.0;
        p.female_fraction = 0.623;
        p.hr_female = {88.8, 74.2, 105.6};
        p.hr_male = {90.3, 75.1, 102.5};
        p.noise_snr_db = 20.0;
        p.motion_artifact_prob = 0.02;
    } else {
        fail(ErrorKind::Usage, "unknown profile preset \"" + std::string(name) + "\"");
    }
    p.bias_strength = 0.3;
    return p;
}

nlohmann::json profile_to_json(const DomainProfile& p) {
    auto dist = [](const HrDistribution& d) {
        return nlohmann::json{{"median", d.median}, {"q25", d.q25}, {"q75", d.q75}};
    };
    nlohmann::json j;
    j["name"] = p.name;
    j["native_rate_hz"] = p.native_rate_hz;
    j["female_fraction"] = p.female_fraction;
    j["hr_dist_female"] = dist(p.hr_female);
    j["hr_dist_male"] = dist(p.hr_male);
    // JSON has no infinity; null stands for a noiseless profile.
    j["noise_snr_db"] = std::isinf(p.noise_snr_db) ? nlohmann::json(nullptr) : nlohmann::json(p.noise_snr_db);
    j["motion_artifact_prob"] = p.motion_artifact_prob;
    j["bias_strength"] = p.bias_strength;
    j["window_seconds"] = p.window_seconds;
    j["n_harmonics"] = p.n_harmonics;
    j["harmonic_decay"] = p.harmonic_decay;
    j["amplitude_jitter"] = p.amplitude_jitter;
    j["baseline_wander"] = p.baseline_wander;
    j["hrv_fraction"] = p.hrv_fraction;
    j["missing_sample_prob"] = p.missing_sample_prob;
    return j;
}

DomainProfile profile_from_json(const nlohmann::json& j) {
    DomainProfile p;
    try {
        auto dist = [](const nlohmann::json& d) {
            return HrDistribution{d.at("median").get<double>(), d.at("q25").get<double>(), d.at("q75").get<double>()};
        };
        p.name = j.at("name").get<std::string>();
        p.native_rate_hz = j.at("native_rate_hz").get<double>();
        p.female_fraction = j.at("female_fraction").get<double>();
        p.hr_female = dist(j.at("hr_dist_female"));
        p.hr_male = dist(j.at("hr_dist_male"));
        const auto& snr = j.at("noise_snr_db");
        p.noise_snr_db = snr.is_null() ? std::numeric_limits<double>::infinity() : snr.get<double>();
        p.motion_artifact_prob = j.at("motion_artifact_prob").get<double>();
        p.bias_strength = j.at("bias_strength").get<double>();
        p.window_seconds = j.at("window_seconds").get<int>();
        p.n_harmonics = j.value("n_harmonics", p.n_harmonics);
        p.harmonic_decay = j.value("harmonic_decay", p.harmonic_decay);
        p.amplitude_jitter = j.value("amplitude_jitter", p.amplitude_jitter);
        p.baseline_wander = j.value("baseline_wander", p.baseline_wander);
        p.hrv_fraction = j.value("hrv_fraction", p.hrv_fraction);
        p.missing_sample_prob = j.value("missing_sample_prob", p.missing_sample_prob);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("profile: ") + e.what());
    }
    p.validate();
    return p;
}

DomainProfile load_profile(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Schema, "profile " + path.string() + ": " + e.what());
    }
    return profile_from_json(j);
}

void save_profile(const DomainProfile& p, const std::filesystem::path& path) {
    io::write_file_atomic(path, profile_to_json(p).dump(2) + "\n");
}

std::vector<double> synth_waveform(double hr_bpm, double duration_s, const DomainProfile& profile, Gender gender,
                                   std::uint64_t seed) {
    require(std::isfinite(hr_bpm) && hr_bpm >= kMinHr && hr_bpm <= kMaxHr, ErrorKind::Invalid,
            "hr_bpm must lie in [30, 220]");
    require(std::isfinite(duration_s) && duration_s > 0.0, ErrorKind::Invalid, "duration_s must be positive");
    profile.validate();

    const double fs = profile.native_rate_hz;
    const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));
    require(n > 0, ErrorKind::Invalid, "duration too short for native rate");

    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Every draw below happens regardless of gender so that bias_strength = 0 yields identical streams.
    const double sign = gender == Gender::Male ? 1.0 : -1.0;
    const double bias = profile.bias_strength * sign;

    const auto k_count = static_cast<std::size_t>(profile.n_harmonics);
    std::vector<double> amp(k_count);
    std::vector<double> phase(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
        amp[k] = std::pow(profile.harmonic_decay, static_cast<double>(k)) *
                 std::exp(profile.amplitude_jitter * normal(rng));
        phase[k] = kTwoPi * unit(rng);
    }
    // Gender pathway: shifts energy between the fundamental and the second harmonic.
    amp[0] *= 1.0 - 0.35 * bias;
    amp[1] *= 1.0 + 0.6 * bias;
    const double noise_scale = 1.0 + 0.3 * bias;

    const double hrv_rate = 0.15 + 0.2 * unit(rng);
    const double hrv_phase = kTwoPi * unit(rng);
    const double wander_rate = 0.1 + 0.2 * unit(rng);
    const double wander_phase = kTwoPi * unit(rng);

    double power = 0.0;
    for (double a : amp) power += 0.5 * a * a;
    const double rms = std::sqrt(power);

    std::vector<double> out(n);
    const double f0 = hr_bpm / 60.0;
    const double depth = profile.hrv_fraction;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        // Integrated phase of f0 * (1 + depth * sin(2 pi r t + phi)).
        const double theta =
            kTwoPi * f0 * t -
            f0 * depth / hrv_rate * (std::cos(kTwoPi * hrv_rate * t + hrv_phase) - std::cos(hrv_phase));
        double v = 0.0;
        for (std::size_t k = 0; k < k_count; ++k) {
            v += amp[k] * std::sin(static_cast<double>(k + 1) * theta + phase[k]);
        }
        v += profile.baseline_wander * rms * std::sin(kTwoPi * wander_rate * t + wander_phase);
        out[i] = v;
    }

    // Motion bursts, one chance per window-length chunk.
    const double chunk_s = static_cast<double>(profile.window_seconds);
    const auto chunks = static_cast<std::size_t>(std::ceil(duration_s / chunk_s));
    for (std::size_t c = 0; c < chunks; ++c) {
        const double draw = unit(rng);
        const double start = (static_cast<double>(c) + unit(rng)) * chunk_s;
        const double width = 0.5 + unit(rng);
        const double height = (1.5 + 1.5 * unit(rng)) * rms * (unit(rng) < 0.5 ? -1.0 : 1.0);
        const double freq = 0.3 + 2.7 * unit(rng);
        if (draw >= profile.motion_artifact_prob) continue;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) / fs;
            const double z = (t - start) / (0.5 * width);
            if (std::abs(z) > 4.0) continue;
            out[i] += height * std::exp(-0.5 * z * z) * std::cos(kTwoPi * freq * (t - start));
        }
    }

    if (std::isfinite(profile.noise_snr_db)) {
        const double sd = rms * std::pow(10.0, -profile.noise_snr_db / 20.0) * noise_scale;
        for (double& v : out) v += sd * normal(rng);
    }

    if (profile.missing_sample_prob > 0.0) {
        for (double& v : out) {
            if (unit(rng) < profile.missing_sample_prob) v = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return out;
}

std::vector<double> resample_to_40hz(std::span<const double> signal, double native_rate_hz) {
    require(!signal.empty(), ErrorKind::Invalid, "resample: empty signal");
    require(finite_positive(native_rate_hz), ErrorKind::Invalid, "resample: native rate must be positive");
    const auto in_len = signal.size();
    const auto out_len = static_cast<std::size_t>(
        std::llround(static_cast<double>(in_len) * kTargetRateHz / native_rate_hz));
    std::vector<double> out(out_len);
    const double step = native_rate_hz / kTargetRateHz;
    for (std::size_t j = 0; j < out_len; ++j) {
        const double pos = static_cast<double>(j) * step;
        const auto lo = static_cast<std::size_t>(pos);
        if (lo + 1 >= in_len) {
            out[j] = signal[in_len - 1];
            continue;
        }
        const double frac = pos - static_cast<double>(lo);
        out[j] = frac == 0.0 ? signal[lo] : signal[lo] + frac * (signal[lo + 1] - signal[lo]);
    }
    return out;
}

void impute_linear(std::span<double> x) {
    const std::size_t n = x.size();
    std::size_t prev = n;  // index of last finite sample
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(x[i])) continue;
        if (prev == n) {
            for (std::size_t j = 0; j < i; ++j) x[j] = x[i];
        } else if (i > prev + 1) {
            const double span = static_cast<double>(i - prev);
            for (std::size_t j = prev + 1; j < i; ++j) {
                x[j] = x[prev] + (x[i] - x[prev]) * static_cast<double>(j - prev) / span;
            }
        }
        prev = i;
    }
    if (prev == n) {
        std::fill(x.begin(), x.end(), 0.0);
        return;
    }
    for (std::size_t j = prev + 1; j < n; ++j) x[j] = x[prev];
}

void standardize(std::span<double> x) {
    if (x.empty()) return;
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / n);
    if (sd < 1e-8) {
        std::fill(x.begin(), x.end(), 0.0);
        return;
    }
    for (double& v : x) v = (v - mean) / sd;
}

std::vector<PpgRecord> segment_and_standardize(std::span<const double> signal_40hz, int window_seconds,
                                               double hr_bpm, const RecordMeta& meta) {
    require(window_seconds >= 1, ErrorKind::Invalid, "window_seconds must be >= 1");
    const auto win = static_cast<std::size_t>(window_seconds) * static_cast<std::size_t>(kPatchLen);
    require(signal_40hz.size() >= win, ErrorKind::Invalid, "signal shorter than one window");

    std::vector<double> filled(signal_40hz.begin(), signal_40hz.end());
    impute_linear(filled);

    std::vector<PpgRecord> out;
    const std::size_t count = filled.size() / win;
    out.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        PpgRecord r;
        r.subject_id = meta.subject_id;
        r.dataset = meta.dataset;
        r.gender = meta.gender;
        r.hr_bpm = hr_bpm;
        r.signal.assign(filled.begin() + static_cast<std::ptrdiff_t>(w * win),
                        filled.begin() + static_cast<std::ptrdiff_t>((w + 1) * win));
        standardize(r.signal);
        out.push_back(std::move(r));
    }
    return out;
}

double sample_hr(const HrDistribution& dist, Rng& rng) {
    std::normal_distribution<double> normal(dist.log_mean(), dist.log_sigma());
    for (;;) {
        const double hr = std::exp(normal(rng));
        if (hr >= kMinHr && hr <= kMaxHr) return hr;
    }
}

namespace {

std::vector<PpgRecord> generate_subject(const DomainProfile& profile, int index, Gender gender, int windows,
                                        std::uint64_t seed) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
    const double hr = sample_hr(profile.hr_for(gender), rng);
    const double duration = static_cast<double>(windows) * profile.window_seconds;
    auto raw = synth_waveform(hr, duration, profile, gender, rng());
    auto resampled = resample_to_40hz(raw, profile.native_rate_hz);

    char id[32];
    std::snprintf(id, sizeof(id), "-%05d", index);
    RecordMeta meta{profile.name + id, profile.name, gender};
    auto recs = segment_and_standardize(resampled, profile.window_seconds, hr, meta);
    if (recs.size() > static_cast<std::size_t>(windows)) recs.resize(static_cast<std::size_t>(windows));
    return recs;
}

}  // namespace

std::vector<PpgRecord> generate_records(const DomainProfile& profile, int n_subjects, int windows_per_subject,
                                        std::uint64_t seed, int workers) {
    profile.validate();
    require(n_subjects >= 2, ErrorKind::Invalid, "need at least two subjects");
    require(windows_per_subject >= 1, ErrorKind::Invalid, "windows_per_subject must be >= 1");

    const auto n = static_cast<std::size_t>(n_subjects);
    auto n_female = static_cast<std::size_t>(std::llround(profile.female_fraction * static_cast<double>(n)));
    n_female = std::clamp<std::size_t>(n_female, 1, n - 1);
    std::vector<Gender> genders(n, Gender::Male);
    std::fill_n(genders.begin(), n_female, Gender::Female);
    Rng assign_rng(derive_seed(seed, "genders"));
    std::shuffle(genders.begin(), genders.end(), assign_rng);

    std::vector<std::vector<PpgRecord>> per_subject(n);
    const auto job = [&](std::size_t i) {
        per_subject[i] = generate_subject(profile, static_cast<int>(i), genders[i], windows_per_subject, seed);
    };
    const std::size_t w = static_cast<std::size_t>(std::max(1, workers));
    if (w == 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < w; ++t) {
            pool.emplace_back([&, t] {
                for (std::size_t i = t; i < n; i += w) job(i);
            });
        }
        for (auto& th : pool) th.join();
    }

    std::vector<PpgRecord> all;
    all.reserve(n * static_cast<std::size_t>(windows_per_subject));
    for (auto& recs : per_subject) {
        for (auto& r : recs) all.push_back(std::move(r));
    }
    return all;
}

void generate_corpus(const DomainProfile& profile, int n_subjects, int windows_per_subject, std::uint64_t seed,
                     const std::filesystem::path& out, int workers) {
    io::write_corpus(out, generate_records(profile, n_subjects, windows_per_subject, seed, workers));
}

}  // namespace fairtune::synthpg
