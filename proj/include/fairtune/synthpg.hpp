#pragma once

// Synthetic multi-domain PPG corpora and the 40 Hz preprocessing pipeline.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairtune/common.hpp"

namespace fairtune::synthpg {

inline constexpr double kTargetRateHz = 40.0;
inline constexpr int kPatchLen = 40;
inline constexpr double kMinHr = 30.0;
inline constexpr double kMaxHr = 220.0;

/// Log-normal heart-rate distribution described by its median and quartiles (bpm).
struct HrDistribution {
    double median = 80.0;
    double q25 = 70.0;
    double q75 = 90.0;

    double log_mean() const;
    /// Scale chosen so that exp(mu +- 0.6745 sigma) spans the quartile ratio.
    double log_sigma() const;
};

struct DomainProfile {
    std::string name = "custom";
    double native_rate_hz = 40.0;
    double female_fraction = 0.5;
    HrDistribution hr_female;
    HrDistribution hr_male;
    double noise_snr_db = 20.0;  // +inf disables additive noise
    double motion_artifact_prob = 0.0;
    double bias_strength = 0.0;
    int window_seconds = 4;

    // Free generative knobs.
    int n_harmonics = 4;
    double harmonic_decay = 0.5;
    double amplitude_jitter = 0.15;
    double baseline_wander = 0.3;
    double hrv_fraction = 0.02;
    double missing_sample_prob = 0.0;

    double male_fraction() const { return 1.0 - female_fraction; }
    const HrDistribution& hr_for(Gender g) const { return g == Gender::Female ? hr_female : hr_male; }

    /// Throws Error(Invalid) on any field outside its documented range.
    void validate() const;
};

/// Presets "dalia", "butppg", "mimic".
DomainProfile preset_profile(std::string_view name);
bool is_preset(std::string_view name);

nlohmann::json profile_to_json(const DomainProfile& p);
DomainProfile profile_from_json(const nlohmann::json& j);
DomainProfile load_profile(const std::filesystem::path& path);
void save_profile(const DomainProfile& p, const std::filesystem::path& path);

struct PpgRecord {
    std::string subject_id;
    std::string dataset;
    Gender gender = Gender::Female;
    double hr_bpm = 0.0;
    std::vector<double> signal;
};

struct RecordMeta {
    std::string subject_id;
    std::string dataset;
    Gender gender = Gender::Female;
};

/// Raw quasi-periodic waveform at the profile's native rate.
std::vector<double> synth_waveform(double hr_bpm, double duration_s, const DomainProfile& profile, Gender gender,
                                   std::uint64_t seed);

/// Linear-interpolation resampling to 40 Hz; output length round(n * 40 / rate).
std::vector<double> resample_to_40hz(std::span<const double> signal, double native_rate_hz);

/// Fills NaN samples by linear interpolation between finite neighbours, holding values at the edges.
/// An all-NaN input becomes all zeros.
void impute_linear(std::span<double> x);

/// Zero-mean unit-variance in place. Windows with stddev < 1e-8 become zeros.
void standardize(std::span<double> x);

std::vector<PpgRecord> segment_and_standardize(std::span<const double> signal_40hz, int window_seconds, double hr_bpm,
                                               const RecordMeta& meta);

/// Draws one subject heart rate from the gender-specific log-normal, rejecting values outside [30, 220].
double sample_hr(const HrDistribution& dist, Rng& rng);

/// In-memory corpus. Pure function of (profile, n_subjects, windows_per_subject, seed); `workers` only
/// changes scheduling.
std::vector<PpgRecord> generate_records(const DomainProfile& profile, int n_subjects, int windows_per_subject,
                                        std::uint64_t seed, int workers = 1);

/// Writes the corpus as JSONL.
void generate_corpus(const DomainProfile& profile, int n_subjects, int windows_per_subject, std::uint64_t seed,
                     const std::filesystem::path& out, int workers = 1);

}  // namespace fairtune::synthpg
