#include "sepsislab/generator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>

#include "sepsislab/errors.hpp"
#include "sepsislab/rng.hpp"

namespace sepsislab {

namespace {

constexpr std::size_t kFactors = 5;  // hemodynamic, renal, inflammatory, metabolic, electrolyte

// Per-variable generative profile in standardized units, indexed like Vocabulary::standard().
struct Profile {
    std::array<double, kFactors> loading;
    double idiosyncratic;  // patient-level offset not explained by factors
    double fluctuation;    // AR(1) within-stay noise
    double sepsis_effect;  // shift at full severity
    double mimic_effect;   // shift during a non-septic episode
};

// clang-format off
constexpr std::array<Profile, 20> kProfiles = {{
    // loadings: hemo, renal, inflam, metab, elec
    {{ 0.6, 0.0, 0.0, 0.0, 0.0}, 0.60, 0.45,  1.1,  1.0},  // HR
    {{ 0.4, 0.0, 0.0, 0.0, 0.0}, 0.60, 0.45,  1.0,  0.9},  // RR
    {{ 0.0, 0.0, 0.2, 0.0, 0.0}, 0.50, 0.45,  0.9,  0.9},  // Temp
    {{-0.4, 0.0, 0.0, 0.0, 0.0}, 0.70, 0.45, -0.8, -0.6},  // SBP
    {{-0.3, 0.0, 0.0, 0.0, 0.0}, 0.70, 0.45, -0.6, -0.4},  // DBP
    {{ 0.0, 0.0, 0.0, 0.0, 0.0}, 0.60, 0.45, -0.6, -0.4},  // SpO2
    {{ 0.0, 0.0, 0.4, 0.3, 0.0}, 0.45, 0.30,  2.2,  0.0},  // Lactate
    {{ 0.0, 0.0, 0.6, 0.0, 0.0}, 0.45, 0.30,  1.5,  0.5},  // WBC
    {{ 0.0, 0.8, 0.0, 0.0, 0.0}, 0.30, 0.25,  0.6,  0.0},  // Creatinine
    {{ 0.0, 0.0, 0.5, 0.0, 0.0}, 0.50, 0.25,  0.6,  0.0},  // Bilirubin
    {{ 0.0, 0.0,-0.3, 0.0, 0.0}, 0.70, 0.25, -0.7,  0.0},  // Platelets
    {{ 0.0,-0.4, 0.0, 0.0, 0.0}, 0.70, 0.25,  0.0,  0.0},  // Hemoglobin
    {{ 0.0, 0.0, 0.0, 0.0, 0.6}, 0.50, 0.30,  0.0,  0.0},  // Sodium
    {{ 0.0, 0.4, 0.0, 0.0, 0.0}, 0.60, 0.30,  0.0,  0.0},  // Potassium
    {{ 0.0, 0.0, 0.0, 0.0, 0.6}, 0.50, 0.30,  0.0,  0.0},  // Chloride
    {{ 0.0, 0.0, 0.0,-0.5, 0.0}, 0.50, 0.30, -0.9,  0.0},  // Bicarbonate
    {{ 0.0, 0.8, 0.0, 0.0, 0.0}, 0.40, 0.25,  0.4,  0.0},  // BUN
    {{ 0.0, 0.0, 0.0, 0.5, 0.0}, 0.60, 0.35,  0.3,  0.0},  // Glucose
    {{ 0.0, 0.0, 0.4, 0.0, 0.0}, 0.60, 0.25,  0.5,  0.0},  // INR
    {{ 0.0, 0.0,-0.4, 0.0, 0.0}, 0.60, 0.20,  0.0,  0.0},  // Albumin
}};
// clang-format on

constexpr double kMeasurementNoise = 0.15;
constexpr double kCorrelationHours = 6.0;

// Linear ramp from 0 at `start` to `amplitude` at `end`, held afterwards.
double ramp(double t, double start, double end, double amplitude) {
    if (t <= start) return 0.0;
    if (t >= end) return amplitude;
    return amplitude * (t - start) / (end - start);
}

std::string patient_id_for(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "P%05zu", i + 1);
    return buf;
}

PatientRecord generate_patient(std::uint64_t seed, std::size_t index, const GeneratorConfig& cfg,
                               const Vocabulary& vocab) {
    SplitMix64 rng(combine_seed(seed, index));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unif(rng); };

    PatientRecord rec;
    rec.patient_id = patient_id_for(index);

    auto& st = rec.static_info;
    st.age = std::clamp(std::round((65.0 + 15.0 * normal(rng)) * 10.0) / 10.0, 18.0, 95.0);
    st.sex = unif(rng) < 0.5 ? "F" : "M";
    static constexpr double kFlagRates[] = {0.25, 0.15, 0.15, 0.10};
    for (std::size_t f = 0; f < cfg.n_flags; ++f) {
        const double rate = f < std::size(kFlagRates) ? kFlagRates[f] : 0.15;
        st.history_flags.push_back(unif(rng) < rate ? 1 : 0);
    }
    auto flag = [&](std::size_t f) { return f < st.history_flags.size() && st.history_flags[f] ? 1.0 : 0.0; };

    const bool positive = unif(rng) < cfg.prevalence;
    const double label_time = uniform(cfg.min_stay_hours, cfg.max_stay_hours);

    // Patient-level baseline.
    std::array<double, kFactors> factor{};
    for (auto& f : factor) f = normal(rng);
    factor[1] += 1.5 * flag(1) + 0.5 * flag(2);      // chronic kidney disease, heart failure
    factor[3] += 1.2 * flag(0);                      // diabetes
    factor[1] += 0.3 * (st.age - 65.0) / 15.0;
    const std::size_t n_vars = vocab.size();
    std::vector<double> baseline(n_vars, 0.0);
    for (std::size_t v = 0; v < n_vars; ++v) {
        const auto& p = kProfiles[v % kProfiles.size()];
        double b = p.idiosyncratic * normal(rng);
        for (std::size_t k = 0; k < kFactors; ++k) b += p.loading[k] * factor[k];
        baseline[v] = b;
    }

    // Severity processes.
    double sepsis_start = 0.0, sepsis_end = 0.0, sepsis_amp = 0.0;
    if (positive) {
        const double onset = label_time + uniform(0.0, cfg.horizon_hours);
        const double lead = uniform(6.0, 12.0);
        sepsis_start = onset - lead;
        sepsis_end = onset;
        sepsis_amp = uniform(0.5, 1.5);
    }
    double mimic_start = 0.0, mimic_end = 0.0, mimic_amp = 0.0;
    if (!positive && unif(rng) < cfg.mimic_fraction) {
        const double peak = label_time + uniform(0.0, cfg.horizon_hours);
        mimic_start = peak - uniform(6.0, 12.0);
        mimic_end = peak;
        mimic_amp = uniform(0.5, 1.5);
    }

    // Sampling schedule and latent trajectories.
    std::vector<double> fluct(n_vars, 0.0);
    for (std::size_t v = 0; v < n_vars; ++v) fluct[v] = kProfiles[v % kProfiles.size()].fluctuation * normal(rng);
    double t = uniform(0.0, 0.5);
    double prev_t = 0.0;
    while (t <= label_time) {
        const double dt = t - prev_t;
        const double rho = std::exp(-dt / kCorrelationHours);
        const double sev = positive ? ramp(t, sepsis_start, sepsis_end, sepsis_amp) : 0.0;
        const double mim = mimic_amp > 0.0 ? ramp(t, mimic_start, mimic_end, mimic_amp) : 0.0;
        for (std::size_t v = 0; v < n_vars; ++v) {
            const auto& p = kProfiles[v % kProfiles.size()];
            fluct[v] = rho * fluct[v] + std::sqrt(1.0 - rho * rho) * p.fluctuation * normal(rng);
            const double z = baseline[v] + fluct[v] + p.sepsis_effect * sev + p.mimic_effect * mim +
                             kMeasurementNoise * normal(rng);
            const auto& spec = vocab[static_cast<VariableId>(v)];
            const bool drawn = spec.kind == VariableKind::Vital || unif(rng) >= cfg.missing_fraction;
            if (drawn) rec.observations.push_back({spec.id, spec.destandardize(z), t});
        }
        prev_t = t;
        t += cfg.mean_sampling_interval_hours * uniform(0.5, 1.5);
    }
    rec.label = Label{positive, label_time};
    rec.sort_observations();
    return rec;
}

}  // namespace

void GeneratorConfig::validate() const {
    auto fail = [](const char* what) { throw ConfigError(std::string("invalid generator config: ") + what); };
    if (!(prevalence >= 0.0 && prevalence <= 1.0)) fail("prevalence must lie in [0,1]");
    if (!(missing_fraction >= 0.0 && missing_fraction <= 1.0)) fail("missing_fraction must lie in [0,1]");
    if (!(min_stay_hours > 0.0) || !(max_stay_hours >= min_stay_hours)) fail("stay bounds");
    if (!(mean_sampling_interval_hours > 0.0)) fail("mean_sampling_interval_hours must be > 0");
    if (!(horizon_hours > 0.0)) fail("horizon_hours must be > 0");
    if (!(mimic_fraction >= 0.0 && mimic_fraction <= 1.0)) fail("mimic_fraction must lie in [0,1]");
}

Cohort generate_cohort(std::uint64_t seed, std::size_t n_patients, const GeneratorConfig& config) {
    if (n_patients < 1) throw PreconditionError("n_patients must be >= 1");
    config.validate();
    Cohort cohort;
    cohort.vocabulary = Vocabulary::standard();
    cohort.n_flags = config.n_flags;
    cohort.patients.reserve(n_patients);
    for (std::size_t i = 0; i < n_patients; ++i)
        cohort.patients.push_back(generate_patient(seed, i, config, cohort.vocabulary));
    return cohort;
}

}  // namespace sepsislab
