#pragma once

#include <cstdint>

#include "sepsislab/cohort_io.hpp"

namespace sepsislab {

// Synthetic ICU cohort. Each patient carries a latent severity process; positives
// drift (rising lactate, heart rate, ...) in the hours before the prediction time
// and reach onset within `horizon_hours` after it. A share of negatives has a
// transient non-septic vital-sign episode, which is what makes labs informative.
struct GeneratorConfig {
    double prevalence = 0.2;
    // Probability that a lab is NOT drawn at a sampling time. Vitals are always recorded.
    double missing_fraction = 0.8;
    double min_stay_hours = 12.0;
    double max_stay_hours = 48.0;
    double mean_sampling_interval_hours = 1.0;
    double horizon_hours = 4.0;
    double mimic_fraction = 0.35;
    std::size_t n_flags = 4;

    void validate() const;
};

Cohort generate_cohort(std::uint64_t seed, std::size_t n_patients, const GeneratorConfig& config = {});

}  // namespace sepsislab
