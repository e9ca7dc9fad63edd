#pragma once

#include <vector>

#include <Eigen/Dense>

#include "sepsislab/record.hpp"
#include "sepsislab/vocabulary.hpp"

namespace sepsislab {

// One observed variable inside a timestep, as the network sees it.
struct Reading {
    VariableId variable = 0;
    double value = 0.0;    // standardized by the variable's population mean/std
    double recency = 1.0;  // exp(-age / staleness); 1 for a value taken at the step time
};

struct Step {
    double time = 0.0;
    std::vector<Reading> readings;  // ascending variable id
};

struct SequenceInput {
    Eigen::VectorXd statics;
    std::vector<Step> steps;
};

inline constexpr double kBucketHours = 0.5;
inline constexpr std::size_t kDefaultMaxTimesteps = 100;

// [ (age-65)/15, sex == "M", flag_0, ..., flag_{n-1} ]
Eigen::VectorXd static_features(const StaticInfo& info);
inline std::size_t static_dim(std::size_t n_flags) { return 2 + n_flags; }

double recency_of(const VariableSpec& spec, double age_hours);
Reading make_reading(const VariableSpec& spec, double raw_value, double age_hours);

// Readings for the present entries of a snapshot.
std::vector<Reading> readings_from(const Snapshot& snap, const Vocabulary& vocab);

// Observations with time <= t are grouped into 0.5 h buckets (bucket end =
// ceil(time / 0.5) * 0.5, capped at t); every bucket end becomes a step holding
// the snapshot at that instant, and the last step is always the snapshot at t.
// Only the `max_timesteps` most recent steps are kept.
SequenceInput build_sequence(const PatientRecord& record, double t, const Vocabulary& vocab,
                             std::size_t max_timesteps = kDefaultMaxTimesteps);

}  // namespace sepsislab
