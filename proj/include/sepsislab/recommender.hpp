#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sepsislab/uncertainty.hpp"

namespace sepsislab {

// Expected entropy after observing `variables`, averaged over K hypothetical values.
struct CounterfactualEstimate {
    std::vector<VariableId> variables;
    double u_before = 0.0;    // entropy now
    double u_after = 0.0;     // mean over k of the entropy with the k-th hypothetical values observed
    double u_after_se = 0.0;  // standard error of u_after over the K draws
    double reduction = 0.0;   // u_before - u_after
    std::size_t k = 0;
    // Means over k of the inner Monte-Carlo summaries.
    double p_mean = 0.5;
    double p_std = 0.0;
    double band_low = 0.5;
    double band_high = 0.5;
    // Standardized hypothetical values (|variables| x K); filled only on request.
    Eigen::MatrixXd sampled_values;

    // reduction / u_before, 0 when u_before is 0.
    double reduction_fraction() const { return u_before > 0.0 ? reduction / u_before : 0.0; }
};

struct Recommendation {
    double u_before = 0.0;
    std::uint64_t seed = 0;
    std::vector<CounterfactualEstimate> ranked;  // reduction descending, ties by variable id

    bool fully_observed() const { return ranked.empty(); }
    std::vector<CounterfactualEstimate> top(std::size_t k) const;
};

inline constexpr std::size_t kDefaultTopK = 5;

// Core routine on a prepared evaluator. Hypothetical values for `variables` are
// drawn jointly from the conditional given the observed ones; each draw is
// scored with `inner_draws` completions of the remaining missing variables.
// Inner draws reuse the same normal streams for every k and every candidate.
CounterfactualEstimate estimate_reduction(const MonteCarloEvaluator& mc, std::span<const VariableId> variables,
                                          double u_before, std::size_t k, std::size_t inner_draws,
                                          std::uint64_t seed, bool keep_samples = false);

// Throws PreconditionError when `variables` is empty, has duplicates, or names a
// variable that is already observed at t.
CounterfactualEstimate estimate_reduction(const ModelParams& params, const ImputationModel& imputation,
                                          const PatientRecord& record, double t,
                                          std::span<const VariableId> variables, const PolicyConfig& config,
                                          const Vocabulary& vocab, bool keep_samples = false);

// One singleton estimate per missing variable (restricted to `candidates` when
// given), ranked. Empty when nothing is missing.
Recommendation recommend(const MonteCarloEvaluator& mc, const PolicyConfig& config, std::uint64_t seed,
                         const std::optional<std::vector<VariableId>>& candidates = std::nullopt);
Recommendation recommend(const ModelParams& params, const ImputationModel& imputation, const PatientRecord& record,
                         double t, const PolicyConfig& config, const Vocabulary& vocab,
                         const std::optional<std::vector<VariableId>>& candidates = std::nullopt);

struct RiskPoint {
    double time = 0.0;
    double p_mean = 0.5;
    double p_std = 0.0;
    double band_low = 0.5;
    double band_high = 0.5;
    double entropy = 0.0;

    friend bool operator==(const RiskPoint&, const RiskPoint&) = default;
};

RiskPoint to_risk_point(double time, const UncertainPrediction& pred);

struct RiskTrajectory {
    double now = 0.0;
    std::uint64_t seed = 0;
    std::vector<RiskPoint> history;     // whole hours before now, then now
    std::vector<RiskPoint> projection;  // now + 1h .. now + horizon, no new observations
    std::vector<VariableId> hypothetical;
    std::optional<std::vector<RiskPoint>> counterfactual;  // at now and each projection time
};

// History and projection come from predict_uncertain; with a non-empty
// hypothetical set, the counterfactual marginalizes over K joint draws of those
// variables observed at `now`.
RiskTrajectory project_trajectory(const ModelParams& params, const ImputationModel& imputation,
                                  const PatientRecord& record, double now, const PolicyConfig& config,
                                  const Vocabulary& vocab, std::span<const VariableId> hypothetical = {});

// Risk points at whole hours before `now` plus `now` itself.
std::vector<double> history_times(double now);

}  // namespace sepsislab
