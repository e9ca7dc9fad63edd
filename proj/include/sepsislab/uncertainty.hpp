#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "sepsislab/features.hpp"
#include "sepsislab/imputation.hpp"
#include "sepsislab/model.hpp"

namespace sepsislab {

struct PolicyConfig {
    double th_s = 0.5;  // flag when p_mean > th_s
    double th_e = 0.25;  // request labs when entropy > th_e
    double horizon_hours = 4.0;
    std::size_t mcs_samples = 100;
    std::size_t counterfactual_samples = 500;
    std::uint64_t seed = 0;
    std::size_t max_timesteps = kDefaultMaxTimesteps;

    void validate() const;
    friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

struct UncertainPrediction {
    double p_mean = 0.5;
    double p_std = 0.0;  // population standard deviation over draws
    double entropy = 0.0;  // binary entropy of p_mean, natural log
    double band_low = 0.5;
    double band_high = 0.5;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;

    friend bool operator==(const UncertainPrediction&, const UncertainPrediction&) = default;
};

struct PolicyDecision {
    bool flag_sepsis = false;
    bool request_labs = false;

    friend bool operator==(const PolicyDecision&, const PolicyDecision&) = default;
};

// -p ln p - (1-p) ln(1-p), with 0 ln 0 = 0.
double binary_entropy(double p);

PolicyDecision decide(const UncertainPrediction& pred, const PolicyConfig& config);

// Mean, population std, entropy at the mean, and the clipped 1.96-sigma band.
UncertainPrediction summarize(std::span<const double> probabilities, std::size_t n_samples, std::uint64_t seed);

// Per-request seed so results do not depend on scheduling.
std::uint64_t request_seed(std::uint64_t base_seed, std::string_view patient_id, double t);

// Throws ConfigError unless model, imputation and vocabulary agree.
void check_compatible(const ModelParams& params, const ImputationModel& imputation, const Vocabulary& vocab);

// Monte-Carlo machinery for one (record, t): the sequence prefix is run once and
// every completion of the missing variables is evaluated on the final step only.
class MonteCarloEvaluator {
public:
    MonteCarloEvaluator(const ModelParams& params, const ImputationModel& imputation, const PatientRecord& record,
                        double t, const Vocabulary& vocab, std::size_t max_timesteps = kDefaultMaxTimesteps);

    const Snapshot& snapshot() const { return snapshot_; }
    const std::vector<VariableId>& missing() const { return missing_; }
    const std::vector<VariableId>& observed() const { return observed_; }
    // Gaussian of the missing variables (in missing() order) given the observed ones.
    const GaussianConditional& conditional() const { return conditional_; }
    const ModelParams& params() const { return params_; }
    const ImputationModel& imputation() const { return imputation_; }
    const Vocabulary& vocabulary() const { return vocab_; }
    double time() const { return t_; }

    // Probabilities for standardized completions (rows follow missing(), one column each).
    Eigen::VectorXd evaluate(const Eigen::MatrixXd& completions) const;

    // `draws` Monte-Carlo completions; draw m uses standard_normals(seed, m, |missing|).
    UncertainPrediction predict(std::size_t draws, std::uint64_t seed) const;

private:
    const ModelParams& params_;
    const ImputationModel& imputation_;
    const Vocabulary& vocab_;
    double t_;
    Snapshot snapshot_;
    std::vector<VariableId> missing_;
    std::vector<VariableId> observed_;
    std::vector<Reading> fixed_;
    PrefixState prefix_;
    GaussianConditional conditional_;
};

// snapshot_at(record, t) completed M = config.mcs_samples times and scored; the
// seed is request_seed(config.seed, record.patient_id, t).
UncertainPrediction predict_uncertain(const ModelParams& params, const ImputationModel& imputation,
                                      const PatientRecord& record, double t, const PolicyConfig& config,
                                      const Vocabulary& vocab);

}  // namespace sepsislab
