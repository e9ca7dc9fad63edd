#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sepsislab/cohort_io.hpp"

namespace sepsislab {

// Joint Gaussian over standardized variables, used to fill in missing values.
struct ImputationModel {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;      // raw_covariance + ridge * I
    Eigen::MatrixXd raw_covariance;  // pairwise-complete estimate
    double ridge = 0.0;
    std::vector<VariableId> never_observed;  // given a standard-normal marginal
    std::string vocabulary_hash;

    std::size_t size() const { return static_cast<std::size_t>(mean.size()); }

    // Direct construction; requires a symmetric positive semi-definite covariance.
    static ImputationModel from_moments(Eigen::VectorXd mean, Eigen::MatrixXd covariance,
                                        std::string vocabulary_hash = {});
};

inline constexpr double kMinEigenvalue = 1e-6;

// Mean and pairwise-complete covariance of standardized snapshot values over
// every (patient, step time) snapshot up to each record's label time (or its
// last observation when unlabeled). A ridge is added until the smallest
// eigenvalue reaches kMinEigenvalue.
ImputationModel fit_imputation(const Cohort& cohort);
ImputationModel fit_imputation(const Cohort& cohort, std::span<const std::size_t> indices);

// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Eigen::MatrixXd& m);

// Lower-triangular L with L L^T = A for symmetric PSD A; columns whose pivot
// vanishes are left zero.
Eigen::MatrixXd psd_cholesky(const Eigen::MatrixXd& a);

// Solves L L^T X = B for a psd_cholesky factor; components on vanished pivots are 0.
Eigen::MatrixXd psd_solve(const Eigen::MatrixXd& l, const Eigen::MatrixXd& b);

// Gaussian of `free` variables given standardized values of `given` variables.
struct GaussianConditional {
    std::vector<VariableId> free;
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
    Eigen::MatrixXd factor;  // psd_cholesky(covariance)
};

GaussianConditional condition(const ImputationModel& model, std::span<const VariableId> given,
                              const Eigen::VectorXd& given_values, std::span<const VariableId> free);

// `dim` standard normals for Monte-Carlo draw `index` of a request seeded by `seed`.
Eigen::VectorXd standard_normals(std::uint64_t seed, std::uint64_t index, std::size_t dim);

// n completed value vectors (raw units, one column per draw). Observed entries
// keep their snapshot values; missing ones are drawn from the Gaussian
// conditional on the observed entries. Draw m depends only on (seed, m).
Eigen::MatrixXd sample_missing(const ImputationModel& model, const Snapshot& snapshot, std::size_t n,
                               std::uint64_t seed, const Vocabulary& vocab);

void save_imputation(const ImputationModel& model, const std::filesystem::path& path);
ImputationModel load_imputation(const std::filesystem::path& path, const Vocabulary& vocab);

}  // namespace sepsislab
