#pragma once

#include <filesystem>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "sepsislab/cohort_io.hpp"

namespace sepsislab {

// L2-regularized logistic regression on snapshot features (standardized latest
// values, missing entries set to 0, i.e. the population mean).
struct LogisticModel {
    Eigen::VectorXd weights;
    double bias = 0.0;
    std::string vocabulary_hash;

    double predict(const Eigen::VectorXd& features) const;
};

struct LogisticConfig {
    double l2 = 1e-2;  // penalty (l2 / 2) * |w|^2 on the summed loss; bias unpenalized
    int max_iterations = 100;
    double tolerance = 1e-10;
};

// Newton-Raphson with step halving. Rows of `x` are examples.
LogisticModel logistic_fit(const Eigen::MatrixXd& x, std::span<const int> y, const LogisticConfig& config = {});

Eigen::VectorXd snapshot_features(const Snapshot& snap, const Vocabulary& vocab);

// Fits on cohort.patients[indices] at each record's label time.
LogisticModel train_logistic(const Cohort& cohort, std::span<const std::size_t> indices,
                             const LogisticConfig& config = {});

double logistic_risk(const LogisticModel& model, const PatientRecord& record, double t, const Vocabulary& vocab);

void save_logistic(const LogisticModel& model, const std::filesystem::path& path);
LogisticModel load_logistic(const std::filesystem::path& path, const Vocabulary& vocab);

}  // namespace sepsislab
