#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sepsislab/cohort_io.hpp"
#include "sepsislab/imputation.hpp"
#include "sepsislab/logistic.hpp"
#include "sepsislab/model.hpp"
#include "sepsislab/uncertainty.hpp"

namespace sepsislab {

enum class Condition { Masked, Recommended, Full };
enum class Scorer { Lstm, Logistic };

std::string_view to_string(Condition c);
Condition condition_from_string(std::string_view s);
std::string_view to_string(Scorer s);
Scorer scorer_from_string(std::string_view s);

struct ExperimentConfig {
    Condition condition = Condition::Masked;
    // Per patient, at most floor(budget * withheld labs) reveals.
    double budget = 0.25;
    PolicyConfig policy;
    Scorer scorer = Scorer::Lstm;
    std::string model_name;  // report label; defaults to the scorer name

    void validate() const;
};

// Trained artifacts used by an experiment. The LSTM and imputation model drive
// recommendations for every scorer; `logistic` is required for Scorer::Logistic.
struct ExperimentModels {
    const ModelParams* lstm = nullptr;
    const ImputationModel* imputation = nullptr;
    const LogisticModel* logistic = nullptr;
};

struct AcquisitionStep {
    std::string patient_id;
    std::size_t iteration = 0;
    VariableId variable = 0;
    double observation_time = 0.0;
    double value = 0.0;
    double entropy_before = 0.0;
    double entropy_after = 0.0;
    double expected_reduction = 0.0;

    friend bool operator==(const AcquisitionStep&, const AcquisitionStep&) = default;
};

struct PatientResult {
    std::string patient_id;
    int label = 0;
    double score = 0.5;
    double entropy = 0.0;
    std::size_t revealed = 0;
    std::size_t withheld = 0;  // lab observations at or before the label time
    bool budget_exhausted = false;

    friend bool operator==(const PatientResult&, const PatientResult&) = default;
};

struct ExperimentReport {
    std::string model;
    Condition condition = Condition::Masked;
    double budget = 0.0;
    std::uint64_t seed = 0;
    std::optional<double> auc;  // empty when the scored patients hold a single class
    // Revealed over withheld lab observations; 0 for masked, 1 for full.
    double acquired_fraction = 0.0;
    std::size_t n_patients = 0;
    std::size_t revealed_total = 0;
    std::size_t withheld_total = 0;
    std::vector<PatientResult> patients;  // by patient_id
    std::vector<AcquisitionStep> log;
    double runtime_seconds = 0.0;
};

// Scores cohort.patients[indices] at each label time under one condition.
ExperimentReport run_condition(const Cohort& cohort, std::span<const std::size_t> indices,
                               const ExperimentModels& models, const ExperimentConfig& config);

// Lab observations at or before t.
std::size_t count_labs(const PatientRecord& record, double t, const Vocabulary& vocab);

struct ReportTable {
    std::string text;  // one row per model; masked / recommended / full AUC and acquired fraction
    std::string csv;   // model,condition,auc,acquired_fraction,n_patients,seed; undefined AUC is blank
};

ReportTable report_table(std::span<const ExperimentReport> reports);

inline constexpr const char* kReportCsvHeader = "model,condition,auc,acquired_fraction,n_patients,seed";

}  // namespace sepsislab
