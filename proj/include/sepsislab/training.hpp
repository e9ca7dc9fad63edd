#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sepsislab/cohort_io.hpp"
#include "sepsislab/imputation.hpp"
#include "sepsislab/model.hpp"

namespace sepsislab {

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
    Optimizer optimizer = Optimizer::Adam;
    double learning_rate = 0.005;
    std::size_t batch_size = 32;
    std::size_t epochs = 30;
    std::uint64_t seed = 0;
    std::array<double, 3> split_fractions = {0.8, 0.1, 0.1};  // train / validation / test
    std::size_t max_timesteps = kDefaultMaxTimesteps;
    double gradient_clip = 5.0;  // global L2 norm; <= 0 disables
    std::size_t embed_dim = 256;
    std::size_t hidden_dim = 256;
    std::size_t num_layers = 2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    // Per epoch, each training example is shown with its labs removed and a
    // uniformly random number of their latest values put back, with this probability.
    double lab_dropout = 0.5;
    // Completes the last step of every training example with one draw of the
    // missing variables from the imputation model fitted on the training split.
    bool impute_missing = false;

    void validate() const;
};

std::string_view to_string(Optimizer o);
Optimizer optimizer_from_string(std::string_view s);

struct LabeledSequence {
    std::string patient_id;
    SequenceInput input;
    int label = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
    double validation_auc = 0.0;

    friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;  // 0 = the initial parameters
    double best_validation_auc = 0.0;
    std::vector<std::string> train_ids;
    std::vector<std::string> validation_ids;
    std::vector<std::string> test_ids;

    friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

struct TrainedModel {
    ModelParams params;
    TrainReport report;
    std::optional<ImputationModel> imputation;  // fitted on the training split by train()
};

struct CohortSplit {
    std::vector<std::size_t> train, validation, test;  // indices into the cohort
};

// Stratified by label and deterministic in `seed`.
CohortSplit split_cohort(const Cohort& cohort, const std::array<double, 3>& fractions, std::uint64_t seed);

// Network input for a labeled record at its label time.
LabeledSequence labeled_sequence(const PatientRecord& record, const Vocabulary& vocab, std::size_t max_timesteps);

// Mini-batch Adam (or plain gradient descent) on binary cross-entropy, keeping the parameters
// with the best validation AUC (ties: lower validation loss). Throws PreconditionError on unlabeled records or
// a single-class cohort.
TrainedModel train(const Cohort& cohort, const TrainConfig& config);

// Lower-level entry point on prepared sequences.
TrainedModel train_sequences(const std::vector<LabeledSequence>& train_set,
                             const std::vector<LabeledSequence>& validation_set, const ModelShape& shape,
                             const TrainConfig& config);

// Training example `index` as presented in `epoch` (epochs count from 1).
using ExampleSource = std::function<LabeledSequence(std::size_t index, std::size_t epoch)>;

// As train_sequences, with examples regenerated on demand.
TrainedModel train_examples(std::size_t n_train, const ExampleSource& source,
                            const std::vector<LabeledSequence>& validation_set, const ModelShape& shape,
                            const TrainConfig& config);

// Applies the lab_dropout / impute_missing augmentation to one record.
// Deterministic in (config.seed, index, epoch).
LabeledSequence augmented_example(const PatientRecord& record, const Vocabulary& vocab,
                                  const ImputationModel* imputation, const TrainConfig& config, std::size_t index,
                                  std::size_t epoch);

// Mean loss over a batch and the matching averaged gradient.
double batch_loss_and_gradient(const ModelParams& params, const std::vector<const LabeledSequence*>& batch,
                               ModelParams& grads);

// Central finite differences against the analytic gradient on `coordinates`
// randomly chosen parameters. Returns the largest relative error
// |a - n| / max(|a|, |n|, 1e-6). epsilon must lie in [1e-6, 1e-3].
double gradient_check(const ModelParams& params, const SequenceInput& input, int label, double epsilon,
                      std::size_t coordinates = 64, std::uint64_t seed = 0);

}  // namespace sepsislab
