#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sepsislab/features.hpp"

namespace sepsislab {

struct ModelShape {
    std::size_t num_variables = 20;
    std::size_t static_dim = 6;
    std::size_t embed_dim = 256;
    std::size_t hidden_dim = 256;
    std::size_t num_layers = 2;

    void validate() const;
    friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

struct LstmLayerParams {
    Eigen::MatrixXd w_input;      // 4H x in, gate rows ordered [input, forget, cell, output]
    Eigen::MatrixXd w_recurrent;  // 4H x H
    Eigen::VectorXd bias;         // 4H
    Eigen::MatrixXd h0_proj;      // H x S
    Eigen::VectorXd h0_bias;
    Eigen::MatrixXd c0_proj;      // H x S
    Eigen::VectorXd c0_bias;
};

struct TensorView {
    std::string name;
    std::span<double> data;
    Eigen::Index rows;
    Eigen::Index cols;
};

struct ConstTensorView {
    std::string name;
    std::span<const double> data;
    Eigen::Index rows;
    Eigen::Index cols;
};

// Static-initialized multi-layer LSTM over per-step variable-attention contexts,
// pooled by collection attention into a sigmoid head.
struct ModelParams {
    ModelShape shape;
    std::string vocabulary_hash;

    // Value embedding: e = value * embed_value.col(v) + recency * embed_recency.col(v) + embed_bias.col(v).
    Eigen::MatrixXd embed_value;    // E x V
    Eigen::MatrixXd embed_recency;  // E x V
    Eigen::MatrixXd embed_bias;     // E x V

    // Additive attention over the readings of one step: score = v . tanh(W e + b).
    Eigen::MatrixXd var_attn_w;  // E x E
    Eigen::VectorXd var_attn_b;
    Eigen::VectorXd var_attn_v;

    std::vector<LstmLayerParams> layers;

    // Additive attention over top-layer outputs.
    Eigen::MatrixXd col_attn_w;  // H x H
    Eigen::VectorXd col_attn_b;
    Eigen::VectorXd col_attn_v;

    Eigen::VectorXd head_w;  // H
    Eigen::VectorXd head_b;  // 1

    // All parameters zero, shapes set.
    static ModelParams zeros(const ModelShape& shape);
    // Xavier-uniform matrices, zero biases, forget-gate bias 1.
    static ModelParams initialize(const ModelShape& shape, std::uint64_t seed);

    std::vector<TensorView> tensors();
    std::vector<ConstTensorView> tensors() const;
    std::size_t parameter_count() const;

    // Throws ConfigError when any tensor disagrees with `shape`.
    void check_shapes() const;
    bool all_finite() const;
};

struct ForwardTrace {
    std::vector<std::vector<VariableId>> attended_variables;  // per step
    std::vector<Eigen::VectorXd> variable_attention;          // per step, sums to 1 (empty for empty steps)
    std::vector<Eigen::VectorXd> hidden;                      // top-layer output per step
    Eigen::VectorXd collection_attention;                     // over steps
    double logit = 0.0;
    double probability = 0.5;
};

ForwardTrace forward(const ModelParams& params, const SequenceInput& input);

// Binary cross-entropy of one example. Adds dLoss/dParams into `grads` (same
// shape as params) scaled by `weight`; returns the unweighted loss.
double loss_and_gradient(const ModelParams& params, const SequenceInput& input, int label, ModelParams& grads,
                         double weight = 1.0);

double bce_loss(double logit, int label);
double sigmoid(double x);

// Network state after every step but the last, so that many candidate
// completions of the final step can be evaluated without replaying history.
struct PrefixState {
    std::vector<Eigen::VectorXd> h;
    std::vector<Eigen::VectorXd> c;
    bool has_outputs = false;  // false when the prefix is empty
    double max_score = 0.0;
    double denom = 0.0;
    Eigen::VectorXd weighted;  // sum_t exp(score_t - max_score) * h_t
};

PrefixState run_prefix(const ModelParams& params, const Eigen::VectorXd& statics, std::span<const Step> steps);

// Probabilities for N completions of a final step. `fixed` readings are shared by
// every column; variable `free_vars[r]` takes standardized value free_values(r, n)
// with recency 1 in column n. Matches forward() on the assembled sequence.
Eigen::VectorXd evaluate_final_step(const ModelParams& params, const PrefixState& prefix,
                                    std::span<const Reading> fixed, std::span<const VariableId> free_vars,
                                    const Eigen::MatrixXd& free_values);

}  // namespace sepsislab
