#include "sepsislab/uncertainty.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include "sepsislab/errors.hpp"
#include "sepsislab/rng.hpp"

namespace sepsislab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr Index kMaxColumnsPerBatch = 4096;

}  // namespace

void PolicyConfig::validate() const {
    if (!(th_s > 0.0 && th_s < 1.0)) throw ConfigError("th_s must lie in (0, 1)");
    if (!(th_e > 0.0 && th_e < std::numbers::ln2)) throw ConfigError("th_e must lie in (0, ln 2)");
    if (!(horizon_hours > 0.0) || !std::isfinite(horizon_hours)) throw ConfigError("horizon_hours must be positive");
    if (mcs_samples < 1) throw ConfigError("mcs_samples must be >= 1");
    if (counterfactual_samples < 1) throw ConfigError("counterfactual_samples must be >= 1");
    if (max_timesteps < 1) throw ConfigError("max_timesteps must be >= 1");
}

double binary_entropy(double p) {
    if (std::isnan(p)) throw PreconditionError("entropy of NaN");
    p = std::clamp(p, 0.0, 1.0);
    double e = 0.0;
    if (p > 0.0) e -= p * std::log(p);
    if (p < 1.0) e -= (1.0 - p) * std::log1p(-p);
    return e;
}

PolicyDecision decide(const UncertainPrediction& pred, const PolicyConfig& config) {
    return PolicyDecision{pred.p_mean > config.th_s, pred.entropy > config.th_e};
}

UncertainPrediction summarize(std::span<const double> probabilities, std::size_t n_samples, std::uint64_t seed) {
    if (probabilities.empty()) throw PreconditionError("cannot summarize zero draws");
    const double n = static_cast<double>(probabilities.size());
    double sum = 0.0;
    for (double p : probabilities) sum += p;
    const double mean = sum / n;
    double ss = 0.0;
    for (double p : probabilities) ss += (p - mean) * (p - mean);
    UncertainPrediction out;
    out.p_mean = mean;
    out.p_std = std::sqrt(ss / n);
    out.entropy = binary_entropy(mean);
    out.band_low = std::clamp(mean - 1.96 * out.p_std, 0.0, 1.0);
    out.band_high = std::clamp(mean + 1.96 * out.p_std, 0.0, 1.0);
    out.n_samples = n_samples;
    out.seed = seed;
    return out;
}

std::uint64_t request_seed(std::uint64_t base_seed, std::string_view patient_id, double t) {
    return combine_seed(combine_seed(base_seed, fnv1a64(patient_id)), std::bit_cast<std::uint64_t>(t + 0.0));
}

void check_compatible(const ModelParams& params, const ImputationModel& imputation, const Vocabulary& vocab) {
    if (params.shape.num_variables != vocab.size() || imputation.size() != vocab.size())
        throw ConfigError("model, imputation model and vocabulary disagree on the number of variables");
    const auto h = vocab.hash();
    if (!params.vocabulary_hash.empty() && params.vocabulary_hash != h)
        throw ConfigError("model vocabulary " + params.vocabulary_hash + " does not match record vocabulary " + h);
    if (!imputation.vocabulary_hash.empty() && imputation.vocabulary_hash != h)
        throw ConfigError("imputation vocabulary " + imputation.vocabulary_hash + " does not match record vocabulary " +
                          h);
}

MonteCarloEvaluator::MonteCarloEvaluator(const ModelParams& params, const ImputationModel& imputation,
                                         const PatientRecord& record, double t, const Vocabulary& vocab,
                                         std::size_t max_timesteps)
    : params_(params), imputation_(imputation), vocab_(vocab), t_(t) {
    check_compatible(params, imputation, vocab);
    snapshot_ = snapshot_at(record, t, vocab);
    missing_ = snapshot_.missing();
    observed_ = snapshot_.present();
    auto seq = build_sequence(record, t, vocab, max_timesteps);
    if (seq.statics.size() != static_cast<Index>(params.shape.static_dim))
        throw ConfigError("record static features do not match the model's static dimension");
    fixed_ = seq.steps.back().readings;
    seq.steps.pop_back();
    prefix_ = run_prefix(params, seq.statics, seq.steps);

    VectorXd given(static_cast<Index>(observed_.size()));
    for (std::size_t i = 0; i < observed_.size(); ++i)
        given(static_cast<Index>(i)) =
            vocab[observed_[i]].standardize(*snapshot_.value[static_cast<std::size_t>(observed_[i])]);
    conditional_ = condition(imputation, observed_, given, missing_);
}

VectorXd MonteCarloEvaluator::evaluate(const MatrixXd& completions) const {
    if (completions.rows() != static_cast<Index>(missing_.size()))
        throw PreconditionError("completions need one row per missing variable");
    const Index n = completions.cols();
    VectorXd out(n);
    for (Index start = 0; start < n; start += kMaxColumnsPerBatch) {
        const Index len = std::min(kMaxColumnsPerBatch, n - start);
        out.segment(start, len) =
            evaluate_final_step(params_, prefix_, fixed_, missing_, completions.middleCols(start, len));
    }
    return out;
}

UncertainPrediction MonteCarloEvaluator::predict(std::size_t draws, std::uint64_t seed) const {
    if (draws < 1) throw PreconditionError("at least one Monte-Carlo draw is required");
    // Nothing to sample: every draw is the same input.
    const std::size_t n_eval = missing_.empty() ? 1 : draws;
    MatrixXd completions(static_cast<Index>(missing_.size()), static_cast<Index>(n_eval));
    for (std::size_t m = 0; m < n_eval && !missing_.empty(); ++m)
        completions.col(static_cast<Index>(m)) =
            conditional_.mean + conditional_.factor * standard_normals(seed, m, missing_.size());
    const VectorXd p = evaluate(completions);
    return summarize(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), draws, seed);
}

UncertainPrediction predict_uncertain(const ModelParams& params, const ImputationModel& imputation,
                                      const PatientRecord& record, double t, const PolicyConfig& config,
                                      const Vocabulary& vocab) {
    config.validate();
    MonteCarloEvaluator mc(params, imputation, record, t, vocab, config.max_timesteps);
    return mc.predict(config.mcs_samples, request_seed(config.seed, record.patient_id, t));
}

}  // namespace sepsislab
