#include "sepsislab/recommender.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "sepsislab/errors.hpp"
#include "sepsislab/rng.hpp"

namespace sepsislab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr Index kColumnsPerChunk = 4096;
constexpr std::uint64_t kHypothesisStream = fnv1a64("hypothesis");

Index idx(std::size_t n) { return static_cast<Index>(n); }

MatrixXd select(const MatrixXd& m, const std::vector<Index>& rows, const std::vector<Index>& cols) {
    MatrixXd out(idx(rows.size()), idx(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) out(idx(i), idx(j)) = m(rows[i], cols[j]);
    return out;
}

VectorXd select(const VectorXd& v, const std::vector<Index>& rows) {
    VectorXd out(idx(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out(idx(i)) = v(rows[i]);
    return out;
}

// Positions of `variables` inside `missing`; throws when one is not missing.
std::vector<Index> positions_in(const std::vector<VariableId>& missing, std::span<const VariableId> variables,
                                const Vocabulary& vocab) {
    if (variables.empty()) throw PreconditionError("hypothetical variable set must not be empty");
    std::set<VariableId> seen;
    std::vector<Index> pos;
    for (auto v : variables) {
        if (v < 0 || static_cast<std::size_t>(v) >= vocab.size())
            throw PreconditionError("variable id " + std::to_string(v) + " is outside the vocabulary");
        if (!seen.insert(v).second) throw PreconditionError("variable " + vocab[v].name + " listed twice");
        const auto it = std::find(missing.begin(), missing.end(), v);
        if (it == missing.end()) throw PreconditionError("variable " + vocab[v].name + " is already observed");
        pos.push_back(it - missing.begin());
    }
    return pos;
}

// Per-draw inner summaries of one counterfactual run.
struct InnerRun {
    std::vector<UncertainPrediction> per_k;
    MatrixXd hypotheses;  // standardized values, |variables| x K
};

InnerRun run_counterfactual(const MonteCarloEvaluator& mc, std::span<const VariableId> variables, std::size_t k,
                            std::size_t inner_draws, std::uint64_t seed) {
    if (k < 1 || inner_draws < 1) throw PreconditionError("counterfactual sample counts must be >= 1");
    const auto& missing = mc.missing();
    const auto pos_i = positions_in(missing, variables, mc.vocabulary());
    std::vector<Index> pos_r;
    for (std::size_t j = 0; j < missing.size(); ++j)
        if (std::find(pos_i.begin(), pos_i.end(), idx(j)) == pos_i.end()) pos_r.push_back(idx(j));

    const auto& cond = mc.conditional();
    const VectorXd mu_i = select(cond.mean, pos_i);
    const VectorXd mu_r = select(cond.mean, pos_r);
    const MatrixXd s_ii = select(cond.covariance, pos_i, pos_i);
    const MatrixXd s_ri = select(cond.covariance, pos_r, pos_i);
    const MatrixXd s_rr = select(cond.covariance, pos_r, pos_r);
    const MatrixXd l_i = psd_cholesky(s_ii);
    // Regression of the rest on the hypothesized set and the residual factor.
    const MatrixXd b = psd_solve(l_i, MatrixXd(s_ri.transpose())).transpose();
    MatrixXd s_rest = s_rr - b * s_ri.transpose();
    s_rest = 0.5 * (s_rest + s_rest.transpose());
    const MatrixXd l_r = psd_cholesky(s_rest);

    const std::size_t n_inner = pos_r.empty() ? 1 : inner_draws;
    MatrixXd noise_r(idx(pos_r.size()), idx(n_inner));
    for (std::size_t m = 0; m < n_inner && !pos_r.empty(); ++m)
        noise_r.col(idx(m)) = l_r * standard_normals(seed, m, pos_r.size());

    InnerRun out;
    out.hypotheses.resize(idx(pos_i.size()), idx(k));
    const std::uint64_t outer_seed = combine_seed(seed, kHypothesisStream);
    for (std::size_t d = 0; d < k; ++d)
        out.hypotheses.col(idx(d)) = mu_i + l_i * standard_normals(outer_seed, d, pos_i.size());

    out.per_k.reserve(k);
    const std::size_t k_per_chunk = std::max<std::size_t>(1, static_cast<std::size_t>(kColumnsPerChunk) / n_inner);
    for (std::size_t k0 = 0; k0 < k; k0 += k_per_chunk) {
        const std::size_t kn = std::min(k_per_chunk, k - k0);
        MatrixXd completions(idx(missing.size()), idx(kn * n_inner));
        for (std::size_t dk = 0; dk < kn; ++dk) {
            const VectorXd x_i = out.hypotheses.col(idx(k0 + dk));
            const VectorXd mean_r = mu_r + b * (x_i - mu_i);
            for (std::size_t m = 0; m < n_inner; ++m) {
                const Index col = idx(dk * n_inner + m);
                for (std::size_t j = 0; j < pos_i.size(); ++j) completions(pos_i[j], col) = x_i(idx(j));
                for (std::size_t j = 0; j < pos_r.size(); ++j)
                    completions(pos_r[j], col) = mean_r(idx(j)) + noise_r(idx(j), idx(m));
            }
        }
        const VectorXd p = mc.evaluate(completions);
        for (std::size_t dk = 0; dk < kn; ++dk)
            out.per_k.push_back(summarize(
                std::span<const double>(p.data() + static_cast<std::ptrdiff_t>(dk * n_inner), n_inner), inner_draws,
                seed));
    }
    return out;
}

}  // namespace

std::vector<CounterfactualEstimate> Recommendation::top(std::size_t k) const {
    return {ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(std::min(k, ranked.size()))};
}

CounterfactualEstimate estimate_reduction(const MonteCarloEvaluator& mc, std::span<const VariableId> variables,
                                          double u_before, std::size_t k, std::size_t inner_draws, std::uint64_t seed,
                                          bool keep_samples) {
    auto run = run_counterfactual(mc, variables, k, inner_draws, seed);
    CounterfactualEstimate est;
    est.variables.assign(variables.begin(), variables.end());
    est.u_before = u_before;
    est.k = k;
    double sum_u = 0.0, sum_p = 0.0, sum_std = 0.0, sum_lo = 0.0, sum_hi = 0.0;
    for (const auto& r : run.per_k) {
        sum_u += r.entropy;
        sum_p += r.p_mean;
        sum_std += r.p_std;
        sum_lo += r.band_low;
        sum_hi += r.band_high;
    }
    const double n = static_cast<double>(k);
    est.u_after = sum_u / n;
    est.p_mean = sum_p / n;
    est.p_std = sum_std / n;
    est.band_low = sum_lo / n;
    est.band_high = sum_hi / n;
    if (k > 1) {
        double ss = 0.0;
        for (const auto& r : run.per_k) ss += (r.entropy - est.u_after) * (r.entropy - est.u_after);
        est.u_after_se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    est.reduction = est.u_before - est.u_after;
    if (keep_samples) est.sampled_values = std::move(run.hypotheses);
    return est;
}

CounterfactualEstimate estimate_reduction(const ModelParams& params, const ImputationModel& imputation,
                                          const PatientRecord& record, double t,
                                          std::span<const VariableId> variables, const PolicyConfig& config,
                                          const Vocabulary& vocab, bool keep_samples) {
    config.validate();
    MonteCarloEvaluator mc(params, imputation, record, t, vocab, config.max_timesteps);
    positions_in(mc.missing(), variables, vocab);
    const auto seed = request_seed(config.seed, record.patient_id, t);
    const auto before = mc.predict(config.mcs_samples, seed);
    return estimate_reduction(mc, variables, before.entropy, config.counterfactual_samples, config.mcs_samples, seed,
                              keep_samples);
}

Recommendation recommend(const MonteCarloEvaluator& mc, const PolicyConfig& config, std::uint64_t seed,
                         const std::optional<std::vector<VariableId>>& candidates) {
    config.validate();
    Recommendation rec;
    rec.seed = seed;
    rec.u_before = mc.predict(config.mcs_samples, seed).entropy;
    for (auto v : mc.missing()) {
        if (candidates && std::find(candidates->begin(), candidates->end(), v) == candidates->end()) continue;
        const VariableId one[] = {v};
        rec.ranked.push_back(
            estimate_reduction(mc, one, rec.u_before, config.counterfactual_samples, config.mcs_samples, seed));
    }
    std::stable_sort(rec.ranked.begin(), rec.ranked.end(),
                     [](const CounterfactualEstimate& a, const CounterfactualEstimate& b) {
                         if (a.reduction != b.reduction) return a.reduction > b.reduction;
                         return a.variables.front() < b.variables.front();
                     });
    return rec;
}

Recommendation recommend(const ModelParams& params, const ImputationModel& imputation, const PatientRecord& record,
                         double t, const PolicyConfig& config, const Vocabulary& vocab,
                         const std::optional<std::vector<VariableId>>& candidates) {
    config.validate();
    MonteCarloEvaluator mc(params, imputation, record, t, vocab, config.max_timesteps);
    return recommend(mc, config, request_seed(config.seed, record.patient_id, t), candidates);
}

RiskPoint to_risk_point(double time, const UncertainPrediction& pred) {
    return RiskPoint{time, pred.p_mean, pred.p_std, pred.band_low, pred.band_high, pred.entropy};
}

std::vector<double> history_times(double now) {
    if (!(now >= 0.0)) throw PreconditionError("now must be >= 0");
    std::vector<double> out;
    for (double h = 0.0; h < now; h += 1.0) out.push_back(h);
    out.push_back(now);
    return out;
}

RiskTrajectory project_trajectory(const ModelParams& params, const ImputationModel& imputation,
                                  const PatientRecord& record, double now, const PolicyConfig& config,
                                  const Vocabulary& vocab, std::span<const VariableId> hypothetical) {
    config.validate();
    RiskTrajectory traj;
    traj.now = now;
    traj.seed = config.seed;
    for (double t : history_times(now))
        traj.history.push_back(to_risk_point(t, predict_uncertain(params, imputation, record, t, config, vocab)));
    std::vector<double> future;
    for (double d = 1.0; d <= config.horizon_hours + 1e-9; d += 1.0) future.push_back(now + d);
    for (double t : future)
        traj.projection.push_back(to_risk_point(t, predict_uncertain(params, imputation, record, t, config, vocab)));
    if (hypothetical.empty()) return traj;

    traj.hypothetical.assign(hypothetical.begin(), hypothetical.end());
    MonteCarloEvaluator mc(params, imputation, record, now, vocab, config.max_timesteps);
    const auto seed = request_seed(config.seed, record.patient_id, now);
    const double u_before = traj.history.back().entropy;
    const auto est =
        estimate_reduction(mc, hypothetical, u_before, config.counterfactual_samples, config.mcs_samples, seed, true);
    std::vector<RiskPoint> cf;
    cf.push_back(RiskPoint{now, est.p_mean, est.p_std, est.band_low, est.band_high, est.u_after});

    // Later points: each hypothetical draw becomes an observation at `now` and ages like real data.
    std::vector<RiskPoint> sums(future.size(), RiskPoint{0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    for (Index d = 0; d < est.sampled_values.cols(); ++d) {
        PatientRecord hyp = record;
        for (std::size_t j = 0; j < hypothetical.size(); ++j)
            hyp.add_observation({hypothetical[j], vocab[hypothetical[j]].destandardize(est.sampled_values(idx(j), d)), now});
        for (std::size_t f = 0; f < future.size(); ++f) {
            const auto pred = predict_uncertain(params, imputation, hyp, future[f], config, vocab);
            sums[f].p_mean += pred.p_mean;
            sums[f].p_std += pred.p_std;
            sums[f].band_low += pred.band_low;
            sums[f].band_high += pred.band_high;
            sums[f].entropy += pred.entropy;
        }
    }
    const double n = static_cast<double>(est.sampled_values.cols());
    for (std::size_t f = 0; f < future.size(); ++f)
        cf.push_back(RiskPoint{future[f], sums[f].p_mean / n, sums[f].p_std / n, sums[f].band_low / n,
                               sums[f].band_high / n, sums[f].entropy / n});
    traj.counterfactual = std::move(cf);
    return traj;
}

}  // namespace sepsislab
