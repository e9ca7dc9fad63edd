#include "sepsislab/imputation.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "sepsislab/errors.hpp"
#include "sepsislab/features.hpp"
#include "sepsislab/rng.hpp"

namespace sepsislab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Index idx(std::size_t n) { return static_cast<Index>(n); }

VectorXd psd_solve_vector(const MatrixXd& l, const VectorXd& b) {
    const Index n = l.rows();
    VectorXd y(n);
    for (Index i = 0; i < n; ++i) {
        if (l(i, i) == 0.0) {
            y(i) = 0.0;
            continue;
        }
        double s = b(i);
        for (Index k = 0; k < i; ++k) s -= l(i, k) * y(k);
        y(i) = s / l(i, i);
    }
    VectorXd x(n);
    for (Index i = n; i-- > 0;) {
        if (l(i, i) == 0.0) {
            x(i) = 0.0;
            continue;
        }
        double s = y(i);
        for (Index k = i + 1; k < n; ++k) s -= l(k, i) * x(k);
        x(i) = s / l(i, i);
    }
    return x;
}

MatrixXd submatrix(const MatrixXd& m, std::span<const VariableId> rows, std::span<const VariableId> cols) {
    MatrixXd out(idx(rows.size()), idx(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) out(idx(i), idx(j)) = m(rows[i], cols[j]);
    return out;
}

VectorXd subvector(const VectorXd& v, std::span<const VariableId> ids) {
    VectorXd out(idx(ids.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) out(idx(i)) = v(ids[i]);
    return out;
}

}  // namespace

double min_eigenvalue(const MatrixXd& m) {
    if (m.size() == 0) return std::numeric_limits<double>::infinity();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

MatrixXd psd_cholesky(const MatrixXd& a) {
    const Index n = a.rows();
    MatrixXd l = MatrixXd::Zero(n, n);
    double scale = 1.0;
    for (Index i = 0; i < n; ++i) scale = std::max(scale, std::abs(a(i, i)));
    const double tol = 1e-13 * scale;
    for (Index j = 0; j < n; ++j) {
        double d = a(j, j);
        for (Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (d <= tol) continue;
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (Index i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

MatrixXd psd_solve(const MatrixXd& l, const MatrixXd& b) {
    MatrixXd x(b.rows(), b.cols());
    for (Index j = 0; j < b.cols(); ++j) x.col(j) = psd_solve_vector(l, VectorXd(b.col(j)));
    return x;
}

ImputationModel ImputationModel::from_moments(VectorXd mean, MatrixXd covariance, std::string vocabulary_hash) {
    if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
        throw ConfigError("covariance must be V x V for a mean of length V");
    if (!mean.allFinite() || !covariance.allFinite()) throw ConfigError("imputation moments must be finite");
    if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-9)
        throw ConfigError("imputation covariance must be symmetric");
    if (mean.size() > 0 && min_eigenvalue(covariance) < -1e-9)
        throw ConfigError("imputation covariance must be positive semi-definite");
    ImputationModel m;
    m.mean = std::move(mean);
    m.covariance = std::move(covariance);
    m.raw_covariance = m.covariance;
    m.vocabulary_hash = std::move(vocabulary_hash);
    return m;
}

ImputationModel fit_imputation(const Cohort& cohort) {
    std::vector<std::size_t> all(cohort.patients.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return fit_imputation(cohort, all);
}

ImputationModel fit_imputation(const Cohort& cohort, std::span<const std::size_t> indices) {
    if (indices.empty()) throw PreconditionError("cannot fit an imputation model on an empty cohort");
    const std::size_t V = cohort.vocabulary.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();

    // One row per (patient, step time) snapshot, NaN where unobserved.
    std::vector<std::vector<double>> rows;
    for (auto i : indices) {
        const auto& rec = cohort.patients.at(i);
        double t_end = rec.label ? rec.label->time : (rec.observations.empty() ? 0.0 : rec.observations.back().time);
        const auto seq = build_sequence(rec, t_end, cohort.vocabulary, std::numeric_limits<std::size_t>::max());
        for (const auto& step : seq.steps) {
            if (step.readings.empty()) continue;
            std::vector<double> row(V, nan);
            for (const auto& r : step.readings) row[static_cast<std::size_t>(r.variable)] = r.value;
            rows.push_back(std::move(row));
        }
    }

    ImputationModel m;
    m.mean = VectorXd::Zero(idx(V));
    m.raw_covariance = MatrixXd::Zero(idx(V), idx(V));
    m.vocabulary_hash = cohort.vocabulary.hash();

    std::vector<std::size_t> count(V, 0);
    for (std::size_t v = 0; v < V; ++v) {
        double s = 0.0;
        for (const auto& r : rows)
            if (!std::isnan(r[v])) {
                s += r[v];
                ++count[v];
            }
        if (count[v] == 0) {
            m.never_observed.push_back(static_cast<VariableId>(v));
            std::clog << "warning: variable " << cohort.vocabulary[static_cast<VariableId>(v)].name
                      << " never observed; using a standard-normal marginal\n";
            continue;
        }
        m.mean(idx(v)) = s / static_cast<double>(count[v]);
    }

    for (std::size_t u = 0; u < V; ++u) {
        if (count[u] == 0) {
            m.raw_covariance(idx(u), idx(u)) = 1.0;
            continue;
        }
        for (std::size_t v = u; v < V; ++v) {
            if (count[v] == 0) continue;
            // Pairwise-complete: means and products over rows where both are present.
            double su = 0.0, sv = 0.0;
            std::size_t n = 0;
            for (const auto& r : rows)
                if (!std::isnan(r[u]) && !std::isnan(r[v])) {
                    su += r[u];
                    sv += r[v];
                    ++n;
                }
            double c = 0.0;
            if (n >= 2) {
                const double mu = su / static_cast<double>(n), mv = sv / static_cast<double>(n);
                double acc = 0.0;
                for (const auto& r : rows)
                    if (!std::isnan(r[u]) && !std::isnan(r[v])) acc += (r[u] - mu) * (r[v] - mv);
                c = acc / static_cast<double>(n - 1);
            }
            m.raw_covariance(idx(u), idx(v)) = c;
            m.raw_covariance(idx(v), idx(u)) = c;
        }
    }

    const double lo = min_eigenvalue(m.raw_covariance);
    double ridge = lo >= kMinEigenvalue ? 0.0 : kMinEigenvalue - lo;
    const MatrixXd eye = MatrixXd::Identity(idx(V), idx(V));
    while (ridge > 0.0 && min_eigenvalue(m.raw_covariance + ridge * eye) < kMinEigenvalue) ridge = ridge * 2.0 + 1e-12;
    m.ridge = ridge;
    m.covariance = m.raw_covariance + ridge * eye;
    return m;
}

GaussianConditional condition(const ImputationModel& model, std::span<const VariableId> given,
                              const VectorXd& given_values, std::span<const VariableId> free) {
    if (given_values.size() != idx(given.size())) throw PreconditionError("one value per conditioning variable");
    GaussianConditional out;
    out.free.assign(free.begin(), free.end());
    const VectorXd mu_f = subvector(model.mean, free);
    const MatrixXd s_ff = submatrix(model.covariance, free, free);
    if (given.empty() || free.empty()) {
        out.mean = mu_f;
        out.covariance = s_ff;
    } else {
        const MatrixXd s_gg = submatrix(model.covariance, given, given);
        const MatrixXd s_fg = submatrix(model.covariance, free, given);
        const MatrixXd l = psd_cholesky(s_gg);
        const VectorXd resid = given_values - subvector(model.mean, given);
        out.mean = mu_f + s_fg * psd_solve_vector(l, resid);
        out.covariance = s_ff - s_fg * psd_solve(l, MatrixXd(s_fg.transpose()));
        out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
    }
    out.factor = psd_cholesky(out.covariance);
    return out;
}

VectorXd standard_normals(std::uint64_t seed, std::uint64_t index, std::size_t dim) {
    SplitMix64 rng(combine_seed(seed, index));
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd z(idx(dim));
    for (Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    return z;
}

MatrixXd sample_missing(const ImputationModel& model, const Snapshot& snapshot, std::size_t n, std::uint64_t seed,
                        const Vocabulary& vocab) {
    if (n < 1) throw PreconditionError("sample count must be >= 1");
    if (snapshot.size() != model.size() || vocab.size() != model.size())
        throw ConfigError("snapshot, vocabulary and imputation model disagree on the variable count");
    const auto observed = snapshot.present();
    const auto missing = snapshot.missing();
    VectorXd given(idx(observed.size()));
    for (std::size_t i = 0; i < observed.size(); ++i)
        given(idx(i)) = vocab[observed[i]].standardize(*snapshot.value[static_cast<std::size_t>(observed[i])]);
    const auto cond = condition(model, observed, given, missing);

    MatrixXd out(idx(snapshot.size()), idx(n));
    for (std::size_t d = 0; d < n; ++d) {
        for (auto v : observed) out(v, idx(d)) = *snapshot.value[static_cast<std::size_t>(v)];
        if (missing.empty()) continue;
        const VectorXd x = cond.mean + cond.factor * standard_normals(seed, d, missing.size());
        for (std::size_t i = 0; i < missing.size(); ++i) out(missing[i], idx(d)) = vocab[missing[i]].destandardize(x(idx(i)));
    }
    return out;
}

void save_imputation(const ImputationModel& model, const std::filesystem::path& path) {
    nlohmann::json j;
    j["format"] = "sepsislab.imputation";
    j["version"] = 1;
    j["vocabulary_hash"] = model.vocabulary_hash;
    j["mean"] = std::vector<double>(model.mean.data(), model.mean.data() + model.mean.size());
    auto rows_of = [](const MatrixXd& m) {
        std::vector<std::vector<double>> rows;
        for (Index i = 0; i < m.rows(); ++i) {
            std::vector<double> r(static_cast<std::size_t>(m.cols()));
            for (Index k = 0; k < m.cols(); ++k) r[static_cast<std::size_t>(k)] = m(i, k);
            rows.push_back(std::move(r));
        }
        return rows;
    };
    j["covariance"] = rows_of(model.covariance);
    j["raw_covariance"] = rows_of(model.raw_covariance);
    j["ridge"] = model.ridge;
    j["never_observed"] = model.never_observed;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << j.dump() << "\n";
}

ImputationModel load_imputation(const std::filesystem::path& path, const Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open imputation model " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid imputation model file: " + std::string(e.what()));
    }
    if (j.value("format", "") != "sepsislab.imputation") throw ConfigError(path.string() + " is not an imputation model");
    const auto hash = j.at("vocabulary_hash").get<std::string>();
    if (hash != vocab.hash())
        throw ConfigError("imputation model was fitted on a different vocabulary (" + hash + " vs " + vocab.hash() + ")");
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto cov = j.at("covariance").get<std::vector<std::vector<double>>>();
    const auto raw = j.at("raw_covariance").get<std::vector<std::vector<double>>>();
    const Index V = idx(mean.size());
    if (static_cast<std::size_t>(V) != vocab.size()) throw ConfigError("imputation model width does not match vocabulary");
    ImputationModel m;
    m.mean = Eigen::Map<const VectorXd>(mean.data(), V);
    m.covariance.resize(V, V);
    m.raw_covariance.resize(V, V);
    for (Index i = 0; i < V; ++i)
        for (Index k = 0; k < V; ++k) {
            m.covariance(i, k) = cov.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k));
            m.raw_covariance(i, k) = raw.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k));
        }
    m.ridge = j.at("ridge").get<double>();
    m.never_observed = j.at("never_observed").get<std::vector<VariableId>>();
    m.vocabulary_hash = hash;
    return m;
}

}  // namespace sepsislab
