#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "fixtures.hpp"
#include "sepsislab/errors.hpp"
#include "sepsislab/features.hpp"
#include "sepsislab/uncertainty.hpp"

using namespace sepsislab;
using namespace sepsislab::test;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

long double entropy_oracle(long double p) { return -p * std::log(p) - (1.0L - p) * std::log(1.0L - p); }

UncertainPrediction with(double p_mean, double entropy) {
    UncertainPrediction u;
    u.p_mean = p_mean;
    u.entropy = entropy;
    return u;
}

// Records where every variable is observed at 0.5, 1.0, ... and the label sits at 3.0.
Cohort dense_cohort(std::size_t n_vars, std::size_t n_patients, const MatrixXd& mixing, std::uint64_t seed) {
    Cohort c;
    c.vocabulary = toy_vocabulary(n_vars);
    c.n_flags = 4;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t i = 0; i < n_patients; ++i) {
        std::vector<Observation> obs;
        for (int k = 1; k <= 6; ++k) {
            VectorXd e(static_cast<Index>(n_vars));
            for (Index j = 0; j < e.size(); ++j) e(j) = z(rng);
            const VectorXd x = mixing * e;
            for (std::size_t v = 0; v < n_vars; ++v)
                obs.push_back({static_cast<VariableId>(v), x(static_cast<Index>(v)), 0.5 * k});
        }
        c.patients.push_back(make_record("D" + std::to_string(1000 + i), std::move(obs), 3.0));
    }
    return c;
}

Snapshot snapshot_with(const Vocabulary& vocab, std::vector<std::pair<VariableId, double>> values, double t = 1.0) {
    std::vector<Observation> obs;
    for (auto [v, x] : values) obs.push_back({v, x, t});
    return snapshot_at(make_record("S", std::move(obs)), t, vocab);
}

}  // namespace

TEST_CASE("entropy matches a long-double oracle") {
    CHECK(binary_entropy(0.5) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
    CHECK(std::abs(binary_entropy(0.9) - 0.3250829734) < 1e-4);
    CHECK(std::abs(binary_entropy(0.9) - static_cast<double>(entropy_oracle(0.9L))) < 1e-12);
    CHECK(binary_entropy(0.0) == 0.0);
    CHECK(binary_entropy(1.0) == 0.0);
    CHECK_THROWS_AS(binary_entropy(std::nan("")), PreconditionError);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(1e-9, 1.0 - 1e-9);
    for (int i = 0; i < 1000; ++i) {
        const double p = u(rng);
        const double e = binary_entropy(p);
        CHECK(std::abs(e - binary_entropy(1.0 - p)) < 1e-12);
        CHECK(std::abs(e - static_cast<double>(entropy_oracle(p))) < 1e-12);
        CHECK(e >= 0.0);
        CHECK(e < binary_entropy(0.5));
    }
}

TEST_CASE("entropy near the default request threshold") {
    // The formula gives 0.25364 at p = 0.93; either way it exceeds th_e = 0.25.
    const double e = binary_entropy(0.93);
    CHECK(std::abs(e - static_cast<double>(entropy_oracle(0.93L))) < 1e-12);
    CHECK(std::abs(e - 0.25364) < 1e-5);
    const PolicyConfig cfg;
    CHECK(decide(with(0.93, e), cfg).request_labs);
    CHECK(decide(with(0.93, 0.2518), cfg).request_labs);
    CHECK_FALSE(decide(with(0.93, 0.25), cfg).request_labs);
}

TEST_CASE("policy decisions use strict comparisons") {
    const PolicyConfig cfg;
    CHECK(decide(with(0.6, 0.1), cfg) == PolicyDecision{true, false});
    CHECK_FALSE(decide(with(0.5, binary_entropy(0.5)), cfg).flag_sepsis);
    CHECK(decide(with(0.5, binary_entropy(0.5)), cfg).request_labs);
    CHECK(decide(with(0.5000001, 0.3), cfg) == PolicyDecision{true, true});
    PolicyConfig strict = cfg;
    strict.th_s = 0.8;
    strict.th_e = 0.05;
    CHECK(decide(with(0.6, 0.1), strict) == PolicyDecision{false, true});
}

TEST_CASE("policy config validation") {
    PolicyConfig c;
    CHECK_NOTHROW(c.validate());
    for (double bad : {0.0, 1.0, -0.1}) {
        auto x = c;
        x.th_s = bad;
        CHECK_THROWS_AS(x.validate(), ConfigError);
    }
    for (double bad : {0.0, std::numbers::ln2, 1.0}) {
        auto x = c;
        x.th_e = bad;
        CHECK_THROWS_AS(x.validate(), ConfigError);
    }
    auto x = c;
    x.mcs_samples = 0;
    CHECK_THROWS_AS(x.validate(), ConfigError);
    x = c;
    x.counterfactual_samples = 0;
    CHECK_THROWS_AS(x.validate(), ConfigError);
}

TEST_CASE("summaries keep the band ordered and clipped") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> p(1 + trial % 17);
        const double centre = u(rng);
        for (auto& x : p) x = std::clamp(centre + 0.4 * (u(rng) - 0.5), 0.0, 1.0);
        const auto s = summarize(p, p.size(), 9);
        CHECK(0.0 <= s.band_low);
        CHECK(s.band_low <= s.p_mean);
        CHECK(s.p_mean <= s.band_high);
        CHECK(s.band_high <= 1.0);
        CHECK(s.p_std >= 0.0);
        CHECK(s.entropy >= 0.0);
        CHECK(s.entropy <= std::numbers::ln2 + 1e-15);
    }
    const std::vector<double> two = {0.2, 0.4};
    const auto s = summarize(two, 2, 0);
    CHECK(s.p_mean == doctest::Approx(0.3));
    CHECK(s.p_std == doctest::Approx(0.1));  // population standard deviation
    CHECK(s.band_low == doctest::Approx(0.3 - 0.196));
    CHECK_THROWS_AS(summarize(std::vector<double>{}, 0, 0), PreconditionError);
}

TEST_CASE("request seeds depend on base seed, patient and time only") {
    CHECK(request_seed(1, "P1", 2.0) == request_seed(1, "P1", 2.0));
    CHECK(request_seed(1, "P1", 2.0) != request_seed(2, "P1", 2.0));
    CHECK(request_seed(1, "P1", 2.0) != request_seed(1, "P2", 2.0));
    CHECK(request_seed(1, "P1", 2.0) != request_seed(1, "P1", 2.5));
    CHECK(request_seed(1, "P1", 0.0) == request_seed(1, "P1", -0.0));
}

TEST_CASE("constant fully observed cohort gives the constant mean and a ridge covariance") {
    Cohort c;
    c.vocabulary = toy_vocabulary(3);
    c.n_flags = 4;
    for (int i = 0; i < 5; ++i) {
        std::vector<Observation> obs;
        for (double t : {0.5, 1.0, 1.5})
            for (int v = 0; v < 3; ++v) obs.push_back({v, 1.0 + v, t});
        c.patients.push_back(make_record("C" + std::to_string(i), obs, 2.0));
    }
    const auto m = fit_imputation(c);
    for (Index v = 0; v < 3; ++v) CHECK(m.mean(v) == doctest::Approx(1.0 + static_cast<double>(v)).epsilon(1e-14));
    CHECK(m.raw_covariance.cwiseAbs().maxCoeff() < 1e-24);
    CHECK(m.ridge > 0.0);
    CHECK((m.covariance - m.ridge * MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-20);
    CHECK(min_eigenvalue(m.covariance) >= kMinEigenvalue * (1.0 - 1e-9));
    CHECK(m.vocabulary_hash == c.vocabulary.hash());
}

TEST_CASE("duplicated variables are perfectly correlated before the ridge") {
    MatrixXd mix(2, 2);
    mix << 1.0, 0.0, 1.0, 0.0;
    const auto c = dense_cohort(2, 40, mix, 3);
    const auto m = fit_imputation(c);
    const auto& r = m.raw_covariance;
    CHECK(r(0, 1) / std::sqrt(r(0, 0) * r(1, 1)) > 0.99);
    CHECK(min_eigenvalue(m.covariance) >= kMinEigenvalue * (1.0 - 1e-9));
}

TEST_CASE("imputation fit matches a dense covariance oracle on fully observed data") {
    MatrixXd mix(4, 4);
    mix << 1.0, 0.0, 0.0, 0.0,  //
        0.6, 0.8, 0.0, 0.0,     //
        -0.3, 0.2, 0.9, 0.0,    //
        0.1, -0.5, 0.3, 0.7;
    const auto c = dense_cohort(4, 50, mix, 8);
    const auto m = fit_imputation(c);

    // One row per step snapshot: half-hour grid up to the label time.
    std::vector<VectorXd> rows;
    for (const auto& rec : c.patients)
        for (int k = 1; k <= 6; ++k) {
            const auto snap = snapshot_at(rec, 0.5 * k, c.vocabulary);
            VectorXd x(4);
            for (int v = 0; v < 4; ++v) x(v) = *snap.value[static_cast<std::size_t>(v)];
            rows.push_back(x);
        }
    MatrixXd X(static_cast<Index>(rows.size()), 4);
    for (std::size_t i = 0; i < rows.size(); ++i) X.row(static_cast<Index>(i)) = rows[i].transpose();
    const VectorXd mean = X.colwise().mean().transpose();
    const MatrixXd centred = X.rowwise() - mean.transpose();
    const MatrixXd cov = centred.transpose() * centred / static_cast<double>(X.rows() - 1);

    CHECK((m.mean - mean).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((m.raw_covariance - cov).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(m.ridge == 0.0);
    CHECK(m.never_observed.empty());
}

TEST_CASE("a never observed variable falls back to a standard normal marginal") {
    MatrixXd mix(3, 3);
    mix << 1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0;
    auto c = dense_cohort(3, 10, mix, 1);
    for (auto& p : c.patients)
        std::erase_if(p.observations, [](const Observation& o) { return o.variable == 2; });
    const auto m = fit_imputation(c);
    REQUIRE(m.never_observed == std::vector<VariableId>{2});
    CHECK(m.mean(2) == 0.0);
    CHECK(m.covariance(2, 2) == doctest::Approx(1.0 + m.ridge));
    CHECK(m.covariance(0, 2) == 0.0);
    CHECK(m.covariance(1, 2) == 0.0);
}

TEST_CASE("imputation on a sparse generated cohort is symmetric and positive definite") {
    const auto c = generate_cohort(5, 150);
    const auto m = fit_imputation(c);
    CHECK((m.covariance - m.covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(min_eigenvalue(m.covariance) >= kMinEigenvalue * (1.0 - 1e-9));
    CHECK(m.mean.allFinite());
    CHECK_THROWS_AS(fit_imputation(c, std::vector<std::size_t>{}), PreconditionError);
}

TEST_CASE("moments are validated on direct construction") {
    MatrixXd asym(2, 2);
    asym << 1.0, 0.5, 0.4, 1.0;
    CHECK_THROWS_AS(ImputationModel::from_moments(VectorXd::Zero(2), asym), ConfigError);
    MatrixXd neg(2, 2);
    neg << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS(ImputationModel::from_moments(VectorXd::Zero(2), neg), ConfigError);
    CHECK_THROWS_AS(ImputationModel::from_moments(VectorXd::Zero(3), MatrixXd::Identity(2, 2)), ConfigError);
}

TEST_CASE("Gaussian conditioning matches closed forms") {
    SUBCASE("two variables") {
        MatrixXd s(2, 2);
        s << 1.0, 0.8, 0.8, 1.0;
        const auto m = ImputationModel::from_moments(VectorXd::Zero(2), s);
        const std::vector<VariableId> given = {0}, free = {1};
        const auto g = condition(m, given, VectorXd::Constant(1, 1.0), free);
        CHECK(g.mean(0) == doctest::Approx(0.8).epsilon(1e-12));
        CHECK(g.covariance(0, 0) == doctest::Approx(0.36).epsilon(1e-12));
    }
    SUBCASE("three variables") {
        MatrixXd s(3, 3);
        s << 1.0, 0.5, 0.3, 0.5, 2.0, 0.2, 0.3, 0.2, 1.5;
        VectorXd mu(3);
        mu << 0.1, -0.2, 0.3;
        const auto m = ImputationModel::from_moments(mu, s);

        // Given x0 only: scalar Schur complement.
        const std::vector<VariableId> g0 = {0}, f12 = {1, 2};
        const auto a = condition(m, g0, VectorXd::Constant(1, 1.2), f12);
        const double d = 1.2 - 0.1;
        CHECK(a.mean(0) == doctest::Approx(-0.2 + 0.5 * d).epsilon(1e-12));
        CHECK(a.mean(1) == doctest::Approx(0.3 + 0.3 * d).epsilon(1e-12));
        CHECK(a.covariance(0, 0) == doctest::Approx(2.0 - 0.25).epsilon(1e-12));
        CHECK(a.covariance(0, 1) == doctest::Approx(0.2 - 0.15).epsilon(1e-12));
        CHECK(a.covariance(1, 1) == doctest::Approx(1.5 - 0.09).epsilon(1e-12));

        // Given x0, x1: explicit 2x2 inverse.
        const std::vector<VariableId> g01 = {0, 1}, f2 = {2};
        VectorXd x(2);
        x << 1.2, -1.0;
        const auto b = condition(m, g01, x, f2);
        const double det = 1.0 * 2.0 - 0.5 * 0.5;
        const double i00 = 2.0 / det, i01 = -0.5 / det, i11 = 1.0 / det;
        const double r0 = 1.2 - 0.1, r1 = -1.0 + 0.2;
        const double w0 = 0.3 * i00 + 0.2 * i01, w1 = 0.3 * i01 + 0.2 * i11;
        CHECK(b.mean(0) == doctest::Approx(0.3 + w0 * r0 + w1 * r1).epsilon(1e-12));
        CHECK(b.covariance(0, 0) == doctest::Approx(1.5 - (w0 * 0.3 + w1 * 0.2)).epsilon(1e-12));
    }
}

TEST_CASE("sample_missing follows the conditional distribution") {
    const auto vocab = toy_vocabulary(3);

    SUBCASE("correlation 0.8, observe x0 = 1") {
        MatrixXd s = MatrixXd::Identity(3, 3);
        s(0, 1) = s(1, 0) = 0.8;
        const auto m = ImputationModel::from_moments(VectorXd::Zero(3), s, vocab.hash());
        const auto snap = snapshot_with(vocab, {{0, 1.0}});
        const std::size_t n = 10000;
        const MatrixXd draws = sample_missing(m, snap, n, 17, vocab);
        CHECK((draws.row(0).array() == 1.0).all());
        const double mean = draws.row(1).mean();
        const double se = std::sqrt(0.36 / static_cast<double>(n));
        CHECK(std::abs(mean - 0.8) < 3.0 * se);
        const double var = (draws.row(1).array() - mean).square().sum() / static_cast<double>(n - 1);
        CHECK(std::abs(var - 0.36) < 0.03);
        // Independent third variable keeps its marginal.
        CHECK(std::abs(draws.row(2).mean()) < 3.0 / std::sqrt(static_cast<double>(n)));
    }
    SUBCASE("identity covariance ignores the observations") {
        VectorXd mu(3);
        mu << 0.5, -1.0, 2.0;
        const auto m = ImputationModel::from_moments(mu, MatrixXd::Identity(3, 3), vocab.hash());
        const MatrixXd a = sample_missing(m, snapshot_with(vocab, {{0, 5.0}}), 4000, 3, vocab);
        const MatrixXd b = sample_missing(m, snapshot_with(vocab, {{0, -5.0}}), 4000, 3, vocab);
        CHECK((a.bottomRows(2) - b.bottomRows(2)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(std::abs(a.row(1).mean() + 1.0) < 3.0 / std::sqrt(4000.0));
        CHECK(std::abs(a.row(2).mean() - 2.0) < 3.0 / std::sqrt(4000.0));
    }
    SUBCASE("three correlated variables, one observed") {
        MatrixXd s(3, 3);
        s << 1.0, 0.5, 0.3, 0.5, 2.0, 0.2, 0.3, 0.2, 1.5;
        VectorXd mu(3);
        mu << 0.1, -0.2, 0.3;
        const auto m = ImputationModel::from_moments(mu, s, vocab.hash());
        const std::size_t n = 20000;
        const MatrixXd d = sample_missing(m, snapshot_with(vocab, {{0, 1.2}}), n, 5, vocab);
        const double e1 = -0.2 + 0.5 * 1.1, e2 = 0.3 + 0.3 * 1.1;
        CHECK(std::abs(d.row(1).mean() - e1) < 3.0 * std::sqrt(1.75 / n));
        CHECK(std::abs(d.row(2).mean() - e2) < 3.0 * std::sqrt(1.41 / n));
        const double c12 = ((d.row(1).array() - d.row(1).mean()) * (d.row(2).array() - d.row(2).mean())).sum() /
                           static_cast<double>(n - 1);
        CHECK(std::abs(c12 - 0.05) < 0.04);
    }
    SUBCASE("fully observed snapshot is returned unchanged") {
        const auto m = ImputationModel::from_moments(VectorXd::Zero(3), MatrixXd::Identity(3, 3), vocab.hash());
        const auto snap = snapshot_with(vocab, {{0, 1.0}, {1, 2.0}, {2, 3.0}});
        const MatrixXd d = sample_missing(m, snap, 7, 1, vocab);
        for (Index j = 0; j < 7; ++j) CHECK(d.col(j) == Eigen::Vector3d(1.0, 2.0, 3.0));
    }
    SUBCASE("empty observed set draws from the unconditional model") {
        VectorXd mu(3);
        mu << 1.0, 2.0, 3.0;
        const auto m = ImputationModel::from_moments(mu, MatrixXd::Identity(3, 3) * 0.25, vocab.hash());
        const MatrixXd d = sample_missing(m, snapshot_with(vocab, {}), 4000, 8, vocab);
        for (Index v = 0; v < 3; ++v) CHECK(std::abs(d.row(v).mean() - mu(v)) < 3.0 * 0.5 / std::sqrt(4000.0));
    }
    SUBCASE("draws depend only on seed and index") {
        const auto m = ImputationModel::from_moments(VectorXd::Zero(3), MatrixXd::Identity(3, 3), vocab.hash());
        const auto snap = snapshot_with(vocab, {{1, 0.3}});
        const MatrixXd a = sample_missing(m, snap, 5, 99, vocab);
        const MatrixXd b = sample_missing(m, snap, 12, 99, vocab);
        CHECK(a == b.leftCols(5));
        CHECK(a != sample_missing(m, snap, 5, 100, vocab));
        CHECK_THROWS_AS(sample_missing(m, snap, 0, 1, vocab), PreconditionError);
    }
}

TEST_CASE("psd_cholesky handles singular matrices") {
    Eigen::Vector3d v(1.0, 2.0, 3.0);
    MatrixXd a = MatrixXd::Zero(4, 4);
    a.topLeftCorner(3, 3) = v * v.transpose();
    a(3, 3) = 2.0;
    const MatrixXd l = psd_cholesky(a);
    CHECK((l * l.transpose() - a).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(l.isLowerTriangular());
    // Right-hand sides in the range of A are solved exactly.
    Eigen::Vector4d y(0.5, -1.0, 2.0, 1.5);
    const MatrixXd x = psd_solve(l, a * y);
    CHECK((a * x - a * y).cwiseAbs().maxCoeff() < 1e-10);
    // Conditioning on a degenerate pair.
    const auto m = ImputationModel::from_moments(VectorXd::Zero(4), a);
    const std::vector<VariableId> given = {0, 1}, free = {2};
    Eigen::Vector2d gv(1.0, 2.0);
    const auto g = condition(m, given, gv, free);
    CHECK(g.mean(0) == doctest::Approx(3.0).epsilon(1e-10));
    CHECK(std::abs(g.covariance(0, 0)) < 1e-10);
}

TEST_CASE("a fully observed snapshot has zero Monte-Carlo spread") {
    const auto& f = generated_fixture();
    const auto& vocab = f.cohort.vocabulary;
    std::vector<Observation> obs;
    for (VariableId v = 0; v < static_cast<VariableId>(vocab.size()); ++v)
        obs.push_back({v, vocab[v].population_mean + 0.3 * vocab[v].population_std, 4.5});
    const auto rec = make_record("FULL", obs);
    PolicyConfig cfg;
    cfg.mcs_samples = 50;
    const auto u = predict_uncertain(f.model.params, f.imputation, rec, 5.0, cfg, vocab);
    CHECK(u.p_std == 0.0);
    CHECK(u.band_low == u.p_mean);
    CHECK(u.band_high == u.p_mean);
    CHECK(u.n_samples == 50);
    CHECK(u.entropy == binary_entropy(u.p_mean));
    // Single evaluation equals the plain forward pass.
    const auto seq = build_sequence(rec, 5.0, vocab);
    CHECK(u.p_mean == doctest::Approx(forward(f.model.params, seq).probability).epsilon(1e-12));
}

TEST_CASE("uncertain predictions are deterministic and seed dependent") {
    const auto& f = generated_fixture();
    const auto& vocab = f.cohort.vocabulary;
    const auto& rec = f.cohort.patients[f.split.test.front()];
    const auto masked = without_labs(rec, vocab);
    const double t = rec.label->time;
    PolicyConfig cfg;
    cfg.seed = 4;
    const auto a = predict_uncertain(f.model.params, f.imputation, masked, t, cfg, vocab);
    const auto b = predict_uncertain(f.model.params, f.imputation, masked, t, cfg, vocab);
    CHECK(a == b);
    CHECK(a.seed == request_seed(4, rec.patient_id, t));
    CHECK(a.p_std > 0.0);
    cfg.seed = 5;
    CHECK(predict_uncertain(f.model.params, f.imputation, masked, t, cfg, vocab).p_mean != a.p_mean);
}

TEST_CASE("model, imputation and record vocabularies must agree") {
    const auto& f = generated_fixture();
    const auto toy = toy_vocabulary(20);
    const auto rec = make_record("V", {{0, 1.0, 0.5}});
    CHECK_THROWS_AS(predict_uncertain(f.model.params, f.imputation, rec, 1.0, PolicyConfig{}, toy), ConfigError);
    const auto small = toy_vocabulary(3);
    CHECK_THROWS_AS(predict_uncertain(f.model.params, f.imputation, rec, 1.0, PolicyConfig{}, small), ConfigError);
}

TEST_CASE("Monte-Carlo estimates converge") {
    const auto& f = generated_fixture();
    const auto& vocab = f.cohort.vocabulary;
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& rec = f.cohort.patients[f.split.test[k]];
        const auto masked = without_labs(rec, vocab);
        MonteCarloEvaluator mc(f.model.params, f.imputation, masked, rec.label->time, vocab);
        const auto small = mc.predict(1000, 21);
        const auto large = mc.predict(10000, 77);
        CHECK(std::abs(large.p_mean - small.p_mean) < 3.0 * large.p_std / std::sqrt(1000.0));
    }
}

TEST_CASE("revealing a true lab does not raise mean entropy") {
    const auto& f = generated_fixture();
    const auto& vocab = f.cohort.vocabulary;
    PolicyConfig cfg;
    cfg.mcs_samples = 50;
    std::mt19937_64 rng(12);
    double before = 0.0, after = 0.0;
    std::size_t cases = 0;
    for (const auto& rec : f.cohort.patients) {
        const double t = rec.label->time;
        const auto truth = snapshot_at(rec, t, vocab);
        std::vector<VariableId> labs;
        for (auto v : truth.present())
            if (vocab[v].kind == VariableKind::Lab) labs.push_back(v);
        if (labs.empty()) continue;
        const VariableId v = labs[std::uniform_int_distribution<std::size_t>(0, labs.size() - 1)(rng)];
        PatientRecord hidden = rec;
        std::erase_if(hidden.observations, [&](const Observation& o) { return o.variable == v; });
        PatientRecord shown = hidden;
        const auto vi = static_cast<std::size_t>(v);
        shown.add_observation({v, *truth.value[vi], t - truth.age[vi]});
        before += predict_uncertain(f.model.params, f.imputation, hidden, t, cfg, vocab).entropy;
        after += predict_uncertain(f.model.params, f.imputation, shown, t, cfg, vocab).entropy;
        ++cases;
    }
    REQUIRE(cases >= 100);
    const double n = static_cast<double>(cases);
    CHECK(after / n <= before / n + 0.01);
}
