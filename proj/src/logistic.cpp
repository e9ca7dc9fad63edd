#include "sepsislab/logistic.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "sepsislab/errors.hpp"
#include "sepsislab/model.hpp"

namespace sepsislab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double LogisticModel::predict(const VectorXd& features) const {
    if (features.size() != weights.size()) throw ConfigError("logistic feature vector has the wrong length");
    return sigmoid(weights.dot(features) + bias);
}

namespace {

double objective(const MatrixXd& x, std::span<const int> y, const VectorXd& w, double b, double l2) {
    double f = 0.5 * l2 * w.squaredNorm();
    const VectorXd z = (x * w).array() + b;
    for (Eigen::Index i = 0; i < z.size(); ++i) f += bce_loss(z(i), y[static_cast<std::size_t>(i)]);
    return f;
}

}  // namespace

LogisticModel logistic_fit(const MatrixXd& x, std::span<const int> y, const LogisticConfig& config) {
    const Eigen::Index n = x.rows(), d = x.cols();
    if (static_cast<std::size_t>(n) != y.size()) throw PreconditionError("feature rows and labels differ in length");
    bool has_pos = false, has_neg = false;
    for (int label : y) (label ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) throw PreconditionError("logistic regression needs both classes");

    // theta = [w; b]
    VectorXd theta = VectorXd::Zero(d + 1);
    MatrixXd xa(n, d + 1);
    xa.leftCols(d) = x;
    xa.col(d).setOnes();
    VectorXd yv(n);
    for (Eigen::Index i = 0; i < n; ++i) yv(i) = y[static_cast<std::size_t>(i)];
    VectorXd penalty = VectorXd::Constant(d + 1, config.l2);
    penalty(d) = 0.0;

    double f = objective(x, y, theta.head(d), theta(d), config.l2);
    for (int it = 0; it < config.max_iterations; ++it) {
        const VectorXd z = xa * theta;
        VectorXd p(n);
        for (Eigen::Index i = 0; i < n; ++i) p(i) = sigmoid(z(i));
        const VectorXd grad = xa.transpose() * (p - yv) + penalty.cwiseProduct(theta);
        const VectorXd wdiag = p.array() * (1.0 - p.array());
        MatrixXd hess = xa.transpose() * wdiag.asDiagonal() * xa;
        hess.diagonal() += penalty + VectorXd::Constant(d + 1, 1e-12);
        const VectorXd step = hess.ldlt().solve(grad);
        double t = 1.0;
        VectorXd next = theta - step;
        double f_next = objective(x, y, next.head(d), next(d), config.l2);
        while (f_next > f && t > 1e-10) {
            t *= 0.5;
            next = theta - t * step;
            f_next = objective(x, y, next.head(d), next(d), config.l2);
        }
        const double change = std::abs(f - f_next);
        theta = next;
        f = f_next;
        if (change < config.tolerance * (1.0 + std::abs(f))) break;
    }
    LogisticModel m;
    m.weights = theta.head(d);
    m.bias = theta(d);
    return m;
}

VectorXd snapshot_features(const Snapshot& snap, const Vocabulary& vocab) {
    VectorXd x = VectorXd::Zero(static_cast<Eigen::Index>(snap.size()));
    for (std::size_t v = 0; v < snap.size(); ++v)
        if (snap.observed[v]) x(static_cast<Eigen::Index>(v)) = vocab[static_cast<VariableId>(v)].standardize(*snap.value[v]);
    return x;
}

LogisticModel train_logistic(const Cohort& cohort, std::span<const std::size_t> indices, const LogisticConfig& config) {
    MatrixXd x(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(cohort.vocabulary.size()));
    std::vector<int> y;
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto& rec = cohort.patients.at(indices[r]);
        if (!rec.label) throw PreconditionError("patient " + rec.patient_id + " has no label");
        x.row(static_cast<Eigen::Index>(r)) =
            snapshot_features(snapshot_at(rec, rec.label->time, cohort.vocabulary), cohort.vocabulary).transpose();
        y.push_back(rec.label->positive ? 1 : 0);
    }
    LogisticModel m = logistic_fit(x, y, config);
    m.vocabulary_hash = cohort.vocabulary.hash();
    return m;
}

double logistic_risk(const LogisticModel& model, const PatientRecord& record, double t, const Vocabulary& vocab) {
    return model.predict(snapshot_features(snapshot_at(record, t, vocab), vocab));
}

void save_logistic(const LogisticModel& model, const std::filesystem::path& path) {
    nlohmann::json j;
    j["format"] = "sepsislab.logistic";
    j["version"] = 1;
    j["vocabulary_hash"] = model.vocabulary_hash;
    j["weights"] = std::vector<double>(model.weights.data(), model.weights.data() + model.weights.size());
    j["bias"] = model.bias;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

LogisticModel load_logistic(const std::filesystem::path& path, const Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid logistic model file: " + std::string(e.what()));
    }
    if (j.value("format", "") != "sepsislab.logistic") throw ConfigError(path.string() + " is not a logistic model");
    LogisticModel m;
    m.vocabulary_hash = j.at("vocabulary_hash").get<std::string>();
    if (m.vocabulary_hash != vocab.hash())
        throw ConfigError("logistic model was trained on a different vocabulary (" + m.vocabulary_hash + " vs " +
                          vocab.hash() + ")");
    const auto w = j.at("weights").get<std::vector<double>>();
    m.weights = Eigen::Map<const VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    m.bias = j.at("bias").get<double>();
    if (static_cast<std::size_t>(m.weights.size()) != vocab.size())
        throw ConfigError("logistic model width does not match the vocabulary");
    return m;
}

}  // namespace sepsislab
