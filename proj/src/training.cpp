#include "sepsislab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sepsislab/errors.hpp"
#include "sepsislab/metrics.hpp"
#include "sepsislab/rng.hpp"

namespace sepsislab {

namespace {

void set_zero(ModelParams& p) {
    for (auto& t : p.tensors()) std::fill(t.data.begin(), t.data.end(), 0.0);
}

double squared_norm(const ModelParams& p) {
    double s = 0.0;
    for (const auto& t : p.tensors())
        for (double x : t.data) s += x * x;
    return s;
}

void axpy(ModelParams& dst, double a, const ModelParams& src) {
    auto d = dst.tensors();
    auto s = src.tensors();
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t k = 0; k < d[i].data.size(); ++k) d[i].data[k] += a * s[i].data[k];
}

// Bias-corrected Adam moments, one flat buffer per parameter tensor.
class AdamState {
public:
    explicit AdamState(const ModelParams& shape_like) {
        for (const auto& t : shape_like.tensors()) {
            m_.emplace_back(t.data.size(), 0.0);
            v_.emplace_back(t.data.size(), 0.0);
        }
    }

    void step(ModelParams& params, const ModelParams& grads, double lr, double scale, const TrainConfig& cfg) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t_));
        auto p = params.tensors();
        const auto g = grads.tensors();
        for (std::size_t i = 0; i < p.size(); ++i) {
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < p[i].data.size(); ++k) {
                const double gk = scale * g[i].data[k];
                m[k] = cfg.adam_beta1 * m[k] + (1.0 - cfg.adam_beta1) * gk;
                v[k] = cfg.adam_beta2 * v[k] + (1.0 - cfg.adam_beta2) * gk * gk;
                p[i].data[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.adam_epsilon);
            }
        }
    }

private:
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t t_ = 0;
};

struct Evaluation {
    double loss = 0.0;
    double auc = 0.5;
};

Evaluation evaluate(const ModelParams& params, const std::vector<LabeledSequence>& set) {
    Evaluation ev;
    if (set.empty()) return ev;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& ex : set) {
        const auto tr = forward(params, ex.input);
        ev.loss += bce_loss(tr.logit, ex.label);
        scores.push_back(tr.probability);
        labels.push_back(ex.label);
    }
    ev.loss /= static_cast<double>(set.size());
    const bool both = std::find(labels.begin(), labels.end(), 0) != labels.end() &&
                      std::find(labels.begin(), labels.end(), 1) != labels.end();
    ev.auc = both ? compute_auc(scores, labels) : 0.5;
    return ev;
}

}  // namespace

std::string_view to_string(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd"; }

Optimizer optimizer_from_string(std::string_view s) {
    if (s == "adam") return Optimizer::Adam;
    if (s == "sgd") return Optimizer::Sgd;
    throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lab_dropout >= 0.0 && lab_dropout <= 1.0)) throw ConfigError("lab_dropout must lie in [0, 1]");
    if (max_timesteps < 1) throw ConfigError("max_timesteps must be >= 1");
    double sum = 0.0;
    for (double f : split_fractions) {
        if (!(f >= 0.0)) throw ConfigError("split fractions must be >= 0");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

CohortSplit split_cohort(const Cohort& cohort, const std::array<double, 3>& fractions, std::uint64_t seed) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
        const auto& p = cohort.patients[i];
        if (!p.label) throw PreconditionError("patient " + p.patient_id + " has no label");
        (p.label->positive ? pos : neg).push_back(i);
    }
    CohortSplit split;
    SplitMix64 rng(combine_seed(seed, 0x5b1175ULL));
    for (auto* group : {&pos, &neg}) {
        std::shuffle(group->begin(), group->end(), rng);
        const auto n = static_cast<double>(group->size());
        const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
        const auto n_val = std::min(group->size() - n_train, static_cast<std::size_t>(std::llround(fractions[1] * n)));
        for (std::size_t k = 0; k < group->size(); ++k) {
            auto& dst = k < n_train ? split.train : (k < n_train + n_val ? split.validation : split.test);
            dst.push_back((*group)[k]);
        }
    }
    for (auto* v : {&split.train, &split.validation, &split.test}) std::sort(v->begin(), v->end());
    return split;
}

LabeledSequence labeled_sequence(const PatientRecord& record, const Vocabulary& vocab, std::size_t max_timesteps) {
    if (!record.label) throw PreconditionError("patient " + record.patient_id + " has no label");
    LabeledSequence ex;
    ex.patient_id = record.patient_id;
    ex.input = build_sequence(record, record.label->time, vocab, max_timesteps);
    ex.label = record.label->positive ? 1 : 0;
    return ex;
}

double batch_loss_and_gradient(const ModelParams& params, const std::vector<const LabeledSequence*>& batch,
                               ModelParams& grads) {
    set_zero(grads);
    if (batch.empty()) return 0.0;
    const double w = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const auto* ex : batch) loss += loss_and_gradient(params, ex->input, ex->label, grads, w);
    return loss * w;
}

TrainedModel train_examples(std::size_t n_train, const ExampleSource& source,
                            const std::vector<LabeledSequence>& validation_set, const ModelShape& shape,
                            const TrainConfig& config) {
    config.validate();
    if (n_train == 0) throw PreconditionError("training set is empty");

    TrainedModel out;
    ModelParams params = ModelParams::initialize(shape, config.seed);
    ModelParams grads = ModelParams::zeros(shape);
    AdamState adam(params);

    // Without a validation set, selection uses the examples as first presented.
    std::vector<LabeledSequence> fallback;
    if (validation_set.empty())
        for (std::size_t i = 0; i < n_train; ++i) fallback.push_back(source(i, 1));
    const auto& select_from = validation_set.empty() ? fallback : validation_set;
    Evaluation initial = evaluate(params, select_from);
    out.params = params;
    out.report.best_epoch = 0;
    out.report.best_validation_auc = initial.auc;
    double best_loss = initial.loss;

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<LabeledSequence> examples;
    std::vector<const LabeledSequence*> batch;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        SplitMix64 rng(combine_seed(config.seed, epoch));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            examples.clear();
            for (std::size_t k = start; k < end; ++k) examples.push_back(source(order[k], epoch));
            batch.clear();
            for (const auto& ex : examples) batch.push_back(&ex);
            epoch_loss += batch_loss_and_gradient(params, batch, grads) * static_cast<double>(batch.size());
            double scale = 1.0;
            if (config.gradient_clip > 0.0) {
                const double norm = std::sqrt(squared_norm(grads));
                if (norm > config.gradient_clip) scale = config.gradient_clip / norm;
            }
            if (config.learning_rate <= 0.0) continue;
            if (config.optimizer == Optimizer::Adam)
                adam.step(params, grads, config.learning_rate, scale, config);
            else
                axpy(params, -config.learning_rate * scale, grads);
        }
        if (!params.all_finite()) throw Error("training diverged (non-finite parameters) at epoch " + std::to_string(epoch));

        const Evaluation val = evaluate(params, select_from);
        out.report.epochs.push_back({epoch, epoch_loss / static_cast<double>(n_train), val.loss, val.auc});
        // Ties on AUC (common once it saturates) go to the lower validation loss.
        if (val.auc > out.report.best_validation_auc ||
            (val.auc == out.report.best_validation_auc && val.loss < best_loss)) {
            out.report.best_validation_auc = val.auc;
            best_loss = val.loss;
            out.report.best_epoch = epoch;
            out.params = params;
        }
    }
    return out;
}

TrainedModel train_sequences(const std::vector<LabeledSequence>& train_set,
                             const std::vector<LabeledSequence>& validation_set, const ModelShape& shape,
                             const TrainConfig& config) {
    config.validate();
    bool has_pos = false, has_neg = false;
    for (const auto& ex : train_set) (ex.label ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) throw PreconditionError("training set must contain both classes");
    return train_examples(
        train_set.size(), [&](std::size_t i, std::size_t) { return train_set[i]; }, validation_set, shape, config);
}

LabeledSequence augmented_example(const PatientRecord& record, const Vocabulary& vocab,
                                  const ImputationModel* imputation, const TrainConfig& config, std::size_t index,
                                  std::size_t epoch) {
    if (!record.label) throw PreconditionError("patient " + record.patient_id + " has no label");
    const double t = record.label->time;
    SplitMix64 rng(combine_seed(combine_seed(combine_seed(config.seed, 0xa09e47ULL), epoch), index));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const PatientRecord* shown = &record;
    PatientRecord partial;
    if (config.lab_dropout > 0.0 && unit(rng) < config.lab_dropout) {
        partial = without_labs(record, vocab);
        const Snapshot truth = snapshot_at(record, t, vocab);
        std::vector<VariableId> labs;
        for (auto v : truth.present())
            if (vocab[v].kind == VariableKind::Lab) labs.push_back(v);
        std::shuffle(labs.begin(), labs.end(), rng);
        const auto keep = std::uniform_int_distribution<std::size_t>(0, labs.size())(rng);
        for (std::size_t k = 0; k < keep; ++k) {
            const auto vi = static_cast<std::size_t>(labs[k]);
            partial.add_observation({labs[k], *truth.value[vi], t - truth.age[vi]});
        }
        shown = &partial;
    }

    LabeledSequence ex = labeled_sequence(*shown, vocab, config.max_timesteps);
    if (config.impute_missing && imputation) {
        const Snapshot snap = snapshot_at(*shown, t, vocab);
        const auto missing = snap.missing();
        if (!missing.empty()) {
            const Eigen::MatrixXd draw = sample_missing(*imputation, snap, 1, rng(), vocab);
            auto& readings = ex.input.steps.back().readings;
            for (auto v : missing) {
                const auto vi = static_cast<std::size_t>(v);
                readings.push_back({v, vocab[v].standardize(draw(static_cast<Eigen::Index>(vi), 0)), 1.0});
            }
            std::sort(readings.begin(), readings.end(),
                      [](const Reading& a, const Reading& b) { return a.variable < b.variable; });
        }
    }
    return ex;
}

TrainedModel train(const Cohort& cohort, const TrainConfig& config) {
    config.validate();
    bool has_pos = false, has_neg = false;
    for (const auto& p : cohort.patients) {
        if (!p.label) throw PreconditionError("patient " + p.patient_id + " has no label");
        (p.label->positive ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) throw PreconditionError("cohort must contain both classes (AUC undefined otherwise)");

    const CohortSplit split = split_cohort(cohort, config.split_fractions, config.seed);
    const auto& vocab = cohort.vocabulary;
    std::vector<LabeledSequence> train_set, val_set;
    for (auto i : split.train) train_set.push_back(labeled_sequence(cohort.patients[i], vocab, config.max_timesteps));
    for (auto i : split.validation) val_set.push_back(labeled_sequence(cohort.patients[i], vocab, config.max_timesteps));
    {
        bool pos = false, neg = false;
        for (const auto& ex : train_set) (ex.label ? pos : neg) = true;
        if (!pos || !neg) throw PreconditionError("training set must contain both classes");
    }

    ModelShape shape;
    shape.num_variables = vocab.size();
    shape.static_dim = static_dim(cohort.n_flags);
    shape.embed_dim = config.embed_dim;
    shape.hidden_dim = config.hidden_dim;
    shape.num_layers = config.num_layers;

    ImputationModel imputation = fit_imputation(cohort, split.train);
    const bool augment = config.lab_dropout > 0.0 || config.impute_missing;
    ExampleSource source = [&](std::size_t i, std::size_t epoch) {
        if (!augment) return train_set[i];
        return augmented_example(cohort.patients[split.train[i]], vocab, &imputation, config, i, epoch);
    };
    TrainedModel out = train_examples(train_set.size(), source, val_set, shape, config);
    out.params.vocabulary_hash = vocab.hash();
    out.imputation = std::move(imputation);
    for (auto i : split.train) out.report.train_ids.push_back(cohort.patients[i].patient_id);
    for (auto i : split.validation) out.report.validation_ids.push_back(cohort.patients[i].patient_id);
    for (auto i : split.test) out.report.test_ids.push_back(cohort.patients[i].patient_id);
    return out;
}

double gradient_check(const ModelParams& params, const SequenceInput& input, int label, double epsilon,
                      std::size_t coordinates, std::uint64_t seed) {
    if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) throw PreconditionError("epsilon must lie in [1e-6, 1e-3]");
    ModelParams grads = ModelParams::zeros(params.shape);
    loss_and_gradient(params, input, label, grads);

    ModelParams probe = params;
    auto probe_views = probe.tensors();
    const auto grad_views = grads.tensors();
    std::size_t total = 0;
    for (const auto& t : probe_views) total += t.data.size();

    SplitMix64 rng(combine_seed(seed, 0x67c4ULL));
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    double worst = 0.0;
    for (std::size_t c = 0; c < coordinates; ++c) {
        std::size_t flat = pick(rng);
        std::size_t ti = 0;
        while (flat >= probe_views[ti].data.size()) flat -= probe_views[ti++].data.size();
        double& x = probe_views[ti].data[flat];
        const double saved = x;
        x = saved + epsilon;
        const double up = bce_loss(forward(probe, input).logit, label);
        x = saved - epsilon;
        const double down = bce_loss(forward(probe, input).logit, label);
        x = saved;
        const double numeric = (up - down) / (2.0 * epsilon);
        const double analytic = grad_views[ti].data[flat];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
    return worst;
}

}  // namespace sepsislab
