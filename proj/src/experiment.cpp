#include "sepsislab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "sepsislab/errors.hpp"
#include "sepsislab/metrics.hpp"
#include "sepsislab/recommender.hpp"

namespace sepsislab {

std::string_view to_string(Condition c) {
    switch (c) {
        case Condition::Masked: return "masked";
        case Condition::Recommended: return "recommended";
        case Condition::Full: return "full";
    }
    return "?";
}

Condition condition_from_string(std::string_view s) {
    if (s == "masked") return Condition::Masked;
    if (s == "recommended") return Condition::Recommended;
    if (s == "full") return Condition::Full;
    throw ConfigError("unknown condition '" + std::string(s) + "' (expected masked, recommended or full)");
}

std::string_view to_string(Scorer s) { return s == Scorer::Lstm ? "lstm" : "logistic"; }

Scorer scorer_from_string(std::string_view s) {
    if (s == "lstm") return Scorer::Lstm;
    if (s == "logistic") return Scorer::Logistic;
    throw ConfigError("unknown scorer '" + std::string(s) + "' (expected lstm or logistic)");
}

void ExperimentConfig::validate() const {
    if (!(budget >= 0.0 && budget <= 1.0)) throw ConfigError("budget must lie in [0, 1]");
    policy.validate();
}

std::size_t count_labs(const PatientRecord& record, double t, const Vocabulary& vocab) {
    std::size_t n = 0;
    for (const auto& o : record.observations)
        if (o.time <= t && vocab[o.variable].kind == VariableKind::Lab) ++n;
    return n;
}

namespace {

struct Scored {
    double score = 0.5;
    double entropy = 0.0;
};

Scored score_record(const PatientRecord& rec, double t, const ExperimentModels& models, const ExperimentConfig& cfg,
                    const Vocabulary& vocab) {
    if (cfg.scorer == Scorer::Logistic) {
        const double p = logistic_risk(*models.logistic, rec, t, vocab);
        return {p, binary_entropy(p)};
    }
    const auto pred = predict_uncertain(*models.lstm, *models.imputation, rec, t, cfg.policy, vocab);
    return {pred.p_mean, pred.entropy};
}

// Reveal loop for one patient: the LSTM recommender ranks the labs that are
// missing now but have a non-stale true value; the scorer's entropy decides when to stop.
PatientResult run_recommended(const PatientRecord& full, const ExperimentModels& models, const ExperimentConfig& cfg,
                              const Vocabulary& vocab, std::vector<AcquisitionStep>& log) {
    const double t = full.label->time;
    PatientResult res;
    res.patient_id = full.patient_id;
    res.label = full.label->positive ? 1 : 0;
    res.withheld = count_labs(full, t, vocab);
    const auto limit = static_cast<std::size_t>(std::floor(cfg.budget * static_cast<double>(res.withheld) + 1e-9));

    PatientRecord current = without_labs(full, vocab);
    const Snapshot truth = snapshot_at(full, t, vocab);
    Scored s = score_record(current, t, models, cfg, vocab);
    for (std::size_t iter = 0; s.entropy > cfg.policy.th_e; ++iter) {
        if (res.revealed >= limit) {
            res.budget_exhausted = true;
            break;
        }
        MonteCarloEvaluator mc(*models.lstm, *models.imputation, current, t, vocab, cfg.policy.max_timesteps);
        std::vector<VariableId> candidates;
        for (auto v : mc.missing())
            if (vocab[v].kind == VariableKind::Lab && truth.is_observed(v)) candidates.push_back(v);
        if (candidates.empty()) break;
        const auto rec = recommend(mc, cfg.policy, request_seed(cfg.policy.seed, current.patient_id, t), candidates);
        const auto& best = rec.ranked.front();
        const VariableId v = best.variables.front();
        const auto vi = static_cast<std::size_t>(v);
        const Observation obs{v, *truth.value[vi], t - truth.age[vi]};
        current.add_observation(obs);
        ++res.revealed;
        const Scored next = score_record(current, t, models, cfg, vocab);
        log.push_back({full.patient_id, iter, v, obs.time, obs.value, s.entropy, next.entropy, best.reduction});
        s = next;
    }
    res.score = s.score;
    res.entropy = s.entropy;
    return res;
}

}  // namespace

ExperimentReport run_condition(const Cohort& cohort, std::span<const std::size_t> indices,
                               const ExperimentModels& models, const ExperimentConfig& config) {
    config.validate();
    const auto& vocab = cohort.vocabulary;
    const bool needs_lstm = config.scorer == Scorer::Lstm || config.condition == Condition::Recommended;
    if (needs_lstm && (!models.lstm || !models.imputation))
        throw ConfigError("this experiment needs the LSTM checkpoint and its imputation model");
    if (config.scorer == Scorer::Logistic && !models.logistic) throw ConfigError("logistic scorer needs a logistic model");
    if (models.lstm && models.imputation) check_compatible(*models.lstm, *models.imputation, vocab);
    if (models.logistic && models.logistic->vocabulary_hash != vocab.hash())
        throw ConfigError("logistic model vocabulary does not match the cohort");

    const auto start = std::chrono::steady_clock::now();
    ExperimentReport report;
    report.model = config.model_name.empty() ? std::string(to_string(config.scorer)) : config.model_name;
    report.condition = config.condition;
    report.budget = config.budget;
    report.seed = config.policy.seed;

    std::vector<std::size_t> order(indices.begin(), indices.end());
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return cohort.patients.at(a).patient_id < cohort.patients.at(b).patient_id;
    });
    std::vector<double> scores;
    std::vector<int> labels;
    for (auto i : order) {
        const auto& rec = cohort.patients.at(i);
        if (!rec.label) throw PreconditionError("patient " + rec.patient_id + " has no label");
        const double t = rec.label->time;
        PatientResult res;
        switch (config.condition) {
            case Condition::Masked:
            case Condition::Full: {
                const bool full = config.condition == Condition::Full;
                const auto s = score_record(full ? rec : without_labs(rec, vocab), t, models, config, vocab);
                res.patient_id = rec.patient_id;
                res.label = rec.label->positive ? 1 : 0;
                res.withheld = count_labs(rec, t, vocab);
                res.revealed = full ? res.withheld : 0;
                res.score = s.score;
                res.entropy = s.entropy;
                break;
            }
            case Condition::Recommended: res = run_recommended(rec, models, config, vocab, report.log); break;
        }
        report.revealed_total += res.revealed;
        report.withheld_total += res.withheld;
        scores.push_back(res.score);
        labels.push_back(res.label);
        report.patients.push_back(std::move(res));
    }
    report.n_patients = report.patients.size();
    const bool both = std::find(labels.begin(), labels.end(), 0) != labels.end() &&
                      std::find(labels.begin(), labels.end(), 1) != labels.end();
    if (both) report.auc = compute_auc(scores, labels);
    report.acquired_fraction = report.withheld_total == 0 ? 0.0
                                                          : static_cast<double>(report.revealed_total) /
                                                                static_cast<double>(report.withheld_total);
    report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

ReportTable report_table(std::span<const ExperimentReport> reports) {
    ReportTable table;
    std::ostringstream csv;
    csv << kReportCsvHeader << "\n";
    for (const auto& r : reports)
        csv << r.model << "," << to_string(r.condition) << "," << (r.auc ? format_double(*r.auc) : "") << ","
            << format_double(r.acquired_fraction) << "," << r.n_patients << "," << r.seed << "\n";
    table.csv = csv.str();

    // Pivot: one row per model in first-seen order.
    std::vector<std::string> models;
    std::map<std::string, std::map<Condition, const ExperimentReport*>> cells;
    for (const auto& r : reports) {
        if (!cells.count(r.model)) models.push_back(r.model);
        cells[r.model][r.condition] = &r;
    }
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", v);
        return std::string(buf);
    };
    std::ostringstream txt;
    char line[160];
    std::snprintf(line, sizeof(line), "%-12s %8s %12s %8s %10s\n", "model", "masked", "recommended", "full",
                  "acquired");
    txt << line;
    for (const auto& m : models) {
        auto cell = [&](Condition c) {
            const auto it = cells[m].find(c);
            return it == cells[m].end() || !it->second->auc ? std::string("-") : fmt(*it->second->auc);
        };
        const auto rec = cells[m].find(Condition::Recommended);
        const std::string acquired = rec == cells[m].end() ? "-" : fmt(rec->second->acquired_fraction);
        std::snprintf(line, sizeof(line), "%-12s %8s %12s %8s %10s\n", m.c_str(), cell(Condition::Masked).c_str(),
                      cell(Condition::Recommended).c_str(), cell(Condition::Full).c_str(), acquired.c_str());
        txt << line;
    }
    table.text = txt.str();
    return table;
}

}  // namespace sepsislab
