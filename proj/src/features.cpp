#include "sepsislab/features.hpp"

#include <algorithm>
#include <cmath>

#include "sepsislab/errors.hpp"

namespace sepsislab {

Eigen::VectorXd static_features(const StaticInfo& info) {
    Eigen::VectorXd s(static_cast<Eigen::Index>(static_dim(info.history_flags.size())));
    s(0) = (info.age - 65.0) / 15.0;
    s(1) = info.sex == "M" ? 1.0 : 0.0;
    for (std::size_t i = 0; i < info.history_flags.size(); ++i)
        s(static_cast<Eigen::Index>(2 + i)) = info.history_flags[i] ? 1.0 : 0.0;
    return s;
}

double recency_of(const VariableSpec& spec, double age_hours) { return std::exp(-age_hours / spec.staleness_hours); }

Reading make_reading(const VariableSpec& spec, double raw_value, double age_hours) {
    return Reading{spec.id, spec.standardize(raw_value), recency_of(spec, age_hours)};
}

std::vector<Reading> readings_from(const Snapshot& snap, const Vocabulary& vocab) {
    std::vector<Reading> out;
    for (std::size_t v = 0; v < snap.size(); ++v) {
        if (!snap.observed[v]) continue;
        out.push_back(make_reading(vocab[static_cast<VariableId>(v)], *snap.value[v], snap.age[v]));
    }
    return out;
}

SequenceInput build_sequence(const PatientRecord& record, double t, const Vocabulary& vocab,
                             std::size_t max_timesteps) {
    if (!(t >= 0.0)) throw PreconditionError("query time must be >= 0");
    if (max_timesteps < 1) throw PreconditionError("max_timesteps must be >= 1");

    std::vector<double> times;
    for (const auto& o : record.observations) {
        if (o.time > t) break;
        times.push_back(std::min(std::ceil(o.time / kBucketHours) * kBucketHours, t));
    }
    times.push_back(t);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    if (times.size() > max_timesteps) times.erase(times.begin(), times.end() - static_cast<long>(max_timesteps));

    SequenceInput seq;
    seq.statics = static_features(record.static_info);
    seq.steps.reserve(times.size());

    // Single sweep: `latest` tracks the newest observation per variable up to the step time.
    const std::size_t n = vocab.size();
    std::vector<const Observation*> latest(n, nullptr);
    std::size_t cursor = 0;
    const auto& obs = record.observations;
    for (double tau : times) {
        while (cursor < obs.size() && obs[cursor].time <= tau) {
            const auto v = static_cast<std::size_t>(obs[cursor].variable);
            if (v >= n) throw ConfigError("observation references variable id outside the vocabulary");
            latest[v] = &obs[cursor];
            ++cursor;
        }
        Step step;
        step.time = tau;
        for (std::size_t v = 0; v < n; ++v) {
            if (!latest[v]) continue;
            const auto& spec = vocab[static_cast<VariableId>(v)];
            const double age = tau - latest[v]->time;
            if (age > spec.staleness_hours) continue;
            step.readings.push_back(make_reading(spec, latest[v]->value, age));
        }
        seq.steps.push_back(std::move(step));
    }
    return seq;
}

}  // namespace sepsislab
