#include "sepsislab/record.hpp"

#include <algorithm>
#include <cmath>

#include "sepsislab/errors.hpp"

namespace sepsislab {

void PatientRecord::sort_observations() {
    std::stable_sort(observations.begin(), observations.end(), [](const Observation& a, const Observation& b) {
        if (a.time != b.time) return a.time < b.time;
        return a.variable < b.variable;
    });
}

void PatientRecord::add_observation(Observation obs) {
    auto pos = std::upper_bound(observations.begin(), observations.end(), obs,
                                [](const Observation& a, const Observation& b) {
                                    if (a.time != b.time) return a.time < b.time;
                                    return a.variable < b.variable;
                                });
    observations.insert(pos, obs);
}

std::vector<VariableId> Snapshot::missing() const {
    std::vector<VariableId> out;
    for (std::size_t v = 0; v < observed.size(); ++v)
        if (!observed[v]) out.push_back(static_cast<VariableId>(v));
    return out;
}

std::vector<VariableId> Snapshot::present() const {
    std::vector<VariableId> out;
    for (std::size_t v = 0; v < observed.size(); ++v)
        if (observed[v]) out.push_back(static_cast<VariableId>(v));
    return out;
}

std::size_t Snapshot::observed_count() const {
    return static_cast<std::size_t>(std::count(observed.begin(), observed.end(), std::uint8_t{1}));
}

Snapshot snapshot_at(const PatientRecord& record, double t, const Vocabulary& vocab) {
    if (!(t >= 0.0)) throw PreconditionError("snapshot time must be >= 0");
    const std::size_t n = vocab.size();
    Snapshot snap;
    snap.time = t;
    snap.value.assign(n, std::nullopt);
    snap.age.assign(n, 0.0);
    snap.observed.assign(n, 0);

    std::vector<const Observation*> latest(n, nullptr);
    for (const auto& obs : record.observations) {
        if (obs.time > t) break;
        const auto v = static_cast<std::size_t>(obs.variable);
        if (v >= n) throw ConfigError("observation references variable id outside the vocabulary");
        latest[v] = &obs;
    }
    for (std::size_t v = 0; v < n; ++v) {
        if (!latest[v]) continue;
        const double age = t - latest[v]->time;
        if (age > vocab[static_cast<VariableId>(v)].staleness_hours) continue;
        snap.value[v] = latest[v]->value;
        snap.age[v] = age;
        snap.observed[v] = 1;
    }
    return snap;
}

PatientRecord without_labs(const PatientRecord& record, const Vocabulary& vocab) {
    PatientRecord out = record;
    std::erase_if(out.observations,
                  [&](const Observation& o) { return vocab[o.variable].kind == VariableKind::Lab; });
    return out;
}

}  // namespace sepsislab
