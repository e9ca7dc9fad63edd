#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "sepsislab/cohort_io.hpp"
#include "sepsislab/generator.hpp"
#include "sepsislab/imputation.hpp"
#include "sepsislab/training.hpp"

namespace sepsislab::test {

// n labs named X0..X{n-1}, standardized units (mean 0, std 1), 24 h staleness.
inline Vocabulary toy_vocabulary(std::size_t n, double staleness = 24.0) {
    std::vector<VariableSpec> specs;
    for (std::size_t i = 0; i < n; ++i) {
        VariableSpec s;
        s.id = static_cast<VariableId>(i);
        s.name = "X" + std::to_string(i);
        s.unit = "u";
        s.population_mean = 0.0;
        s.population_std = 1.0;
        s.staleness_hours = staleness;
        s.kind = VariableKind::Lab;
        specs.push_back(s);
    }
    return Vocabulary(std::move(specs));
}

inline PatientRecord make_record(std::string id, std::vector<Observation> obs, double label_time = -1.0,
                                 bool positive = false, std::size_t n_flags = 4) {
    PatientRecord r;
    r.patient_id = std::move(id);
    r.static_info = {65.0, "F", std::vector<std::uint8_t>(n_flags, 0)};
    r.observations = std::move(obs);
    r.sort_observations();
    if (label_time >= 0.0) r.label = Label{positive, label_time};
    return r;
}

// Label decided by the sign of Lactate (measured at `lactate_time`); HR is noise.
inline Cohort separable_cohort(std::size_t n, std::uint64_t seed, double lactate_time = 1.0) {
    Cohort c;
    c.vocabulary = Vocabulary::standard();
    c.n_flags = 4;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    const auto lac = c.vocabulary.id_of("Lactate");
    const auto hr = c.vocabulary.id_of("HR");
    for (std::size_t i = 0; i < n; ++i) {
        PatientRecord r;
        r.patient_id = "T" + std::to_string(1000 + i);
        r.static_info = {65.0 + 10.0 * z(rng), (i / 2) % 2 ? "M" : "F", {0, 0, 0, 0}};
        const bool pos = i % 2 == 0;
        const double lz = (pos ? 1.0 : -1.0) * (0.5 + std::abs(z(rng)));
        r.observations.push_back({hr, c.vocabulary[hr].destandardize(z(rng)), 0.5});
        r.observations.push_back({lac, c.vocabulary[lac].destandardize(lz), lactate_time});
        r.observations.push_back({hr, c.vocabulary[hr].destandardize(z(rng)), 1.5});
        r.label = Label{pos, 2.0};
        c.patients.push_back(std::move(r));
    }
    return c;
}

struct TrainedFixture {
    Cohort cohort;
    TrainedModel model;
    ImputationModel imputation;
    CohortSplit split;
};

// Small LSTM on the separable Lactate cohort; built once per test binary.
inline const TrainedFixture& lactate_fixture() {
    static const TrainedFixture f = [] {
        TrainedFixture t;
        t.cohort = separable_cohort(300, 5, 2.0);
        TrainConfig cfg;
        cfg.seed = 3;
        cfg.embed_dim = 8;
        cfg.hidden_dim = 8;
        cfg.num_layers = 1;
        cfg.epochs = 40;
        cfg.learning_rate = 0.01;
        cfg.batch_size = 16;
        cfg.lab_dropout = 0.0;
        cfg.impute_missing = true;
        t.model = train(t.cohort, cfg);
        t.split = split_cohort(t.cohort, cfg.split_fractions, cfg.seed);
        t.imputation = *t.model.imputation;
        return t;
    }();
    return f;
}

// Small LSTM on a generated cohort; built once per test binary.
inline const TrainedFixture& generated_fixture() {
    static const TrainedFixture f = [] {
        TrainedFixture t;
        t.cohort = generate_cohort(11, 800);
        TrainConfig cfg;
        cfg.seed = 2;
        cfg.embed_dim = 8;
        cfg.hidden_dim = 8;
        cfg.num_layers = 1;
        cfg.epochs = 15;
        cfg.learning_rate = 0.01;
        cfg.lab_dropout = 0.5;
        t.model = train(t.cohort, cfg);
        t.split = split_cohort(t.cohort, cfg.split_fractions, cfg.seed);
        t.imputation = *t.model.imputation;
        return t;
    }();
    return f;
}

}  // namespace sepsislab::test
