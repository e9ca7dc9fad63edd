#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sepsislab/vocabulary.hpp"

namespace sepsislab {

struct Observation {
    VariableId variable = 0;
    double value = 0.0;
    double time = 0.0;  // hours since admission

    friend bool operator==(const Observation&, const Observation&) = default;
};

struct StaticInfo {
    double age = 0.0;
    std::string sex;  // "F" or "M"
    std::vector<std::uint8_t> history_flags;

    friend bool operator==(const StaticInfo&, const StaticInfo&) = default;
};

struct Label {
    bool positive = false;
    double time = 0.0;  // prediction time; positive means onset within the following horizon

    friend bool operator==(const Label&, const Label&) = default;
};

struct PatientRecord {
    std::string patient_id;
    StaticInfo static_info;
    std::vector<Observation> observations;  // sorted by (time, variable), stable
    std::optional<Label> label;

    // Restores the ordering invariant after edits.
    void sort_observations();
    void add_observation(Observation obs);

    friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

// Latest non-stale value of every variable at one query time.
struct Snapshot {
    double time = 0.0;
    std::vector<std::optional<double>> value;  // raw units
    std::vector<double> age;                   // hours since the observation; 0 when absent
    std::vector<std::uint8_t> observed;        // mask

    std::size_t size() const { return value.size(); }
    bool is_observed(VariableId v) const { return observed[static_cast<std::size_t>(v)] != 0; }
    std::vector<VariableId> missing() const;
    std::vector<VariableId> present() const;
    std::size_t observed_count() const;

    friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

// For each variable the latest observation with time <= t whose age is within
// the variable's staleness window. Ties on time resolve to the later record entry.
Snapshot snapshot_at(const PatientRecord& record, double t, const Vocabulary& vocab);

// Copy of the record with every lab observation removed (vitals kept).
PatientRecord without_labs(const PatientRecord& record, const Vocabulary& vocab);

}  // namespace sepsislab
