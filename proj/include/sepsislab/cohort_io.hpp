#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sepsislab/record.hpp"
#include "sepsislab/vocabulary.hpp"

namespace sepsislab {

struct Cohort {
    Vocabulary vocabulary;
    std::size_t n_flags = 0;
    std::vector<PatientRecord> patients;  // sorted by patient_id
};

// File names inside a cohort directory.
inline constexpr const char* kEventsFile = "events.csv";
inline constexpr const char* kStaticsFile = "statics.csv";
inline constexpr const char* kLabelsFile = "labels.csv";
inline constexpr const char* kVocabularyFile = "vocabulary.json";

// Reads events.csv + statics.csv (+ labels.csv and vocabulary.json when present).
// Without vocabulary.json the standard vocabulary is assumed.
Cohort ingest_cohort(const std::filesystem::path& dir);

// Same, with an explicit vocabulary overriding any vocabulary.json.
Cohort ingest_cohort(const std::filesystem::path& dir, const Vocabulary& vocab);

// Writes all four files. Values use the shortest round-trip decimal form, so
// ingest_cohort(write_cohort(x)) reproduces x exactly.
void write_cohort(const Cohort& cohort, const std::filesystem::path& dir);

// Parses the three CSV bodies directly (used by ingest_cohort and tests).
Cohort parse_cohort(const std::string& events_csv, const std::string& statics_csv, const std::string* labels_csv,
                    const Vocabulary& vocab);

std::string format_double(double v);

}  // namespace sepsislab
