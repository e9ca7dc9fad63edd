#include "sepsislab/vocabulary.hpp"

#include <charconv>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "sepsislab/errors.hpp"
#include "sepsislab/rng.hpp"

namespace sepsislab {

namespace {

std::string shortest(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

}  // namespace

Vocabulary::Vocabulary(std::vector<VariableSpec> specs) : specs_(std::move(specs)) {
    std::set<std::string> names;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const auto& s = specs_[i];
        if (s.id != static_cast<VariableId>(i))
            throw ConfigError("variable ids must be dense 0..V-1; got id " + std::to_string(s.id) +
                              " at position " + std::to_string(i));
        if (s.name.empty()) throw ConfigError("variable " + std::to_string(i) + " has no name");
        if (!names.insert(s.name).second) throw ConfigError("duplicate variable name: " + s.name);
        if (!(s.population_std > 0.0) || !std::isfinite(s.population_std))
            throw ConfigError("population_std must be > 0 for " + s.name);
        if (!std::isfinite(s.population_mean)) throw ConfigError("population_mean not finite for " + s.name);
        if (!(s.staleness_hours > 0.0)) throw ConfigError("staleness_hours must be > 0 for " + s.name);
    }
}

Vocabulary Vocabulary::standard() {
    struct Row {
        const char* name;
        const char* unit;
        double mean;
        double std;
        VariableKind kind;
    };
    static constexpr Row rows[] = {
        {"HR", "bpm", 85.0, 15.0, VariableKind::Vital},
        {"RR", "breaths/min", 18.0, 4.0, VariableKind::Vital},
        {"Temp", "degC", 37.0, 0.7, VariableKind::Vital},
        {"SBP", "mmHg", 120.0, 18.0, VariableKind::Vital},
        {"DBP", "mmHg", 70.0, 12.0, VariableKind::Vital},
        {"SpO2", "%", 96.0, 2.5, VariableKind::Vital},
        {"Lactate", "mmol/L", 1.8, 1.0, VariableKind::Lab},
        {"WBC", "10^9/L", 9.5, 4.0, VariableKind::Lab},
        {"Creatinine", "mg/dL", 1.2, 0.6, VariableKind::Lab},
        {"Bilirubin", "mg/dL", 1.0, 0.8, VariableKind::Lab},
        {"Platelets", "10^9/L", 220.0, 80.0, VariableKind::Lab},
        {"Hemoglobin", "g/dL", 11.5, 2.0, VariableKind::Lab},
        {"Sodium", "mmol/L", 139.0, 4.0, VariableKind::Lab},
        {"Potassium", "mmol/L", 4.1, 0.5, VariableKind::Lab},
        {"Chloride", "mmol/L", 103.0, 5.0, VariableKind::Lab},
        {"Bicarbonate", "mmol/L", 24.0, 4.0, VariableKind::Lab},
        {"BUN", "mg/dL", 20.0, 12.0, VariableKind::Lab},
        {"Glucose", "mg/dL", 130.0, 45.0, VariableKind::Lab},
        {"INR", "ratio", 1.2, 0.4, VariableKind::Lab},
        {"Albumin", "g/dL", 3.3, 0.6, VariableKind::Lab},
    };
    std::vector<VariableSpec> specs;
    VariableId id = 0;
    for (const auto& r : rows) {
        const double staleness = r.kind == VariableKind::Vital ? 8.0 : 24.0;
        specs.push_back({id++, r.name, r.unit, r.mean, r.std, staleness, r.kind});
    }
    return Vocabulary(std::move(specs));
}

std::optional<VariableId> Vocabulary::find(std::string_view name) const {
    for (const auto& s : specs_)
        if (s.name == name) return s.id;
    return std::nullopt;
}

VariableId Vocabulary::id_of(std::string_view name) const {
    if (auto id = find(name)) return *id;
    std::string known;
    for (const auto& s : specs_) {
        if (!known.empty()) known += ", ";
        known += s.name;
    }
    throw VocabularyError("unknown variable '" + std::string(name) + "'; known variables: " + known);
}

std::vector<VariableId> Vocabulary::labs() const {
    std::vector<VariableId> out;
    for (const auto& s : specs_)
        if (s.kind == VariableKind::Lab) out.push_back(s.id);
    return out;
}

std::vector<VariableId> Vocabulary::vitals() const {
    std::vector<VariableId> out;
    for (const auto& s : specs_)
        if (s.kind == VariableKind::Vital) out.push_back(s.id);
    return out;
}

std::string Vocabulary::hash() const {
    std::uint64_t h = fnv1a64("sepsislab-vocabulary-v1");
    for (const auto& s : specs_) {
        std::string row = std::to_string(s.id) + "|" + s.name + "|" + s.unit + "|" + shortest(s.population_mean) + "|" +
                          shortest(s.population_std) + "|" + shortest(s.staleness_hours) + "|" +
                          std::string(to_string(s.kind)) + "\n";
        h = fnv1a64(row, h);
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

nlohmann::json Vocabulary::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : specs_) {
        arr.push_back({{"id", s.id},
                       {"name", s.name},
                       {"unit", s.unit},
                       {"population_mean", s.population_mean},
                       {"population_std", s.population_std},
                       {"staleness_hours", s.staleness_hours},
                       {"kind", to_string(s.kind)}});
    }
    return arr;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw ConfigError("vocabulary JSON must be an array of variable specs");
    std::vector<VariableSpec> specs;
    for (const auto& e : j) {
        VariableSpec s;
        s.id = e.at("id").get<int>();
        s.name = e.at("name").get<std::string>();
        s.unit = e.value("unit", std::string{});
        s.population_mean = e.at("population_mean").get<double>();
        s.population_std = e.at("population_std").get<double>();
        s.staleness_hours = e.at("staleness_hours").get<double>();
        s.kind = variable_kind_from_string(e.value("kind", std::string{"lab"}));
        specs.push_back(std::move(s));
    }
    return Vocabulary(std::move(specs));
}

std::string_view to_string(VariableKind kind) { return kind == VariableKind::Vital ? "vital" : "lab"; }

VariableKind variable_kind_from_string(std::string_view s) {
    if (s == "vital") return VariableKind::Vital;
    if (s == "lab") return VariableKind::Lab;
    throw ConfigError("unknown variable kind '" + std::string(s) + "'");
}

}  // namespace sepsislab
