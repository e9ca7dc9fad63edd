#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace sepsislab {

using VariableId = int;

enum class VariableKind { Vital, Lab };

struct VariableSpec {
    VariableId id = 0;
    std::string name;
    std::string unit;
    double population_mean = 0.0;
    double population_std = 1.0;
    double staleness_hours = 24.0;
    VariableKind kind = VariableKind::Lab;

    double standardize(double value) const { return (value - population_mean) / population_std; }
    double destandardize(double z) const { return population_mean + z * population_std; }
};

// Ordered, validated set of clinical variables. Ids are dense 0..size()-1.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<VariableSpec> specs);

    // 6 vitals followed by 14 labs.
    static Vocabulary standard();

    std::size_t size() const { return specs_.size(); }
    bool empty() const { return specs_.empty(); }
    const VariableSpec& operator[](VariableId id) const { return specs_.at(static_cast<std::size_t>(id)); }
    const std::vector<VariableSpec>& specs() const { return specs_; }

    std::optional<VariableId> find(std::string_view name) const;
    // Throws VocabularyError listing the known names.
    VariableId id_of(std::string_view name) const;

    std::vector<VariableId> labs() const;
    std::vector<VariableId> vitals() const;

    // Stable digest of every field; checkpoints refuse to load against a different one.
    std::string hash() const;

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.hash() == b.hash(); }

private:
    std::vector<VariableSpec> specs_;
};

std::string_view to_string(VariableKind kind);
VariableKind variable_kind_from_string(std::string_view s);

}  // namespace sepsislab
