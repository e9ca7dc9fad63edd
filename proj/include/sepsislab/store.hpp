#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sepsislab/record.hpp"
#include "sepsislab/uncertainty.hpp"

struct sqlite3;

namespace sepsislab {

inline constexpr double kAdmissionTime = 0.0;

struct StoredPatient {
    PatientRecord record;  // label is never stored
    std::string alias;
    double now = 0.0;          // hours since admission
    std::int64_t version = 0;  // bumped by every write
};

struct StoredPrediction {
    std::int64_t version = 0;
    double time = 0.0;
    UncertainPrediction prediction;
};

struct OrderRecord {
    std::int64_t order_id = 0;
    std::string patient_id;
    std::vector<std::string> variables;
    double order_time = 0.0;
    std::optional<double> fulfilled_time;  // >= order_time when set
    std::map<std::string, double> values;  // empty until fulfilled

    bool fulfilled() const { return fulfilled_time.has_value(); }
    friend bool operator==(const OrderRecord&, const OrderRecord&) = default;
};

// One observation keyed by variable name, as the store keeps it.
struct NamedObservation {
    std::string variable;
    double value = 0.0;
    double time = 0.0;
};

struct WriteResult {
    std::int64_t version = 0;
    double now = 0.0;
    std::vector<bool> replaced;  // per input observation: an existing (variable, time) was overwritten
};

// Single-file SQLite store. Every method is atomic and thread-safe; writes are
// committed with synchronous=FULL before returning.
class Store {
public:
    explicit Store(const std::filesystem::path& file);
    ~Store();
    Store(const Store&) = delete;
    Store& operator=(const Store&) = delete;

    const std::filesystem::path& path() const { return path_; }

    std::optional<std::string> meta(const std::string& key) const;
    void set_meta(const std::string& key, const std::string& value);

    // Patient row plus its observations; false when the id already exists
    // (nothing is written then).
    bool insert_patient(const PatientRecord& record, const std::string& alias, double now, const Vocabulary& vocab);
    std::vector<std::string> patient_ids() const;
    bool has_patient(const std::string& id) const;
    // Observations whose variable is unknown to `vocab` raise VocabularyError.
    std::optional<StoredPatient> patient(const std::string& id, const Vocabulary& vocab) const;

    // Upserts observations (last write wins per (variable, time)), moves `now`
    // forward to the latest time and bumps the version. Cached responses of the
    // patient are dropped in the same transaction.
    WriteResult write_observations(const std::string& id, std::span<const NamedObservation> observations);

    std::optional<StoredPrediction> prediction(const std::string& id) const;
    void put_prediction(const std::string& id, const StoredPrediction& prediction);

    // Cached response bodies, valid only for the version they were computed at.
    std::optional<std::string> cached_response(const std::string& id, std::int64_t version, const std::string& key) const;
    void put_cached_response(const std::string& id, std::int64_t version, const std::string& key,
                             const std::string& body);
    // Drops every cached prediction and response.
    void clear_caches();

    OrderRecord create_order(const std::string& patient_id, std::span<const std::string> variables, double time);
    std::optional<OrderRecord> order(std::int64_t order_id) const;

    enum class FulfillStatus { Ok, NotFound, AlreadyFulfilled };
    struct FulfillResult {
        FulfillStatus status = FulfillStatus::NotFound;
        OrderRecord order;
        WriteResult write;
    };
    // Writes the result observations at `time` and marks the order fulfilled in
    // one transaction.
    FulfillResult fulfill_order(std::int64_t order_id, const std::map<std::string, double>& values, double time);

private:
    std::filesystem::path path_;
    sqlite3* db_ = nullptr;
    mutable std::mutex mutex_;

    WriteResult write_observations_locked(const std::string& id, std::span<const NamedObservation> observations);
    std::optional<OrderRecord> order_locked(std::int64_t order_id) const;
};

}  // namespace sepsislab
