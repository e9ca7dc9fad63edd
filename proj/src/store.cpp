#include "sepsislab/store.hpp"

#include <algorithm>
#include <utility>

#include <nlohmann/json.hpp>
#include <sqlite3.h>

#include "sepsislab/errors.hpp"

namespace sepsislab {

namespace {

class StoreError : public Error {
public:
    using Error::Error;
};

[[noreturn]] void fail(sqlite3* db, const std::string& what) {
    throw StoreError(what + ": " + (db ? sqlite3_errmsg(db) : "out of memory"));
}

void exec(sqlite3* db, const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
        std::string msg = err ? err : "unknown error";
        sqlite3_free(err);
        throw StoreError(std::string("sqlite: ") + msg);
    }
}

class Statement {
public:
    Statement(sqlite3* db, const char* sql) : db_(db) {
        if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK) fail(db, "prepare");
    }
    ~Statement() { sqlite3_finalize(stmt_); }
    Statement(const Statement&) = delete;
    Statement& operator=(const Statement&) = delete;

    Statement& bind(int i, const std::string& v) {
        check(sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
        return *this;
    }
    Statement& bind(int i, double v) {
        check(sqlite3_bind_double(stmt_, i, v));
        return *this;
    }
    Statement& bind(int i, std::int64_t v) {
        check(sqlite3_bind_int64(stmt_, i, v));
        return *this;
    }
    Statement& bind_null(int i) {
        check(sqlite3_bind_null(stmt_, i));
        return *this;
    }

    // True while a row is available.
    bool step() {
        const int rc = sqlite3_step(stmt_);
        if (rc == SQLITE_ROW) return true;
        if (rc == SQLITE_DONE) return false;
        fail(db_, "step");
    }
    void run() {
        while (step()) {
        }
    }

    std::string text(int col) const {
        const auto* p = sqlite3_column_text(stmt_, col);
        return p ? std::string(reinterpret_cast<const char*>(p), static_cast<std::size_t>(sqlite3_column_bytes(stmt_, col)))
                 : std::string();
    }
    double real(int col) const { return sqlite3_column_double(stmt_, col); }
    std::int64_t integer(int col) const { return sqlite3_column_int64(stmt_, col); }
    bool is_null(int col) const { return sqlite3_column_type(stmt_, col) == SQLITE_NULL; }

private:
    void check(int rc) const {
        if (rc != SQLITE_OK) fail(db_, "bind");
    }

    sqlite3* db_;
    sqlite3_stmt* stmt_ = nullptr;
};

// Rolls back unless commit() was reached.
class Transaction {
public:
    explicit Transaction(sqlite3* db) : db_(db) { exec(db_, "BEGIN IMMEDIATE"); }
    ~Transaction() {
        if (!done_) sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
    }
    void commit() {
        exec(db_, "COMMIT");
        done_ = true;
    }

private:
    sqlite3* db_;
    bool done_ = false;
};

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS meta(
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS patients(
    patient_id TEXT PRIMARY KEY,
    alias TEXT NOT NULL,
    age REAL NOT NULL,
    sex TEXT NOT NULL,
    flags TEXT NOT NULL,
    now_hours REAL NOT NULL,
    version INTEGER NOT NULL);
CREATE TABLE IF NOT EXISTS observations(
    patient_id TEXT NOT NULL REFERENCES patients(patient_id),
    variable TEXT NOT NULL,
    time_hours REAL NOT NULL,
    value REAL NOT NULL,
    PRIMARY KEY(patient_id, variable, time_hours));
CREATE TABLE IF NOT EXISTS predictions(
    patient_id TEXT PRIMARY KEY REFERENCES patients(patient_id),
    version INTEGER NOT NULL,
    time_hours REAL NOT NULL,
    p_mean REAL NOT NULL,
    p_std REAL NOT NULL,
    entropy REAL NOT NULL,
    band_low REAL NOT NULL,
    band_high REAL NOT NULL,
    n_samples INTEGER NOT NULL,
    seed INTEGER NOT NULL);
CREATE TABLE IF NOT EXISTS responses(
    patient_id TEXT NOT NULL,
    cache_key TEXT NOT NULL,
    version INTEGER NOT NULL,
    body TEXT NOT NULL,
    PRIMARY KEY(patient_id, cache_key));
CREATE TABLE IF NOT EXISTS orders(
    order_id INTEGER PRIMARY KEY AUTOINCREMENT,
    patient_id TEXT NOT NULL REFERENCES patients(patient_id),
    variables TEXT NOT NULL,
    order_time REAL NOT NULL,
    fulfilled_time REAL,
    result TEXT);
)sql";

std::string flags_to_text(const std::vector<std::uint8_t>& flags) {
    std::string s;
    for (auto f : flags) s.push_back(f ? '1' : '0');
    return s;
}

std::vector<std::uint8_t> flags_from_text(const std::string& s) {
    std::vector<std::uint8_t> flags;
    for (char c : s) flags.push_back(c == '1' ? 1 : 0);
    return flags;
}

}  // namespace

Store::Store(const std::filesystem::path& file) : path_(file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    if (sqlite3_open_v2(file.string().c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                        nullptr) != SQLITE_OK) {
        std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
        sqlite3_close(db_);
        throw StoreError("cannot open store " + file.string() + ": " + msg);
    }
    sqlite3_busy_timeout(db_, 5000);
    try {
        exec(db_, "PRAGMA journal_mode=WAL");
        exec(db_, "PRAGMA synchronous=FULL");
        exec(db_, "PRAGMA foreign_keys=ON");
        exec(db_, kSchema);
    } catch (...) {
        sqlite3_close(db_);
        throw;
    }
}

Store::~Store() { sqlite3_close(db_); }

std::optional<std::string> Store::meta(const std::string& key) const {
    std::lock_guard lock(mutex_);
    Statement s(db_, "SELECT value FROM meta WHERE key = ?");
    s.bind(1, key);
    if (!s.step()) return std::nullopt;
    return s.text(0);
}

void Store::set_meta(const std::string& key, const std::string& value) {
    std::lock_guard lock(mutex_);
    Statement s(db_, "INSERT INTO meta(key, value) VALUES(?, ?) ON CONFLICT(key) DO UPDATE SET value = excluded.value");
    s.bind(1, key).bind(2, value).run();
}

bool Store::insert_patient(const PatientRecord& record, const std::string& alias, double now,
                           const Vocabulary& vocab) {
    std::lock_guard lock(mutex_);
    Transaction tx(db_);
    {
        Statement s(db_, "SELECT 1 FROM patients WHERE patient_id = ?");
        s.bind(1, record.patient_id);
        if (s.step()) return false;
    }
    Statement ins(db_,
                  "INSERT INTO patients(patient_id, alias, age, sex, flags, now_hours, version) "
                  "VALUES(?, ?, ?, ?, ?, ?, 0)");
    ins.bind(1, record.patient_id)
        .bind(2, alias)
        .bind(3, record.static_info.age)
        .bind(4, record.static_info.sex)
        .bind(5, flags_to_text(record.static_info.history_flags))
        .bind(6, now)
        .run();
    for (const auto& o : record.observations) {
        Statement u(db_,
                    "INSERT INTO observations(patient_id, variable, time_hours, value) VALUES(?, ?, ?, ?) "
                    "ON CONFLICT(patient_id, variable, time_hours) DO UPDATE SET value = excluded.value");
        u.bind(1, record.patient_id).bind(2, vocab[o.variable].name).bind(3, o.time).bind(4, o.value).run();
    }
    tx.commit();
    return true;
}

std::vector<std::string> Store::patient_ids() const {
    std::lock_guard lock(mutex_);
    Statement s(db_, "SELECT patient_id FROM patients ORDER BY patient_id");
    std::vector<std::string> ids;
    while (s.step()) ids.push_back(s.text(0));
    return ids;
}

bool Store::has_patient(const std::string& id) const {
    std::lock_guard lock(mutex_);
    Statement s(db_, "SELECT 1 FROM patients WHERE patient_id = ?");
    s.bind(1, id);
    return s.step();
}

std::optional<StoredPatient> Store::patient(const std::string& id, const Vocabulary& vocab) const {
    std::lock_guard lock(mutex_);
    StoredPatient p;
    {
        Statement s(db_, "SELECT alias, age, sex, flags, now_hours, version FROM patients WHERE patient_id = ?");
        s.bind(1, id);
        if (!s.step()) return std::nullopt;
        p.record.patient_id = id;
        p.alias = s.text(0);
        p.record.static_info = {s.real(1), s.text(2), flags_from_text(s.text(3))};
        p.now = s.real(4);
        p.version = s.integer(5);
    }
    Statement s(db_, "SELECT variable, time_hours, value FROM observations WHERE patient_id = ?");
    s.bind(1, id);
    while (s.step()) p.record.observations.push_back({vocab.id_of(s.text(0)), s.real(2), s.real(1)});
    p.record.sort_observations();
    return p;
}

WriteResult Store::write_observations_locked(const std::string& id, std::span<const NamedObservation> observations) {
    WriteResult out;
    double now = 0.0;
    {
        Statement s(db_, "SELECT now_hours, version FROM patients WHERE patient_id = ?");
        s.bind(1, id);
        if (!s.step()) throw PreconditionError("unknown patient " + id);
        now = s.real(0);
        out.version = s.integer(1);
    }
    for (const auto& o : observations) {
        {
            Statement e(db_, "SELECT 1 FROM observations WHERE patient_id = ? AND variable = ? AND time_hours = ?");
            e.bind(1, id).bind(2, o.variable).bind(3, o.time);
            out.replaced.push_back(e.step());
        }
        Statement u(db_,
                    "INSERT INTO observations(patient_id, variable, time_hours, value) VALUES(?, ?, ?, ?) "
                    "ON CONFLICT(patient_id, variable, time_hours) DO UPDATE SET value = excluded.value");
        u.bind(1, id).bind(2, o.variable).bind(3, o.time).bind(4, o.value).run();
        now = std::max(now, o.time);
    }
    ++out.version;
    out.now = now;
    Statement upd(db_, "UPDATE patients SET now_hours = ?, version = ? WHERE patient_id = ?");
    upd.bind(1, now).bind(2, out.version).bind(3, id).run();
    Statement drop(db_, "DELETE FROM responses WHERE patient_id = ?");
    drop.bind(1, id).run();
    return out;
}

WriteResult Store::write_observations(const std::string& id, std::span<const NamedObservation> observations) {
    std::lock_guard lock(mutex_);
    Transaction tx(db_);
    auto out = write_observations_locked(id, observations);
    tx.commit();
    return out;
}

std::optional<StoredPrediction> Store::prediction(const std::string& id) const {
    std::lock_guard lock(mutex_);
    Statement s(db_,
                "SELECT version, time_hours, p_mean, p_std, entropy, band_low, band_high, n_samples, seed "
                "FROM predictions WHERE patient_id = ?");
    s.bind(1, id);
    if (!s.step()) return std::nullopt;
    StoredPrediction p;
    p.version = s.integer(0);
    p.time = s.real(1);
    p.prediction.p_mean = s.real(2);
    p.prediction.p_std = s.real(3);
    p.prediction.entropy = s.real(4);
    p.prediction.band_low = s.real(5);
    p.prediction.band_high = s.real(6);
    p.prediction.n_samples = static_cast<std::size_t>(s.integer(7));
    p.prediction.seed = static_cast<std::uint64_t>(s.integer(8));
    return p;
}

void Store::put_prediction(const std::string& id, const StoredPrediction& p) {
    std::lock_guard lock(mutex_);
    Statement s(db_,
                "INSERT INTO predictions(patient_id, version, time_hours, p_mean, p_std, entropy, band_low, band_high, "
                "n_samples, seed) VALUES(?, ?, ?, ?, ?, ?, ?, ?, ?, ?) ON CONFLICT(patient_id) DO UPDATE SET "
                "version = excluded.version, time_hours = excluded.time_hours, p_mean = excluded.p_mean, "
                "p_std = excluded.p_std, entropy = excluded.entropy, band_low = excluded.band_low, "
                "band_high = excluded.band_high, n_samples = excluded.n_samples, seed = excluded.seed");
    s.bind(1, id)
        .bind(2, p.version)
        .bind(3, p.time)
        .bind(4, p.prediction.p_mean)
        .bind(5, p.prediction.p_std)
        .bind(6, p.prediction.entropy)
        .bind(7, p.prediction.band_low)
        .bind(8, p.prediction.band_high)
        .bind(9, static_cast<std::int64_t>(p.prediction.n_samples))
        .bind(10, static_cast<std::int64_t>(p.prediction.seed))
        .run();
}

std::optional<std::string> Store::cached_response(const std::string& id, std::int64_t version,
                                                  const std::string& key) const {
    std::lock_guard lock(mutex_);
    Statement s(db_, "SELECT body FROM responses WHERE patient_id = ? AND cache_key = ? AND version = ?");
    s.bind(1, id).bind(2, key).bind(3, version);
    if (!s.step()) return std::nullopt;
    return s.text(0);
}

void Store::put_cached_response(const std::string& id, std::int64_t version, const std::string& key,
                                const std::string& body) {
    std::lock_guard lock(mutex_);
    Statement s(db_,
                "INSERT INTO responses(patient_id, cache_key, version, body) VALUES(?, ?, ?, ?) "
                "ON CONFLICT(patient_id, cache_key) DO UPDATE SET version = excluded.version, body = excluded.body");
    s.bind(1, id).bind(2, key).bind(3, version).bind(4, body).run();
}

void Store::clear_caches() {
    std::lock_guard lock(mutex_);
    Transaction tx(db_);
    exec(db_, "DELETE FROM predictions");
    exec(db_, "DELETE FROM responses");
    tx.commit();
}

OrderRecord Store::create_order(const std::string& patient_id, std::span<const std::string> variables, double time) {
    std::lock_guard lock(mutex_);
    Statement s(db_, "INSERT INTO orders(patient_id, variables, order_time) VALUES(?, ?, ?)");
    const nlohmann::json vars(std::vector<std::string>(variables.begin(), variables.end()));
    s.bind(1, patient_id).bind(2, vars.dump()).bind(3, time).run();
    OrderRecord o;
    o.order_id = sqlite3_last_insert_rowid(db_);
    o.patient_id = patient_id;
    o.variables.assign(variables.begin(), variables.end());
    o.order_time = time;
    return o;
}

std::optional<OrderRecord> Store::order_locked(std::int64_t order_id) const {
    Statement s(db_, "SELECT patient_id, variables, order_time, fulfilled_time, result FROM orders WHERE order_id = ?");
    s.bind(1, order_id);
    if (!s.step()) return std::nullopt;
    OrderRecord o;
    o.order_id = order_id;
    o.patient_id = s.text(0);
    o.variables = nlohmann::json::parse(s.text(1)).get<std::vector<std::string>>();
    o.order_time = s.real(2);
    if (!s.is_null(3)) o.fulfilled_time = s.real(3);
    if (!s.is_null(4)) o.values = nlohmann::json::parse(s.text(4)).get<std::map<std::string, double>>();
    return o;
}

std::optional<OrderRecord> Store::order(std::int64_t order_id) const {
    std::lock_guard lock(mutex_);
    return order_locked(order_id);
}

Store::FulfillResult Store::fulfill_order(std::int64_t order_id, const std::map<std::string, double>& values,
                                          double time) {
    std::lock_guard lock(mutex_);
    Transaction tx(db_);
    FulfillResult out;
    auto order = order_locked(order_id);
    if (!order) return out;
    out.order = *order;
    if (order->fulfilled()) {
        out.status = FulfillStatus::AlreadyFulfilled;
        return out;
    }
    if (time < order->order_time) throw PreconditionError("fulfillment time precedes the order time");
    std::vector<NamedObservation> obs;
    for (const auto& [name, value] : values) obs.push_back({name, value, time});
    out.write = write_observations_locked(order->patient_id, obs);
    Statement s(db_, "UPDATE orders SET fulfilled_time = ?, result = ? WHERE order_id = ?");
    s.bind(1, time).bind(2, nlohmann::json(values).dump()).bind(3, order_id).run();
    tx.commit();
    out.order.fulfilled_time = time;
    out.order.values = values;
    out.status = FulfillStatus::Ok;
    return out;
}

}  // namespace sepsislab
