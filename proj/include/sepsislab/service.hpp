#pragma once

#include <atomic>
#include <cstdlib>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "sepsislab/cohort_io.hpp"
#include "sepsislab/errors.hpp"
#include "sepsislab/imputation.hpp"
#include "sepsislab/model.hpp"
#include "sepsislab/store.hpp"
#include "sepsislab/uncertainty.hpp"

namespace httplib {
class Server;
}

namespace sepsislab {

enum class RiskColor { Green, Yellow, Red };

inline constexpr double kGreenCutoff = 0.25;

// Green below `green_cutoff`, Red at or above `th_s`, Yellow in between.
RiskColor risk_color(double p, double th_s, double green_cutoff = kGreenCutoff);
std::string_view to_string(RiskColor color);

struct ServiceConfig {
    std::filesystem::path model_path;
    std::filesystem::path imputation_path;  // empty: next to the checkpoint
    std::filesystem::path vocabulary_path;  // empty: standard vocabulary
    std::filesystem::path cohort_path;      // optional; imported into an empty store
    std::filesystem::path data_dir = "data";
    std::string bind_address = "127.0.0.1";
    int port = 8080;
    PolicyConfig policy;
    double green_cutoff = kGreenCutoff;

    std::filesystem::path store_file() const { return data_dir / "sepsislab.db"; }
    void validate() const;

    // Relative paths resolve against `base_dir`. Unknown keys raise ConfigError.
    static ServiceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    nlohmann::json to_json() const;
};

ServiceConfig load_service_config(const std::filesystem::path& path);

// SEPSISLAB_PORT and SEPSISLAB_DATA_DIR override the file values.
void apply_env_overrides(ServiceConfig& config,
                         const std::function<const char*(const char*)>& getenv_fn = [](const char* name) {
                             return static_cast<const char*>(std::getenv(name));
                         });

// Error carried to the client as {code, message, detail}.
class ApiError : public Error {
public:
    ApiError(int status, std::string code, const std::string& message, nlohmann::json detail = nullptr)
        : Error(message), status_(status), code_(std::move(code)), detail_(std::move(detail)) {}

    int status() const { return status_; }
    const std::string& code() const { return code_; }
    const nlohmann::json& detail() const { return detail_; }
    nlohmann::json body() const;

private:
    int status_;
    std::string code_;
    nlohmann::json detail_;
};

struct ApiRequest {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    std::string body;
};

struct ApiResponse {
    int status = 200;
    std::string body;  // JSON text
};

// Transport-independent API. Model, imputation and vocabulary are immutable
// after construction; writes to one patient are serialized, reads never block
// writers of other patients.
class Service {
public:
    Service(ServiceConfig config, ModelParams params, ImputationModel imputation, Vocabulary vocab);

    const ServiceConfig& config() const { return config_; }
    const Vocabulary& vocabulary() const { return vocab_; }
    Store& store() { return *store_; }

    // Adds patients that are not stored yet, cut at their label time when one
    // exists. Returns the number added.
    std::size_t import_cohort(const Cohort& cohort);

    // Routes one request; never throws.
    ApiResponse handle(const ApiRequest& request);

    nlohmann::json list_patients();
    nlohmann::json patient(const std::string& id);
    nlohmann::json trajectory(const std::string& id, const std::optional<std::string>& hypothetical);
    nlohmann::json recommendations(const std::string& id, const std::optional<std::string>& top);
    nlohmann::json post_observation(const std::string& id, const nlohmann::json& body);
    nlohmann::json create_order(const nlohmann::json& body);
    nlohmann::json order(std::int64_t order_id);
    nlohmann::json fulfill_order(std::int64_t order_id, const nlohmann::json& body);

    // Number of stored-prediction recomputations so far (test probe).
    std::size_t recompute_count() const { return recomputes_.load(); }

private:
    ServiceConfig config_;
    ModelParams params_;
    ImputationModel imputation_;
    Vocabulary vocab_;
    std::unique_ptr<Store> store_;
    std::atomic<std::size_t> recomputes_{0};
    std::mutex locks_mutex_;
    std::map<std::string, std::unique_ptr<std::mutex>> patient_locks_;

    std::mutex& patient_lock(const std::string& id);
    StoredPatient require_patient(const std::string& id);
    StoredPrediction recompute(const StoredPatient& p);
    // Cached prediction for the current version, recomputed when stale.
    StoredPrediction current_prediction(const std::string& id);
    VariableId require_variable(const std::string& name);
};

// Synthetic display name derived from the patient id.
std::string synthetic_alias(std::string_view patient_id);

nlohmann::json to_json(const UncertainPrediction& p);
nlohmann::json to_json(const OrderRecord& o);

// Loads the vocabulary (config, else the checkpoint companion, else the
// standard one), model and imputation named by a validated config, then
// imports the configured cohort. imported receives the number of new patients.
std::unique_ptr<Service> open_service(const ServiceConfig& config, std::size_t* imported = nullptr);

// HTTP front end forwarding every request to Service::handle.
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // Port 0 picks a free port. Returns the bound port; throws ConfigError on failure.
    int bind(const std::string& host, int port);
    // Blocks until stop() is called from another thread.
    void listen();
    void stop();

private:
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace sepsislab
