#include "sepsislab/service.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "sepsislab/checkpoint.hpp"
#include "sepsislab/cohort_io.hpp"
#include "sepsislab/recommender.hpp"
#include "sepsislab/rng.hpp"

namespace sepsislab {

using nlohmann::json;

RiskColor risk_color(double p, double th_s, double green_cutoff) {
    if (p >= th_s) return RiskColor::Red;
    if (p < green_cutoff) return RiskColor::Green;
    return RiskColor::Yellow;
}

std::string_view to_string(RiskColor color) {
    switch (color) {
        case RiskColor::Green: return "green";
        case RiskColor::Yellow: return "yellow";
        case RiskColor::Red: return "red";
    }
    return "unknown";
}

// ---------------------------------------------------------------- config

void ServiceConfig::validate() const {
    policy.validate();
    if (model_path.empty()) throw ConfigError("service config: model path is required");
    if (data_dir.empty()) throw ConfigError("service config: data_dir is required");
    if (port < 0 || port > 65535) throw ConfigError("service config: port must be in [0, 65535]");
    if (bind_address.empty()) throw ConfigError("service config: bind address is required");
    if (!(green_cutoff > 0.0 && green_cutoff <= policy.th_s))
        throw ConfigError("service config: green cutoff must be in (0, th_s]");
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    if (path.empty() || path.is_absolute() || base.empty()) return path;
    return base / path;
}

template <typename T>
T get_as(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("service config: bad value for '") + key + "': " + e.what());
    }
}

}  // namespace

ServiceConfig ServiceConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw ConfigError("service config must be a JSON object");
    static const std::set<std::string> known = {"model",        "imputation", "vocabulary", "cohort", "data_dir",
                                                "bind_address", "port",       "policy",     "green_cutoff"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ConfigError("service config: unknown key '" + key + "'");
    ServiceConfig c;
    if (j.contains("model")) c.model_path = resolve(base_dir, get_as<std::string>(j, "model"));
    if (j.contains("imputation")) c.imputation_path = resolve(base_dir, get_as<std::string>(j, "imputation"));
    if (j.contains("vocabulary")) c.vocabulary_path = resolve(base_dir, get_as<std::string>(j, "vocabulary"));
    if (j.contains("cohort")) c.cohort_path = resolve(base_dir, get_as<std::string>(j, "cohort"));
    if (j.contains("data_dir")) c.data_dir = resolve(base_dir, get_as<std::string>(j, "data_dir"));
    if (j.contains("bind_address")) c.bind_address = get_as<std::string>(j, "bind_address");
    if (j.contains("port")) c.port = get_as<int>(j, "port");
    if (j.contains("green_cutoff")) c.green_cutoff = get_as<double>(j, "green_cutoff");
    if (j.contains("policy")) {
        const auto& p = j.at("policy");
        if (!p.is_object()) throw ConfigError("service config: policy must be an object");
        static const std::set<std::string> policy_keys = {"th_s",        "th_e", "horizon_hours", "mcs_samples",
                                                          "counterfactual_samples", "seed", "max_timesteps"};
        for (const auto& [key, _] : p.items())
            if (!policy_keys.count(key)) throw ConfigError("service config: unknown policy key '" + key + "'");
        if (p.contains("th_s")) c.policy.th_s = get_as<double>(p, "th_s");
        if (p.contains("th_e")) c.policy.th_e = get_as<double>(p, "th_e");
        if (p.contains("horizon_hours")) c.policy.horizon_hours = get_as<double>(p, "horizon_hours");
        if (p.contains("mcs_samples")) c.policy.mcs_samples = get_as<std::size_t>(p, "mcs_samples");
        if (p.contains("counterfactual_samples"))
            c.policy.counterfactual_samples = get_as<std::size_t>(p, "counterfactual_samples");
        if (p.contains("seed")) c.policy.seed = get_as<std::uint64_t>(p, "seed");
        if (p.contains("max_timesteps")) c.policy.max_timesteps = get_as<std::size_t>(p, "max_timesteps");
    }
    return c;
}

json ServiceConfig::to_json() const {
    return {{"model", model_path.string()},
            {"imputation", imputation_path.string()},
            {"vocabulary", vocabulary_path.string()},
            {"cohort", cohort_path.string()},
            {"data_dir", data_dir.string()},
            {"bind_address", bind_address},
            {"port", port},
            {"green_cutoff", green_cutoff},
            {"policy",
             {{"th_s", policy.th_s},
              {"th_e", policy.th_e},
              {"horizon_hours", policy.horizon_hours},
              {"mcs_samples", policy.mcs_samples},
              {"counterfactual_samples", policy.counterfactual_samples},
              {"seed", policy.seed},
              {"max_timesteps", policy.max_timesteps}}}};
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read service config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("service config " + path.string() + " is not valid JSON: " + e.what());
    }
    return ServiceConfig::from_json(j, path.parent_path());
}

void apply_env_overrides(ServiceConfig& config, const std::function<const char*(const char*)>& getenv_fn) {
    if (const char* port = getenv_fn("SEPSISLAB_PORT"); port && *port) {
        int value = 0;
        const std::string_view s(port);
        const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
        if (ec != std::errc() || end != s.data() + s.size() || value < 0 || value > 65535)
            throw ConfigError("SEPSISLAB_PORT must be an integer in [0, 65535], got '" + std::string(s) + "'");
        config.port = value;
    }
    if (const char* dir = getenv_fn("SEPSISLAB_DATA_DIR"); dir && *dir) config.data_dir = dir;
}

// ---------------------------------------------------------------- JSON views

json ApiError::body() const { return {{"code", code_}, {"message", what()}, {"detail", detail_}}; }

json to_json(const UncertainPrediction& p) {
    return {{"p_mean", p.p_mean},       {"p_std", p.p_std},         {"entropy", p.entropy},
            {"band_low", p.band_low},   {"band_high", p.band_high}, {"n_samples", p.n_samples},
            {"seed", p.seed}};
}

json to_json(const OrderRecord& o) {
    json j = {{"order_id", o.order_id},
              {"patient_id", o.patient_id},
              {"variables", o.variables},
              {"order_time", o.order_time},
              {"status", o.fulfilled() ? "fulfilled" : "pending"},
              {"fulfilled_time", nullptr},
              {"values", nullptr}};
    if (o.fulfilled()) {
        j["fulfilled_time"] = *o.fulfilled_time;
        j["values"] = o.values;
    }
    return j;
}

namespace {

json to_json(const RiskPoint& r) {
    return {{"time", r.time},         {"p_mean", r.p_mean},       {"p_std", r.p_std},
            {"band_low", r.band_low}, {"band_high", r.band_high}, {"entropy", r.entropy}};
}

json points_json(const std::vector<RiskPoint>& points) {
    json a = json::array();
    for (const auto& p : points) a.push_back(to_json(p));
    return a;
}

json prediction_json(const StoredPrediction& p, double th_s, double green_cutoff) {
    json j = to_json(p.prediction);
    j["time"] = p.time;
    j["version"] = p.version;
    j["color"] = to_string(risk_color(p.prediction.p_mean, th_s, green_cutoff));
    return j;
}

// Stable digest of everything a cached response depends on.
std::string fingerprint(const ModelParams& params, const ImputationModel& imputation, const Vocabulary& vocab,
                        const ServiceConfig& config) {
    std::uint64_t h = fnv1a64(vocab.hash());
    auto add = [&h](const double* data, Eigen::Index n) {
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(data), static_cast<std::size_t>(n) * sizeof(double)),
                    h);
    };
    for (const auto& t : params.tensors()) add(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
    add(imputation.mean.data(), imputation.mean.size());
    add(imputation.covariance.data(), imputation.covariance.size());
    json j = config.to_json();
    h = fnv1a64(j["policy"].dump(), h);
    h = fnv1a64(json(config.green_cutoff).dump(), h);
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

json parse_body(const std::string& body) {
    try {
        auto j = json::parse(body);
        if (!j.is_object()) throw ApiError(422, "invalid_request", "request body must be a JSON object");
        return j;
    } catch (const json::out_of_range& e) {
        throw ApiError(422, "invalid_value", "request body holds a number outside the double range", e.what());
    } catch (const json::parse_error& e) {
        throw ApiError(422, "invalid_request", "request body is not valid JSON", e.what());
    }
}

double finite_number(const json& body, const char* key, const char* code) {
    if (!body.contains(key)) throw ApiError(422, "invalid_request", std::string("missing field '") + key + "'");
    const auto& v = body.at(key);
    if (!v.is_number() || !std::isfinite(v.get<double>()))
        throw ApiError(422, code, std::string("'") + key + "' must be a finite number", {{"field", key}});
    return v.get<double>();
}

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : path) {
        if (c == '/') {
            if (!cur.empty()) parts.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) parts.push_back(std::move(cur));
    return parts;
}

std::int64_t parse_order_id(const std::string& s) {
    std::int64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || v <= 0)
        throw ApiError(404, "order_not_found", "no order with id '" + s + "'", {{"order_id", s}});
    return v;
}

}  // namespace

std::string synthetic_alias(std::string_view patient_id) {
    static constexpr std::array<const char*, 16> first = {"Amber", "Birch", "Cedar", "Dune",  "Ember", "Fern",
                                                          "Garnet", "Hazel", "Indigo", "Jade", "Kestrel", "Linden",
                                                          "Maple", "Nova",  "Onyx",   "Pine"};
    static constexpr std::array<const char*, 16> second = {"Harbor", "Ridge", "Meadow", "Brook", "Summit", "Grove",
                                                           "Canyon", "Delta", "Field",  "Glen",  "Hollow", "Isle",
                                                           "Knoll",  "Lake",  "Marsh",  "Vale"};
    const std::uint64_t h = fnv1a64(patient_id);
    return std::string(first[h % first.size()]) + " " + second[(h >> 8) % second.size()] + " " +
           std::to_string((h >> 16) % 90 + 10);
}

// ---------------------------------------------------------------- service

Service::Service(ServiceConfig config, ModelParams params, ImputationModel imputation, Vocabulary vocab)
    : config_(std::move(config)),
      params_(std::move(params)),
      imputation_(std::move(imputation)),
      vocab_(std::move(vocab)) {
    config_.policy.validate();
    if (!(config_.green_cutoff > 0.0 && config_.green_cutoff <= config_.policy.th_s))
        throw ConfigError("service config: green cutoff must be in (0, th_s]");
    check_compatible(params_, imputation_, vocab_);
    store_ = std::make_unique<Store>(config_.store_file());
    const auto stored_vocab = store_->meta("vocabulary_hash");
    if (stored_vocab && *stored_vocab != vocab_.hash())
        throw ConfigError("store " + config_.store_file().string() + " was created with a different vocabulary");
    if (!stored_vocab) store_->set_meta("vocabulary_hash", vocab_.hash());
    const auto fp = fingerprint(params_, imputation_, vocab_, config_);
    if (store_->meta("fingerprint") != fp) {
        store_->clear_caches();
        store_->set_meta("fingerprint", fp);
    }
}

std::mutex& Service::patient_lock(const std::string& id) {
    std::lock_guard lock(locks_mutex_);
    auto& m = patient_locks_[id];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
}

StoredPatient Service::require_patient(const std::string& id) {
    auto p = store_->patient(id, vocab_);
    if (!p) throw ApiError(404, "patient_not_found", "no patient with id '" + id + "'", {{"patient_id", id}});
    return std::move(*p);
}

VariableId Service::require_variable(const std::string& name) {
    const auto v = vocab_.find(name);
    if (!v) throw ApiError(422, "unknown_variable", "unknown variable '" + name + "'", {{"variable", name}});
    return *v;
}

StoredPrediction Service::recompute(const StoredPatient& p) {
    StoredPrediction out;
    out.version = p.version;
    out.time = p.now;
    out.prediction = predict_uncertain(params_, imputation_, p.record, p.now, config_.policy, vocab_);
    store_->put_prediction(p.record.patient_id, out);
    ++recomputes_;
    return out;
}

StoredPrediction Service::current_prediction(const std::string& id) {
    std::lock_guard lock(patient_lock(id));
    const auto p = require_patient(id);
    const auto cached = store_->prediction(id);
    if (cached && cached->version == p.version) return *cached;
    return recompute(p);
}

std::size_t Service::import_cohort(const Cohort& cohort) {
    if (!(cohort.vocabulary == vocab_)) throw ConfigError("cohort vocabulary differs from the service vocabulary");
    std::size_t added = 0;
    for (const auto& rec : cohort.patients) {
        PatientRecord r = rec;
        double now = 0.0;
        if (r.label) {
            now = r.label->time;
            std::erase_if(r.observations, [now](const Observation& o) { return o.time > now; });
        } else if (!r.observations.empty()) {
            now = r.observations.back().time;
        }
        r.label.reset();
        now = std::max(now, kAdmissionTime);
        if (!store_->insert_patient(r, synthetic_alias(r.patient_id), now, vocab_)) continue;
        ++added;
        std::lock_guard lock(patient_lock(r.patient_id));
        recompute(require_patient(r.patient_id));
    }
    return added;
}

json Service::list_patients() {
    json out = json::array();
    std::vector<std::pair<StoredPrediction, StoredPatient>> rows;
    for (const auto& id : store_->patient_ids()) {
        auto pred = current_prediction(id);
        auto p = store_->patient(id, vocab_);
        if (p) rows.emplace_back(std::move(pred), std::move(*p));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (a.first.prediction.p_mean != b.first.prediction.p_mean)
            return a.first.prediction.p_mean > b.first.prediction.p_mean;
        return a.second.record.patient_id < b.second.record.patient_id;
    });
    for (const auto& [pred, p] : rows)
        out.push_back({{"patient_id", p.record.patient_id},
                       {"alias", p.alias},
                       {"p_mean", pred.prediction.p_mean},
                       {"entropy", pred.prediction.entropy},
                       {"color", to_string(risk_color(pred.prediction.p_mean, config_.policy.th_s,
                                                      config_.green_cutoff))},
                       {"admitted_hours", p.now}});
    return out;
}

json Service::patient(const std::string& id) {
    const auto pred = current_prediction(id);
    const auto p = require_patient(id);
    json obs = json::array();
    for (const auto& o : p.record.observations)
        obs.push_back({{"variable", vocab_[o.variable].name}, {"value", o.value}, {"time", o.time}});
    const auto snap = snapshot_at(p.record, p.now, vocab_);
    json missing = json::array();
    for (auto v : snap.missing()) missing.push_back(vocab_[v].name);
    return {{"patient_id", id},
            {"alias", p.alias},
            {"admitted_hours", p.now},
            {"version", p.version},
            {"static", {{"age", p.record.static_info.age}, {"sex", p.record.static_info.sex}}},
            {"observations", obs},
            {"missing", missing},
            {"prediction", prediction_json(pred, config_.policy.th_s, config_.green_cutoff)}};
}

json Service::trajectory(const std::string& id, const std::optional<std::string>& hypothetical) {
    std::vector<VariableId> hyp;
    if (hypothetical) {
        std::stringstream ss(*hypothetical);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item.erase(0, item.find_first_not_of(' '));
            item.erase(item.find_last_not_of(' ') + 1);
            if (item.empty()) continue;
            const auto v = require_variable(item);
            if (std::find(hyp.begin(), hyp.end(), v) != hyp.end())
                throw ApiError(422, "invalid_request", "variable '" + item + "' is listed twice", {{"variable", item}});
            hyp.push_back(v);
        }
    }
    std::sort(hyp.begin(), hyp.end());

    std::lock_guard lock(patient_lock(id));
    const auto p = require_patient(id);
    const auto snap = snapshot_at(p.record, p.now, vocab_);
    for (auto v : hyp)
        if (snap.is_observed(v))
            throw ApiError(422, "already_observed", "variable '" + vocab_[v].name + "' is already observed",
                           {{"variable", vocab_[v].name}});

    std::string key = "trajectory";
    for (auto v : hyp) key += ":" + vocab_[v].name;
    if (auto cached = store_->cached_response(id, p.version, key)) return json::parse(*cached);

    const auto traj = project_trajectory(params_, imputation_, p.record, p.now, config_.policy, vocab_, hyp);
    json names = json::array();
    for (auto v : hyp) names.push_back(vocab_[v].name);
    json out = {{"patient_id", id},
                {"now", traj.now},
                {"seed", traj.seed},
                {"version", p.version},
                {"hypothetical", names},
                {"history", points_json(traj.history)},
                {"projection", points_json(traj.projection)}};
    if (traj.counterfactual) out["counterfactual"] = points_json(*traj.counterfactual);
    store_->put_cached_response(id, p.version, key, out.dump());
    return out;
}

json Service::recommendations(const std::string& id, const std::optional<std::string>& top) {
    std::size_t k = kDefaultTopK;
    if (top) {
        std::size_t v = 0;
        const auto [end, ec] = std::from_chars(top->data(), top->data() + top->size(), v);
        if (ec != std::errc() || end != top->data() + top->size() || v == 0)
            throw ApiError(422, "invalid_parameter", "'top' must be a positive integer", {{"top", *top}});
        k = v;
    }

    json full;
    {
        std::lock_guard lock(patient_lock(id));
        const auto p = require_patient(id);
        if (auto cached = store_->cached_response(id, p.version, "recommendations")) {
            full = json::parse(*cached);
        } else {
            const auto snap = snapshot_at(p.record, p.now, vocab_);
            std::vector<VariableId> candidates;
            for (auto v : snap.missing())
                if (vocab_[v].kind == VariableKind::Lab) candidates.push_back(v);
            full = {{"patient_id", id}, {"time", p.now}, {"version", p.version}};
            json items = json::array();
            if (candidates.empty()) {
                const auto cached_pred = store_->prediction(id);
                const auto pred =
                    cached_pred && cached_pred->version == p.version ? *cached_pred : recompute(p);
                full["u_before"] = pred.prediction.entropy;
                full["seed"] = pred.prediction.seed;
                full["reason"] = "fully_observed";
            } else {
                const auto r = recommend(params_, imputation_, p.record, p.now, config_.policy, vocab_, candidates);
                full["u_before"] = r.u_before;
                full["seed"] = r.seed;
                std::size_t rank = 0;
                for (const auto& e : r.ranked) {
                    const auto v = e.variables.front();
                    items.push_back({{"rank", ++rank},
                                     {"variable", vocab_[v].name},
                                     {"unit", vocab_[v].unit},
                                     {"u_before", e.u_before},
                                     {"u_after", e.u_after},
                                     {"u_after_se", e.u_after_se},
                                     {"reduction", e.reduction},
                                     {"reduction_fraction", e.reduction_fraction()},
                                     {"k", e.k},
                                     {"p_mean", e.p_mean},
                                     {"band_low", e.band_low},
                                     {"band_high", e.band_high}});
                }
            }
            full["items"] = items;
            store_->put_cached_response(id, p.version, "recommendations", full.dump());
        }
    }
    auto& items = full["items"];
    if (items.size() > k) items.erase(items.begin() + static_cast<std::ptrdiff_t>(k), items.end());
    full["top"] = k;
    return full;
}

json Service::post_observation(const std::string& id, const json& body) {
    if (!body.contains("variable") || !body.at("variable").is_string())
        throw ApiError(422, "invalid_request", "'variable' must be a string");
    const auto name = body.at("variable").get<std::string>();
    const auto var = require_variable(name);
    const double value = finite_number(body, "value", "invalid_value");

    std::lock_guard lock(patient_lock(id));
    const auto p = require_patient(id);
    const double time = body.contains("time") ? finite_number(body, "time", "invalid_request") : p.now;
    if (time < kAdmissionTime)
        throw ApiError(409, "before_admission", "observation time precedes admission",
                       {{"time", time}, {"admitted_at", kAdmissionTime}});

    const auto cached = store_->prediction(id);
    const auto before = cached && cached->version == p.version ? *cached : recompute(p);
    const NamedObservation obs{vocab_[var].name, value, time};
    const auto w = store_->write_observations(id, std::span(&obs, 1));
    const auto after = recompute(require_patient(id));
    return {{"patient_id", id},
            {"variable", vocab_[var].name},
            {"value", value},
            {"time", time},
            {"replaced", w.replaced.front()},
            {"version", w.version},
            {"entropy_before", before.prediction.entropy},
            {"entropy_after", after.prediction.entropy},
            {"before", prediction_json(before, config_.policy.th_s, config_.green_cutoff)},
            {"after", prediction_json(after, config_.policy.th_s, config_.green_cutoff)}};
}

json Service::create_order(const json& body) {
    if (!body.contains("patient_id") || !body.at("patient_id").is_string())
        throw ApiError(422, "invalid_request", "'patient_id' must be a string");
    if (!body.contains("variables") || !body.at("variables").is_array() || body.at("variables").empty())
        throw ApiError(422, "invalid_request", "'variables' must be a non-empty array of variable names");
    std::vector<std::string> names;
    for (const auto& v : body.at("variables")) {
        if (!v.is_string()) throw ApiError(422, "invalid_request", "'variables' must hold strings");
        const auto name = vocab_[require_variable(v.get<std::string>())].name;
        if (std::find(names.begin(), names.end(), name) != names.end())
            throw ApiError(422, "invalid_request", "variable '" + name + "' is listed twice", {{"variable", name}});
        names.push_back(name);
    }
    const auto id = body.at("patient_id").get<std::string>();
    std::lock_guard lock(patient_lock(id));
    const auto p = require_patient(id);
    return to_json(store_->create_order(id, names, p.now));
}

json Service::order(std::int64_t order_id) {
    const auto o = store_->order(order_id);
    if (!o) throw ApiError(404, "order_not_found", "no order with id " + std::to_string(order_id),
                           {{"order_id", order_id}});
    return to_json(*o);
}

json Service::fulfill_order(std::int64_t order_id, const json& body) {
    const auto o = store_->order(order_id);
    if (!o) throw ApiError(404, "order_not_found", "no order with id " + std::to_string(order_id),
                           {{"order_id", order_id}});
    std::lock_guard lock(patient_lock(o->patient_id));
    const auto current = store_->order(order_id);
    if (current->fulfilled())
        throw ApiError(409, "already_fulfilled", "order " + std::to_string(order_id) + " is already fulfilled",
                       {{"order_id", order_id}, {"fulfilled_time", *current->fulfilled_time}});

    if (!body.contains("values") || !body.at("values").is_object() || body.at("values").empty())
        throw ApiError(422, "invalid_request", "'values' must be a non-empty object of variable name to value");
    std::map<std::string, double> values;
    for (const auto& [name, v] : body.at("values").items()) {
        if (std::find(o->variables.begin(), o->variables.end(), name) == o->variables.end())
            throw ApiError(422, "unexpected_variable", "variable '" + name + "' was not ordered", {{"variable", name}});
        if (!v.is_number() || !std::isfinite(v.get<double>()))
            throw ApiError(422, "invalid_value", "value for '" + name + "' must be a finite number",
                           {{"variable", name}});
        values[name] = v.get<double>();
    }
    json missing = json::array();
    for (const auto& name : o->variables)
        if (!values.count(name)) missing.push_back(name);
    if (!missing.empty())
        throw ApiError(422, "incomplete_results", "every ordered variable needs a value", {{"missing", missing}});

    const auto p = require_patient(o->patient_id);
    const double time = body.contains("time") ? finite_number(body, "time", "invalid_request")
                                              : std::max(o->order_time, p.now);
    if (time < o->order_time)
        throw ApiError(409, "before_order", "fulfillment time precedes the order time",
                       {{"time", time}, {"order_time", o->order_time}});

    const auto cached = store_->prediction(o->patient_id);
    const auto before = cached && cached->version == p.version ? *cached : recompute(p);
    const auto r = store_->fulfill_order(order_id, values, time);
    if (r.status == Store::FulfillStatus::AlreadyFulfilled)
        throw ApiError(409, "already_fulfilled", "order " + std::to_string(order_id) + " is already fulfilled",
                       {{"order_id", order_id}});
    const auto after = recompute(require_patient(o->patient_id));
    return {{"order", to_json(r.order)},
            {"version", r.write.version},
            {"entropy_before", before.prediction.entropy},
            {"entropy_after", after.prediction.entropy},
            {"before", prediction_json(before, config_.policy.th_s, config_.green_cutoff)},
            {"after", prediction_json(after, config_.policy.th_s, config_.green_cutoff)}};
}

ApiResponse Service::handle(const ApiRequest& req) {
    auto query = [&req](const char* key) -> std::optional<std::string> {
        const auto it = req.query.find(key);
        if (it == req.query.end()) return std::nullopt;
        return it->second;
    };
    try {
        const auto parts = split_path(req.path);
        const auto n = parts.size();
        auto allow = [&req](const char* method) {
            if (req.method != method)
                throw ApiError(405, "method_not_allowed", "use " + std::string(method) + " for " + req.path,
                               {{"method", req.method}});
        };
        if (n >= 2 && parts[0] == "api") {
            if (parts[1] == "health" && n == 2) {
                allow("GET");
                return {200, json{{"status", "ok"}}.dump()};
            }
            if (parts[1] == "patients") {
                if (n == 2) {
                    allow("GET");
                    return {200, list_patients().dump()};
                }
                if (n == 3) {
                    allow("GET");
                    return {200, patient(parts[2]).dump()};
                }
                if (n == 4 && parts[3] == "trajectory") {
                    allow("GET");
                    return {200, trajectory(parts[2], query("hypothetical")).dump()};
                }
                if (n == 4 && parts[3] == "recommendations") {
                    allow("GET");
                    return {200, recommendations(parts[2], query("top")).dump()};
                }
                if (n == 4 && parts[3] == "observations") {
                    allow("POST");
                    return {200, post_observation(parts[2], parse_body(req.body)).dump()};
                }
            }
            if (parts[1] == "orders") {
                if (n == 2) {
                    allow("POST");
                    return {201, create_order(parse_body(req.body)).dump()};
                }
                if (n == 3) {
                    allow("GET");
                    return {200, order(parse_order_id(parts[2])).dump()};
                }
                if (n == 4 && parts[3] == "fulfill") {
                    allow("POST");
                    return {200, fulfill_order(parse_order_id(parts[2]), parse_body(req.body)).dump()};
                }
            }
        }
        throw ApiError(404, "not_found", "no route for " + req.path, {{"path", req.path}});
    } catch (const ApiError& e) {
        return {e.status(), e.body().dump()};
    } catch (const std::exception& e) {
        return {500, ApiError(500, "internal_error", e.what()).body().dump()};
    }
}

std::unique_ptr<Service> open_service(const ServiceConfig& config, std::size_t* imported) {
    Vocabulary vocab = Vocabulary::standard();
    if (!config.vocabulary_path.empty()) {
        vocab = load_vocabulary(config.vocabulary_path);
    } else if (std::filesystem::exists(vocabulary_path_for(config.model_path))) {
        vocab = load_vocabulary(vocabulary_path_for(config.model_path));
    }
    auto params = load_checkpoint(config.model_path, vocab);
    const auto imputation_file =
        config.imputation_path.empty() ? imputation_path_for(config.model_path) : config.imputation_path;
    auto imputation = load_imputation(imputation_file, vocab);
    auto service = std::make_unique<Service>(config, std::move(params), std::move(imputation), vocab);
    std::size_t added = 0;
    if (!config.cohort_path.empty()) added = service->import_cohort(ingest_cohort(config.cohort_path, vocab));
    if (imported) *imported = added;
    return service;
}

}  // namespace sepsislab
