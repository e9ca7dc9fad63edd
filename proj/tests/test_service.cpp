#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fixtures.hpp"
#include "sepsislab/recommender.hpp"
#include "sepsislab/service.hpp"
#include "test_util.hpp"

// After Eigen: <resolv.h> defines a `_res` macro.
#include <httplib.h>

using namespace sepsislab;
using namespace sepsislab::test;
using nlohmann::json;

namespace {

struct Reply {
    int status;
    json body;
};

Reply call(Service& svc, const std::string& method, const std::string& path,
           std::map<std::string, std::string> query = {}, const std::string& body = "") {
    const auto r = svc.handle({method, path, std::move(query), body});
    return {r.status, json::parse(r.body)};
}

Reply get(Service& svc, const std::string& path, std::map<std::string, std::string> query = {}) {
    return call(svc, "GET", path, std::move(query));
}

Reply post(Service& svc, const std::string& path, const json& body) {
    return call(svc, "POST", path, {}, body.dump());
}

std::string raw_get(Service& svc, const std::string& path, std::map<std::string, std::string> query = {}) {
    return svc.handle({"GET", path, std::move(query), ""}).body;
}

void check_error(const Reply& r, int status, const std::string& code) {
    CHECK(r.status == status);
    CHECK(r.body.at("code") == code);
    CHECK(r.body.contains("message"));
    CHECK(r.body.contains("detail"));
}

ServiceConfig test_config(const std::filesystem::path& dir, std::uint64_t seed = 7) {
    ServiceConfig c;
    c.model_path = "unused.ckpt";
    c.data_dir = dir;
    c.policy.mcs_samples = 20;
    c.policy.counterfactual_samples = 40;
    c.policy.seed = seed;
    return c;
}

// P0..P11 from the separable cohort (even ids positive). P1, P3, P5 and P7
// lose their Lactate; P8 has every variable observed at t = 1.
Cohort service_cohort() {
    Cohort c = separable_cohort(12, 21, 1.0);
    const auto lac = c.vocabulary.id_of("Lactate");
    for (std::size_t i = 0; i < c.patients.size(); ++i) {
        auto& p = c.patients[i];
        p.patient_id = "P" + std::to_string(i);
        if (i % 2 == 1 && i < 8)
            std::erase_if(p.observations, [lac](const Observation& o) { return o.variable == lac; });
    }
    auto& full = c.patients[8];
    full.observations.clear();
    for (std::size_t v = 0; v < c.vocabulary.size(); ++v) {
        const auto id = static_cast<VariableId>(v);
        full.observations.push_back({id, c.vocabulary[id].population_mean, 1.0});
    }
    full.sort_observations();
    std::sort(c.patients.begin(), c.patients.end(),
              [](const auto& a, const auto& b) { return a.patient_id < b.patient_id; });
    return c;
}

std::unique_ptr<Service> make_service(const std::filesystem::path& dir, std::uint64_t seed = 7) {
    const auto& f = lactate_fixture();
    return std::make_unique<Service>(test_config(dir, seed), f.model.params, f.imputation, f.cohort.vocabulary);
}

// The record as the service sees it: cut at the label time, label dropped.
PatientRecord stored_record(const PatientRecord& r) {
    PatientRecord out = r;
    std::erase_if(out.observations, [&](const Observation& o) { return o.time > r.label->time; });
    out.label.reset();
    return out;
}

const PatientRecord& record_of(const Cohort& c, const std::string& id) {
    return *std::find_if(c.patients.begin(), c.patients.end(), [&](const auto& p) { return p.patient_id == id; });
}

}  // namespace

TEST_CASE("risk colors at the boundaries") {
    const double eps = 1e-12;
    CHECK(risk_color(0.25 - eps, 0.5) == RiskColor::Green);
    CHECK(risk_color(0.25, 0.5) == RiskColor::Yellow);
    CHECK(risk_color(0.5 - eps, 0.5) == RiskColor::Yellow);
    CHECK(risk_color(0.5, 0.5) == RiskColor::Red);
    CHECK(risk_color(0.7, 0.5) == RiskColor::Red);
    CHECK(risk_color(0.0, 0.5) == RiskColor::Green);
    CHECK(risk_color(0.3, 0.8) == RiskColor::Yellow);
    CHECK(risk_color(0.8, 0.8) == RiskColor::Red);
    CHECK(to_string(RiskColor::Yellow) == "yellow");
}

TEST_CASE("service configuration") {
    const json j = {{"model", "models/m.ckpt"},
                    {"data_dir", "/var/lib/sl"},
                    {"port", 9000},
                    {"policy", {{"th_s", 0.6}, {"mcs_samples", 50}, {"seed", 3}}}};
    const auto c = ServiceConfig::from_json(j, "/etc/sl");
    CHECK(c.model_path == std::filesystem::path("/etc/sl/models/m.ckpt"));
    CHECK(c.data_dir == std::filesystem::path("/var/lib/sl"));
    CHECK(c.port == 9000);
    CHECK(c.policy.th_s == 0.6);
    CHECK(c.policy.mcs_samples == 50);
    CHECK(c.policy.seed == 3);
    CHECK(c.policy.th_e == PolicyConfig{}.th_e);
    CHECK_NOTHROW(c.validate());
    CHECK(ServiceConfig::from_json(c.to_json()).to_json() == c.to_json());

    CHECK_THROWS_AS(ServiceConfig::from_json({{"modle", "x"}}), ConfigError);
    CHECK_THROWS_AS(ServiceConfig::from_json({{"policy", {{"th", 1}}}}), ConfigError);
    CHECK_THROWS_AS(ServiceConfig::from_json({{"port", "http"}}), ConfigError);
    CHECK_THROWS_AS(ServiceConfig{}.validate(), ConfigError);

    auto env = c;
    apply_env_overrides(env, [](const char* name) -> const char* {
        if (std::string(name) == "SEPSISLAB_PORT") return "8123";
        if (std::string(name) == "SEPSISLAB_DATA_DIR") return "/tmp/other";
        return nullptr;
    });
    CHECK(env.port == 8123);
    CHECK(env.data_dir == std::filesystem::path("/tmp/other"));
    auto unchanged = c;
    apply_env_overrides(unchanged, [](const char*) -> const char* { return nullptr; });
    CHECK(unchanged.port == 9000);
    CHECK_THROWS_AS(apply_env_overrides(unchanged, [](const char*) -> const char* { return "80a"; }), ConfigError);
}

TEST_CASE("synthetic aliases") {
    CHECK(synthetic_alias("P1") == synthetic_alias("P1"));
    CHECK(synthetic_alias("P1") != synthetic_alias("P2"));
    CHECK(synthetic_alias("P1").find("P1") == std::string::npos);
}

TEST_CASE("an empty store lists no patients") {
    TempDir dir;
    auto svc = make_service(dir.path());
    const auto r = get(*svc, "/api/patients");
    CHECK(r.status == 200);
    CHECK(r.body == json::array());
}

TEST_CASE("patient list matches a recompute-and-sort oracle") {
    TempDir dir;
    auto svc = make_service(dir.path());
    const auto cohort = service_cohort();
    CHECK(svc->import_cohort(cohort) == cohort.patients.size());
    CHECK(svc->import_cohort(cohort) == 0);

    const auto& f = lactate_fixture();
    struct Row {
        std::string id;
        double p;
        double entropy;
    };
    std::vector<Row> oracle;
    for (const auto& rec : cohort.patients) {
        const auto pred = predict_uncertain(f.model.params, f.imputation, stored_record(rec), rec.label->time,
                                            svc->config().policy, cohort.vocabulary);
        oracle.push_back({rec.patient_id, pred.p_mean, pred.entropy});
    }
    std::sort(oracle.begin(), oracle.end(),
              [](const Row& a, const Row& b) { return a.p != b.p ? a.p > b.p : a.id < b.id; });

    const auto r = get(*svc, "/api/patients");
    REQUIRE(r.status == 200);
    REQUIRE(r.body.size() == oracle.size());
    const std::set<std::string> keys = {"patient_id", "alias", "p_mean", "entropy", "color", "admitted_hours"};
    std::set<std::string> colors;
    for (std::size_t i = 0; i < oracle.size(); ++i) {
        const auto& row = r.body[i];
        std::set<std::string> got;
        for (const auto& [k, _] : row.items()) got.insert(k);
        CHECK(got == keys);
        CHECK(row.at("patient_id") == oracle[i].id);
        CHECK(row.at("p_mean").get<double>() == oracle[i].p);
        CHECK(row.at("entropy").get<double>() == oracle[i].entropy);
        CHECK(row.at("color") == to_string(risk_color(oracle[i].p, svc->config().policy.th_s)));
        CHECK(row.at("admitted_hours").get<double>() == 2.0);
        CHECK(row.at("alias") == synthetic_alias(oracle[i].id));
        colors.insert(row.at("color").get<std::string>());
    }
    // The cohort spans the scale: confident positives and negatives.
    CHECK(colors.count("red") == 1);
    CHECK(colors.count("green") == 1);
}

TEST_CASE("routing and error bodies") {
    TempDir dir;
    auto svc = make_service(dir.path());
    svc->import_cohort(service_cohort());
    check_error(get(*svc, "/api/patients/NOPE"), 404, "patient_not_found");
    check_error(get(*svc, "/api/patients/NOPE/trajectory"), 404, "patient_not_found");
    check_error(get(*svc, "/api/patients/NOPE/recommendations"), 404, "patient_not_found");
    check_error(post(*svc, "/api/patients/NOPE/observations", {{"variable", "HR"}, {"value", 90}, {"time", 1}}), 404,
                "patient_not_found");
    CHECK(get(*svc, "/api/patients/NOPE").body.at("detail").at("patient_id") == "NOPE");
    check_error(get(*svc, "/api/nothing"), 404, "not_found");
    check_error(get(*svc, "/"), 404, "not_found");
    check_error(call(*svc, "DELETE", "/api/patients"), 405, "method_not_allowed");
    check_error(get(*svc, "/api/patients/P0/observations"), 405, "method_not_allowed");
    check_error(call(*svc, "POST", "/api/patients/P0/observations", {}, "{not json"), 422, "invalid_request");
    check_error(call(*svc, "POST", "/api/patients/P0/observations", {}, "[1]"), 422, "invalid_request");
    CHECK(get(*svc, "/api/health").body.at("status") == "ok");

    const auto p = get(*svc, "/api/patients/P1");
    REQUIRE(p.status == 200);
    CHECK(p.body.at("alias") == synthetic_alias("P1"));
    CHECK(p.body.at("observations").size() == 2);
    CHECK(p.body.at("prediction").contains("color"));
    const auto& missing = p.body.at("missing");
    CHECK(std::find(missing.begin(), missing.end(), "Lactate") != missing.end());
}

TEST_CASE("trajectories") {
    TempDir dir;
    auto svc = make_service(dir.path());
    const auto cohort = service_cohort();
    svc->import_cohort(cohort);
    const auto& f = lactate_fixture();
    const auto& policy = svc->config().policy;
    const auto rec = stored_record(record_of(cohort, "P1"));  // Lactate missing

    const auto base = get(*svc, "/api/patients/P1/trajectory");
    REQUIRE(base.status == 200);
    CHECK_FALSE(base.body.contains("counterfactual"));
    CHECK(base.body.at("seed").get<std::uint64_t>() == policy.seed);
    CHECK(base.body.at("now").get<double>() == 2.0);
    const auto direct = project_trajectory(f.model.params, f.imputation, rec, 2.0, policy, cohort.vocabulary);
    REQUIRE(base.body.at("history").size() == direct.history.size());
    for (std::size_t i = 0; i < direct.history.size(); ++i) {
        CHECK(base.body["history"][i]["time"].get<double>() == direct.history[i].time);
        CHECK(base.body["history"][i]["p_mean"].get<double>() == direct.history[i].p_mean);
    }
    REQUIRE(base.body.at("projection").size() == direct.projection.size());
    CHECK(base.body["projection"].back()["band_high"].get<double>() == direct.projection.back().band_high);
    CHECK(get(*svc, "/api/patients/P1/trajectory", {{"hypothetical", ""}}).body == base.body);

    const auto cf = get(*svc, "/api/patients/P1/trajectory", {{"hypothetical", "WBC,Lactate"}});
    REQUIRE(cf.status == 200);
    REQUIRE(cf.body.contains("counterfactual"));
    // Names come back in vocabulary order.
    const bool lactate_first = cohort.vocabulary.id_of("Lactate") < cohort.vocabulary.id_of("WBC");
    CHECK(cf.body.at("hypothetical") ==
          (lactate_first ? json::array({"Lactate", "WBC"}) : json::array({"WBC", "Lactate"})));
    const auto& now_cf = cf.body["counterfactual"][0];
    const auto& now_base = base.body["history"].back();
    CHECK(now_cf["band_high"].get<double>() - now_cf["band_low"].get<double>() <
          now_base["band_high"].get<double>() - now_base["band_low"].get<double>());
    // Cross-check against the recommender on the same seed.
    const std::vector<VariableId> vars = {cohort.vocabulary.id_of("Lactate"), cohort.vocabulary.id_of("WBC")};
    const auto est = estimate_reduction(f.model.params, f.imputation, rec, 2.0, vars, policy, cohort.vocabulary);
    CHECK(now_cf["p_mean"].get<double>() == doctest::Approx(est.p_mean).epsilon(1e-12));
    CHECK(now_cf["band_low"].get<double>() == doctest::Approx(est.band_low).epsilon(1e-12));
    CHECK(now_cf["entropy"].get<double>() == doctest::Approx(est.u_after).epsilon(1e-12));
    // The same set in another order is the same request.
    CHECK(get(*svc, "/api/patients/P1/trajectory", {{"hypothetical", "Lactate, WBC"}}).body == cf.body);

    const auto observed = get(*svc, "/api/patients/P0/trajectory", {{"hypothetical", "WBC,Lactate"}});
    check_error(observed, 422, "already_observed");
    CHECK(observed.body.at("detail").at("variable") == "Lactate");
    CHECK(observed.body.at("message").get<std::string>().find("Lactate") != std::string::npos);
    check_error(get(*svc, "/api/patients/P1/trajectory", {{"hypothetical", "Unicorn"}}), 422, "unknown_variable");
    check_error(get(*svc, "/api/patients/P1/trajectory", {{"hypothetical", "WBC,WBC"}}), 422, "invalid_request");
}

TEST_CASE("recommendations equal a direct recommender call") {
    TempDir dir;
    auto svc = make_service(dir.path());
    const auto cohort = service_cohort();
    svc->import_cohort(cohort);
    const auto& f = lactate_fixture();
    const auto& vocab = cohort.vocabulary;
    const auto rec = stored_record(record_of(cohort, "P1"));

    std::vector<VariableId> labs;
    for (auto v : snapshot_at(rec, 2.0, vocab).missing())
        if (vocab[v].kind == VariableKind::Lab) labs.push_back(v);
    const auto direct = recommend(f.model.params, f.imputation, rec, 2.0, svc->config().policy, vocab, labs);

    const auto r = get(*svc, "/api/patients/P1/recommendations");
    REQUIRE(r.status == 200);
    CHECK(r.body.at("top") == kDefaultTopK);
    CHECK(r.body.at("u_before").get<double>() == direct.u_before);
    CHECK(r.body.at("seed").get<std::uint64_t>() == direct.seed);
    CHECK_FALSE(r.body.contains("reason"));
    const auto& items = r.body.at("items");
    REQUIRE(items.size() == kDefaultTopK);
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& e = direct.ranked[i];
        CHECK(items[i]["rank"] == i + 1);
        CHECK(items[i]["variable"] == vocab[e.variables.front()].name);
        CHECK(items[i]["u_after"].get<double>() == e.u_after);
        CHECK(items[i]["reduction"].get<double>() == e.reduction);
        CHECK(items[i]["reduction_fraction"].get<double>() == e.reduction_fraction());
        CHECK(vocab[vocab.id_of(items[i]["variable"].get<std::string>())].kind == VariableKind::Lab);
    }
    CHECK(items[0]["variable"] == "Lactate");

    const auto one = get(*svc, "/api/patients/P1/recommendations", {{"top", "1"}});
    REQUIRE(one.body.at("items").size() == 1);
    CHECK(one.body["items"][0] == items[0]);
    const auto all = get(*svc, "/api/patients/P1/recommendations", {{"top", "100"}});
    CHECK(all.body.at("items").size() == labs.size());
    check_error(get(*svc, "/api/patients/P1/recommendations", {{"top", "0"}}), 422, "invalid_parameter");
    check_error(get(*svc, "/api/patients/P1/recommendations", {{"top", "two"}}), 422, "invalid_parameter");

    const auto full = get(*svc, "/api/patients/P8/recommendations");
    REQUIRE(full.status == 200);
    CHECK(full.body.at("items").empty());
    CHECK(full.body.at("reason") == "fully_observed");
}

TEST_CASE("posting observations") {
    TempDir dir;
    auto svc = make_service(dir.path());
    const auto cohort = service_cohort();
    svc->import_cohort(cohort);
    const auto& f = lactate_fixture();
    const auto& vocab = cohort.vocabulary;

    SUBCASE("validation") {
        check_error(post(*svc, "/api/patients/P1/observations", {{"variable", "Unicorn"}, {"value", 1}, {"time", 1}}),
                    422, "unknown_variable");
        check_error(post(*svc, "/api/patients/P1/observations", {{"variable", "HR"}, {"value", "NaN"}, {"time", 1}}),
                    422, "invalid_value");
        check_error(post(*svc, "/api/patients/P1/observations", {{"variable", "HR"}, {"time", 1}}), 422,
                    "invalid_request");
        check_error(call(*svc, "POST", "/api/patients/P1/observations", {},
                         R"({"variable": "HR", "value": 1e999, "time": 1})"),
                    422, "invalid_value");
        const auto early = post(*svc, "/api/patients/P1/observations", {{"variable", "HR"}, {"value", 80}, {"time", -0.5}});
        check_error(early, 409, "before_admission");
        CHECK(early.body.at("detail").at("admitted_at") == 0.0);
        // Nothing was written.
        CHECK(get(*svc, "/api/patients/P1").body.at("version") == 0);
    }

    SUBCASE("read your write") {
        const auto before_traj = get(*svc, "/api/patients/P1/trajectory");
        const double value = vocab[vocab.id_of("Lactate")].destandardize(2.0);
        const auto r = post(*svc, "/api/patients/P1/observations", {{"variable", "Lactate"}, {"value", value}, {"time", 3.0}});
        REQUIRE(r.status == 200);
        CHECK(r.body.at("replaced") == false);
        CHECK(r.body.at("version") == 1);
        CHECK(r.body.at("entropy_before").get<double>() == r.body.at("before").at("entropy").get<double>());

        auto rec = stored_record(record_of(cohort, "P1"));
        rec.add_observation({vocab.id_of("Lactate"), value, 3.0});
        const auto oracle = predict_uncertain(f.model.params, f.imputation, rec, 3.0, svc->config().policy, vocab);
        CHECK(r.body.at("after").at("p_mean").get<double>() == oracle.p_mean);
        CHECK(r.body.at("after").at("time").get<double>() == 3.0);

        const auto traj = get(*svc, "/api/patients/P1/trajectory");
        CHECK(traj.body.at("now").get<double>() == 3.0);
        CHECK(traj.body.at("history").back().at("time").get<double>() == 3.0);
        CHECK(traj.body.at("history").back().at("p_mean").get<double>() == oracle.p_mean);
        CHECK(traj.body.at("history").size() == before_traj.body.at("history").size() + 1);
        CHECK(get(*svc, "/api/patients").body.size() == cohort.patients.size());
    }

    SUBCASE("posting the top recommended lab does not raise entropy beyond noise") {
        const auto rec = get(*svc, "/api/patients/P3/recommendations", {{"top", "1"}});
        const auto& top = rec.body.at("items")[0];
        REQUIRE(top.at("variable") == "Lactate");
        const auto& truth = separable_cohort(12, 21, 1.0).patients[3];
        double value = 0.0;
        for (const auto& o : truth.observations)
            if (o.variable == vocab.id_of("Lactate")) value = o.value;
        const auto r = post(*svc, "/api/patients/P3/observations", {{"variable", "Lactate"}, {"value", value}, {"time", 2.0}});
        REQUIRE(r.status == 200);
        CHECK(r.body.at("entropy_after").get<double>() <=
              r.body.at("entropy_before").get<double>() + 3.0 * top.at("u_after_se").get<double>());
    }

    SUBCASE("duplicate variable and time: last write wins") {
        const json first = {{"variable", "WBC"}, {"value", 9.0}, {"time", 1.5}};
        const json second = {{"variable", "WBC"}, {"value", 14.0}, {"time", 1.5}};
        CHECK(post(*svc, "/api/patients/P1/observations", first).body.at("replaced") == false);
        const auto r = post(*svc, "/api/patients/P1/observations", second);
        CHECK(r.body.at("replaced") == true);
        CHECK(r.body.at("version") == 2);
        int wbc = 0;
        const auto p1 = get(*svc, "/api/patients/P1");
        for (const auto& o : p1.body.at("observations"))
            if (o.at("variable") == "WBC") {
                ++wbc;
                CHECK(o.at("value") == 14.0);
            }
        CHECK(wbc == 1);
    }

    SUBCASE("time defaults to the patient's current time") {
        const auto r = post(*svc, "/api/patients/P1/observations", {{"variable", "WBC"}, {"value", 9.0}});
        REQUIRE(r.status == 200);
        CHECK(r.body.at("time") == 2.0);
    }
}

TEST_CASE("repeated reads return identical bodies") {
    TempDir dir;
    auto svc = make_service(dir.path());
    svc->import_cohort(service_cohort());
    for (const std::string path :
         {"/api/patients", "/api/patients/P1", "/api/patients/P1/trajectory", "/api/patients/P1/recommendations"}) {
        const auto a = raw_get(*svc, path);
        const auto b = raw_get(*svc, path);
        CHECK(a == b);
    }
    const auto count = svc->recompute_count();
    raw_get(*svc, "/api/patients");
    raw_get(*svc, "/api/patients/P1/trajectory");
    CHECK(svc->recompute_count() == count);
}

TEST_CASE("orders") {
    TempDir dir;
    auto svc = make_service(dir.path());
    svc->import_cohort(service_cohort());

    check_error(post(*svc, "/api/orders", {{"patient_id", "NOPE"}, {"variables", {"Lactate"}}}), 404,
                "patient_not_found");
    check_error(post(*svc, "/api/orders", {{"patient_id", "P1"}, {"variables", json::array()}}), 422,
                "invalid_request");
    check_error(post(*svc, "/api/orders", {{"patient_id", "P1"}, {"variables", {"Unicorn"}}}), 422,
                "unknown_variable");
    check_error(post(*svc, "/api/orders/99/fulfill", {{"values", {{"Lactate", 4.2}}}}), 404, "order_not_found");
    check_error(post(*svc, "/api/orders/abc/fulfill", {{"values", {{"Lactate", 4.2}}}}), 404, "order_not_found");
    check_error(get(*svc, "/api/orders/99"), 404, "order_not_found");

    SUBCASE("order then fulfill") {
        const auto o = post(*svc, "/api/orders", {{"patient_id", "P1"}, {"variables", {"Lactate"}}});
        REQUIRE(o.status == 201);
        CHECK(o.body.at("status") == "pending");
        CHECK(o.body.at("fulfilled_time").is_null());
        CHECK(o.body.at("order_time") == 2.0);
        const auto id = std::to_string(o.body.at("order_id").get<std::int64_t>());
        CHECK(get(*svc, "/api/orders/" + id).body == o.body);

        check_error(post(*svc, "/api/orders/" + id + "/fulfill", {{"values", {{"WBC", 4.2}}}}), 422,
                    "unexpected_variable");
        check_error(post(*svc, "/api/orders/" + id + "/fulfill", {{"values", {{"Lactate", 4.2}}}, {"time", 1.0}}), 409,
                    "before_order");

        const auto r = post(*svc, "/api/orders/" + id + "/fulfill", {{"values", {{"Lactate", 4.2}}}, {"time", 2.5}});
        REQUIRE(r.status == 200);
        CHECK(r.body.at("order").at("status") == "fulfilled");
        CHECK(r.body.at("order").at("fulfilled_time") == 2.5);
        CHECK(r.body.at("order").at("fulfilled_time").get<double>() >=
              r.body.at("order").at("order_time").get<double>());
        bool seen = false;
        const auto p1 = get(*svc, "/api/patients/P1");
        for (const auto& obs : p1.body.at("observations"))
            if (obs.at("variable") == "Lactate") {
                seen = true;
                CHECK(obs.at("value") == 4.2);
                CHECK(obs.at("time") == 2.5);
            }
        CHECK(seen);
        CHECK(get(*svc, "/api/orders/" + id).body == r.body.at("order"));

        const auto again = post(*svc, "/api/orders/" + id + "/fulfill", {{"values", {{"Lactate", 5.0}}}});
        check_error(again, 409, "already_fulfilled");
    }

    SUBCASE("bulk fulfill is one write and one recompute") {
        const auto o = post(*svc, "/api/orders", {{"patient_id", "P1"}, {"variables", {"Lactate", "WBC", "Platelets"}}});
        REQUIRE(o.status == 201);
        const auto id = std::to_string(o.body.at("order_id").get<std::int64_t>());
        check_error(post(*svc, "/api/orders/" + id + "/fulfill", {{"values", {{"Lactate", 4.2}}}}), 422,
                    "incomplete_results");
        raw_get(*svc, "/api/patients");  // cache is fresh
        const auto before_count = svc->recompute_count();
        const auto version = get(*svc, "/api/patients/P1").body.at("version").get<int>();
        const auto r = post(*svc, "/api/orders/" + id + "/fulfill",
                            {{"values", {{"Lactate", 4.2}, {"WBC", 11.0}, {"Platelets", 180.0}}}});
        REQUIRE(r.status == 200);
        CHECK(svc->recompute_count() == before_count + 1);
        CHECK(r.body.at("version") == version + 1);
        const auto traj = get(*svc, "/api/patients/P1/trajectory");
        CHECK(traj.body.at("version") == version + 1);
        CHECK(traj.body.at("history").back().at("p_mean") == r.body.at("after").at("p_mean"));
        CHECK(svc->recompute_count() == before_count + 1);
    }
}

TEST_CASE("writes survive a restart and reads replay identically") {
    TempDir dir;
    std::vector<std::string> bodies;
    const std::vector<std::string> paths = {"/api/patients", "/api/patients/P1", "/api/patients/P1/trajectory",
                                            "/api/patients/P2/recommendations", "/api/orders/1"};
    {
        auto svc = make_service(dir.path());
        svc->import_cohort(service_cohort());
        post(*svc, "/api/patients/P1/observations", {{"variable", "WBC"}, {"value", 12.5}, {"time", 2.25}});
        const auto o = post(*svc, "/api/orders", {{"patient_id", "P2"}, {"variables", {"Lactate"}}});
        REQUIRE(o.body.at("order_id") == 1);
        post(*svc, "/api/orders/1/fulfill", {{"values", {{"Lactate", 3.1}}}});
        for (const auto& p : paths) bodies.push_back(raw_get(*svc, p));
    }
    {
        auto svc = make_service(dir.path());
        for (std::size_t i = 0; i < paths.size(); ++i) CHECK(raw_get(*svc, paths[i]) == bodies[i]);
        // Served from the persisted caches.
        CHECK(svc->recompute_count() == 0);
        CHECK(svc->import_cohort(service_cohort()) == 0);
    }
    {
        // A different seed invalidates the caches; the data stays.
        auto svc = make_service(dir.path(), 99);
        const auto p = get(*svc, "/api/patients/P1");
        CHECK(p.body.at("version") == 1);
        CHECK(svc->recompute_count() == 1);
        CHECK(p.body.at("prediction").at("seed").get<std::uint64_t>() != json::parse(bodies[1])["prediction"]["seed"].get<std::uint64_t>());
    }
}

TEST_CASE("a store from another vocabulary is refused") {
    TempDir dir;
    make_service(dir.path());
    Store store(test_config(dir.path()).store_file());
    store.set_meta("vocabulary_hash", "something-else");
    CHECK_THROWS_AS(make_service(dir.path()), ConfigError);
}

TEST_CASE("concurrent writes are serialized per patient") {
    TempDir dir;
    auto svc = make_service(dir.path());
    svc->import_cohort(service_cohort());
    const int per_thread = 6;
    std::vector<std::thread> threads;
    std::vector<int> failures(4, 0);
    for (int t = 0; t < 4; ++t)
        threads.emplace_back([&, t] {
            // Threads 0 and 1 share P0; 2 and 3 write P2 and P4.
            const std::string id = t < 2 ? "P0" : (t == 2 ? "P2" : "P4");
            for (int i = 0; i < per_thread; ++i) {
                const auto r = post(*svc, "/api/patients/" + id + "/observations",
                                    {{"variable", "HR"}, {"value", 80 + i}, {"time", 2.0 + 0.1 * (t * per_thread + i)}});
                if (r.status != 200) ++failures[static_cast<std::size_t>(t)];
                raw_get(*svc, "/api/patients");
            }
        });
    for (auto& th : threads) th.join();
    for (int f : failures) CHECK(f == 0);
    CHECK(get(*svc, "/api/patients/P0").body.at("version") == 2 * per_thread);
    CHECK(get(*svc, "/api/patients/P2").body.at("version") == per_thread);
    CHECK(get(*svc, "/api/patients/P4").body.at("version") == per_thread);
}

TEST_CASE("HTTP front end") {
    TempDir dir;
    auto svc = make_service(dir.path());
    svc->import_cohort(service_cohort());
    HttpServer server(*svc);
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread runner([&server] { server.listen(); });

    httplib::Client client("127.0.0.1", port);
    const auto list = client.Get("/api/patients");
    REQUIRE(list);
    CHECK(list->status == 200);
    CHECK(list->get_header_value("Content-Type") == "application/json");
    CHECK(list->body == raw_get(*svc, "/api/patients"));

    const auto traj = client.Get("/api/patients/P1/trajectory?hypothetical=Lactate");
    REQUIRE(traj);
    CHECK(traj->status == 200);
    CHECK(json::parse(traj->body).contains("counterfactual"));

    const auto missing = client.Get("/api/patients/NOPE/trajectory");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    CHECK(json::parse(missing->body).at("code") == "patient_not_found");

    const auto posted = client.Post("/api/patients/P1/observations", R"({"variable":"WBC","value":10,"time":2})",
                                    "application/json");
    REQUIRE(posted);
    CHECK(posted->status == 200);
    CHECK(json::parse(posted->body).at("version") == 1);

    server.stop();
    runner.join();
}
