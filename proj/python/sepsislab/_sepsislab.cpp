#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sepsislab/checkpoint.hpp"
#include "sepsislab/cohort_io.hpp"
#include "sepsislab/experiment.hpp"
#include "sepsislab/generator.hpp"
#include "sepsislab/logistic.hpp"
#include "sepsislab/metrics.hpp"
#include "sepsislab/service.hpp"
#include "sepsislab/training.hpp"
#include "sepsislab/uncertainty.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace sepsislab;

namespace {

py::dict generate(std::uint64_t seed, std::size_t patients, const fs::path& out, double prevalence,
                  double missing_fraction) {
    GeneratorConfig config;
    config.prevalence = prevalence;
    config.missing_fraction = missing_fraction;
    const auto cohort = generate_cohort(seed, patients, config);
    write_cohort(cohort, out);
    std::size_t positives = 0;
    for (const auto& p : cohort.patients) positives += p.label && p.label->positive;
    py::dict d;
    d["patients"] = cohort.patients.size();
    d["positives"] = positives;
    return d;
}

py::dict train_model(const fs::path& data, const fs::path& out, std::uint64_t seed, std::size_t epochs,
                     std::size_t hidden, std::size_t embed, std::size_t layers, double lr, double lab_dropout) {
    TrainConfig config;
    config.seed = seed;
    config.epochs = epochs;
    config.hidden_dim = hidden;
    config.embed_dim = embed;
    config.num_layers = layers;
    config.learning_rate = lr;
    config.lab_dropout = lab_dropout;
    TrainedModel model = [&] {
        py::gil_scoped_release release;
        const auto cohort = ingest_cohort(data);
        auto m = train(cohort, config);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        save_checkpoint(m.params, out);
        save_imputation(*m.imputation, imputation_path_for(out));
        const auto split = split_cohort(cohort, config.split_fractions, config.seed);
        save_logistic(train_logistic(cohort, split.train), logistic_path_for(out));
        save_train_report(m.report, report_path_for(out));
        save_vocabulary(cohort.vocabulary, vocabulary_path_for(out));
        return m;
    }();
    py::dict d;
    d["best_epoch"] = model.report.best_epoch;
    d["best_validation_auc"] = model.report.best_validation_auc;
    d["test_ids"] = model.report.test_ids;
    return d;
}

py::list evaluate(const fs::path& model_path, const fs::path& cohort_dir, const std::vector<std::string>& conditions,
                  const std::string& scorer, double budget, std::size_t samples, std::size_t mcs,
                  std::uint64_t seed, bool test_only, std::size_t limit) {
    std::vector<ExperimentReport> reports;
    {
        py::gil_scoped_release release;
        const auto cohort = ingest_cohort(cohort_dir);
        const auto& vocab = cohort.vocabulary;
        const auto params = load_checkpoint(model_path, vocab);
        const auto imputation = load_imputation(imputation_path_for(model_path), vocab);
        const Scorer s = scorer_from_string(scorer);
        std::optional<LogisticModel> logistic;
        if (s == Scorer::Logistic) logistic = load_logistic(logistic_path_for(model_path), vocab);
        std::vector<std::size_t> idx;
        std::set<std::string> test;
        if (test_only) {
            const auto report = load_train_report(report_path_for(model_path));
            test.insert(report.test_ids.begin(), report.test_ids.end());
        }
        for (std::size_t i = 0; i < cohort.patients.size(); ++i)
            if (!test_only || test.count(cohort.patients[i].patient_id)) idx.push_back(i);
        if (limit > 0 && idx.size() > limit) idx.resize(limit);
        if (idx.empty()) throw ConfigError("no patients selected");
        const ExperimentModels models{&params, &imputation, logistic ? &*logistic : nullptr};
        for (const auto& c : conditions) {
            ExperimentConfig cfg;
            cfg.condition = condition_from_string(c);
            cfg.scorer = s;
            cfg.budget = budget;
            cfg.policy.counterfactual_samples = samples;
            cfg.policy.mcs_samples = mcs;
            cfg.policy.seed = seed;
            reports.push_back(run_condition(cohort, idx, models, cfg));
        }
    }
    py::list out;
    for (const auto& r : reports) {
        py::dict d;
        d["model"] = r.model;
        d["condition"] = std::string(to_string(r.condition));
        d["auc"] = r.auc ? py::cast(*r.auc) : py::none();
        d["acquired_fraction"] = r.acquired_fraction;
        d["n_patients"] = r.n_patients;
        d["revealed"] = r.revealed_total;
        d["withheld"] = r.withheld_total;
        d["runtime_seconds"] = r.runtime_seconds;
        out.append(d);
    }
    return out;
}

class PyService {
public:
    PyService(const fs::path& config_path, std::optional<fs::path> data_dir) {
        auto config = load_service_config(config_path);
        if (data_dir) config.data_dir = *data_dir;
        config.validate();
        service_ = open_service(config, &imported_);
    }

    py::tuple request(const std::string& method, const std::string& path, const std::optional<std::string>& body,
                      const std::map<std::string, std::string>& query) {
        ApiRequest req{method, path, query, body.value_or("")};
        ApiResponse res;
        {
            py::gil_scoped_release release;
            res = service_->handle(req);
        }
        // JSON crosses the boundary as text; the Python side decodes it.
        return py::make_tuple(res.status, py::module_::import("json").attr("loads")(res.body));
    }

    std::size_t imported() const { return imported_; }
    std::size_t recompute_count() const { return service_->recompute_count(); }

private:
    std::unique_ptr<Service> service_;
    std::size_t imported_ = 0;
};

}  // namespace

PYBIND11_MODULE(_sepsislab, m) {
    m.doc() = "SepsisLab core bindings";
    py::register_exception<Error>(m, "SepsisLabError", PyExc_RuntimeError);

    m.def("binary_entropy", &binary_entropy, py::arg("p"));
    m.def("compute_auc",
          [](const std::vector<double>& scores, const std::vector<int>& labels) { return compute_auc(scores, labels); },
          py::arg("scores"), py::arg("labels"));
    m.def(
        "decide",
        [](double p_mean, double entropy, double th_s, double th_e) {
            PolicyConfig c;
            c.th_s = th_s;
            c.th_e = th_e;
            UncertainPrediction pred;
            pred.p_mean = p_mean;
            pred.entropy = entropy;
            const auto d = decide(pred, c);
            return py::make_tuple(d.flag_sepsis, d.request_labs);
        },
        py::arg("p_mean"), py::arg("entropy"), py::arg("th_s") = 0.5, py::arg("th_e") = 0.25,
        "Returns (flag_sepsis, request_labs).");
    m.def("risk_color",
          [](double p, double th_s, double green_cutoff) { return std::string(to_string(risk_color(p, th_s, green_cutoff))); },
          py::arg("p"), py::arg("th_s") = 0.5, py::arg("green_cutoff") = 0.25);

    m.def("generate", &generate, py::arg("seed"), py::arg("patients"), py::arg("out"),
          py::arg("prevalence") = GeneratorConfig{}.prevalence,
          py::arg("missing_fraction") = GeneratorConfig{}.missing_fraction);
    const TrainConfig t;
    m.def("train", &train_model, py::arg("data"), py::arg("out"), py::arg("seed") = t.seed,
          py::arg("epochs") = t.epochs, py::arg("hidden") = t.hidden_dim, py::arg("embed") = t.embed_dim,
          py::arg("layers") = t.num_layers, py::arg("lr") = t.learning_rate, py::arg("lab_dropout") = t.lab_dropout);
    const PolicyConfig p;
    m.def("evaluate", &evaluate, py::arg("model"), py::arg("cohort"),
          py::arg("conditions") = std::vector<std::string>{"masked", "recommended", "full"},
          py::arg("scorer") = "lstm", py::arg("budget") = 0.25, py::arg("samples") = p.counterfactual_samples,
          py::arg("mcs") = p.mcs_samples, py::arg("seed") = p.seed, py::arg("test_only") = true,
          py::arg("limit") = 0);

    py::class_<PyService>(m, "Service")
        .def(py::init<const fs::path&, std::optional<fs::path>>(), py::arg("config"), py::arg("data_dir") = py::none())
        .def("request", &PyService::request, py::arg("method"), py::arg("path"), py::arg("body") = py::none(),
             py::arg("query") = std::map<std::string, std::string>{},
             "Routes one API request; returns (status, decoded JSON body).")
        .def_property_readonly("imported", &PyService::imported)
        .def_property_readonly("recompute_count", &PyService::recompute_count);
}
