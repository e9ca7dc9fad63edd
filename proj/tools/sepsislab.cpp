#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <pthread.h>
#include <set>
#include <thread>

#include <CLI11.hpp>

#include "sepsislab/checkpoint.hpp"
#include "sepsislab/cohort_io.hpp"
#include "sepsislab/experiment.hpp"
#include "sepsislab/generator.hpp"
#include "sepsislab/logistic.hpp"
#include "sepsislab/service.hpp"
#include "sepsislab/training.hpp"

namespace {

using namespace sepsislab;
namespace fs = std::filesystem;

struct GenerateArgs {
    std::uint64_t seed = 0;
    std::size_t patients = 0;
    fs::path out;
    GeneratorConfig config;
};

int run_generate(const GenerateArgs& a) {
    const auto cohort = generate_cohort(a.seed, a.patients, a.config);
    write_cohort(cohort, a.out);
    std::size_t positives = 0;
    for (const auto& p : cohort.patients) positives += p.label && p.label->positive;
    std::cout << "wrote " << cohort.patients.size() << " patients (" << positives << " positive) to " << a.out.string()
              << "\n";
    return 0;
}

struct TrainArgs {
    fs::path data;
    fs::path out;
    TrainConfig config;
    std::string optimizer = "adam";
};

int run_train(TrainArgs a) {
    a.config.optimizer = optimizer_from_string(a.optimizer);
    const auto cohort = ingest_cohort(a.data);
    std::cout << "training on " << cohort.patients.size() << " patients (H=" << a.config.hidden_dim
              << ", E=" << a.config.embed_dim << ", L=" << a.config.num_layers << ", " << a.config.epochs
              << " epochs)\n";
    const auto model = train(cohort, a.config);
    for (const auto& e : model.report.epochs)
        std::cout << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.validation_loss
                  << " val_auc " << e.validation_auc << "\n";
    std::cout << "best epoch " << model.report.best_epoch << " (validation AUC " << model.report.best_validation_auc
              << ")\n";

    if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
    save_checkpoint(model.params, a.out);
    save_imputation(*model.imputation, imputation_path_for(a.out));
    const auto split = split_cohort(cohort, a.config.split_fractions, a.config.seed);
    save_logistic(train_logistic(cohort, split.train), logistic_path_for(a.out));
    save_train_report(model.report, report_path_for(a.out));
    save_vocabulary(cohort.vocabulary, vocabulary_path_for(a.out));
    std::cout << "wrote " << a.out.string() << " and its .imputation.json, .logistic.json, .report.json and "
              << ".vocabulary.json companions\n";
    return 0;
}

struct EvalArgs {
    fs::path model;
    fs::path cohort;
    std::string condition = "all";
    double budget = 0.25;
    fs::path out;
    fs::path log;
    std::string scorer = "both";
    std::string patients = "test";
    std::size_t limit = 0;
    PolicyConfig policy;
};

std::vector<std::size_t> select_patients(const Cohort& cohort, const EvalArgs& a) {
    std::vector<std::size_t> idx;
    if (a.patients == "all") {
        for (std::size_t i = 0; i < cohort.patients.size(); ++i) idx.push_back(i);
    } else {
        const auto report_file = report_path_for(a.model);
        if (!fs::exists(report_file))
            throw ConfigError("--patients test needs " + report_file.string() + "; use --patients all otherwise");
        const auto report = load_train_report(report_file);
        const std::set<std::string> test(report.test_ids.begin(), report.test_ids.end());
        for (std::size_t i = 0; i < cohort.patients.size(); ++i)
            if (test.count(cohort.patients[i].patient_id)) idx.push_back(i);
        if (idx.size() != test.size())
            throw ConfigError("the cohort lacks " + std::to_string(test.size() - idx.size()) +
                              " test patients named in " + report_file.string());
    }
    if (a.limit > 0 && idx.size() > a.limit) idx.resize(a.limit);
    if (idx.empty()) throw ConfigError("no patients selected");
    return idx;
}

int run_eval(const EvalArgs& a) {
    const auto cohort = ingest_cohort(a.cohort);
    const auto& vocab = cohort.vocabulary;
    const auto params = load_checkpoint(a.model, vocab);
    const auto imputation = load_imputation(imputation_path_for(a.model), vocab);
    std::optional<LogisticModel> logistic;
    std::vector<Scorer> scorers;
    if (a.scorer == "both") {
        scorers = {Scorer::Lstm, Scorer::Logistic};
    } else {
        scorers = {scorer_from_string(a.scorer)};
    }
    for (auto s : scorers)
        if (s == Scorer::Logistic) logistic = load_logistic(logistic_path_for(a.model), vocab);
    std::vector<Condition> conditions;
    if (a.condition == "all") {
        conditions = {Condition::Masked, Condition::Recommended, Condition::Full};
    } else {
        conditions = {condition_from_string(a.condition)};
    }
    const auto idx = select_patients(cohort, a);
    const ExperimentModels models{&params, &imputation, logistic ? &*logistic : nullptr};

    std::vector<ExperimentReport> reports;
    std::ofstream log;
    if (!a.log.empty()) {
        log.open(a.log);
        if (!log) throw ConfigError("cannot write " + a.log.string());
        log << "model,condition,patient_id,iteration,variable,observation_time,value,entropy_before,entropy_after,"
               "expected_reduction\n";
    }
    for (auto s : scorers)
        for (auto c : conditions) {
            ExperimentConfig cfg;
            cfg.condition = c;
            cfg.budget = a.budget;
            cfg.policy = a.policy;
            cfg.scorer = s;
            auto r = run_condition(cohort, idx, models, cfg);
            std::cout << r.model << " " << to_string(c) << ": AUC "
                      << (r.auc ? std::to_string(*r.auc) : std::string("undefined")) << ", acquired "
                      << r.acquired_fraction << " (" << r.revealed_total << "/" << r.withheld_total << "), "
                      << r.runtime_seconds << " s\n";
            if (log.is_open())
                for (const auto& st : r.log)
                    log << r.model << ',' << to_string(c) << ',' << st.patient_id << ',' << st.iteration << ','
                        << vocab[st.variable].name << ',' << format_double(st.observation_time) << ','
                        << format_double(st.value) << ',' << format_double(st.entropy_before) << ','
                        << format_double(st.entropy_after) << ',' << format_double(st.expected_reduction) << '\n';
            reports.push_back(std::move(r));
        }
    const auto table = report_table(reports);
    std::cout << "\n" << table.text;
    if (!a.out.empty()) {
        if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
        std::ofstream out(a.out);
        if (!out) throw ConfigError("cannot write " + a.out.string());
        out << table.csv;
        std::cout << "wrote " << a.out.string() << "\n";
    }
    return 0;
}

struct ServeArgs {
    fs::path config;
    std::optional<int> port;
    std::optional<fs::path> data_dir;
};

int run_serve(const ServeArgs& a) {
    auto config = load_service_config(a.config);
    apply_env_overrides(config);
    if (a.port) config.port = *a.port;
    if (a.data_dir) config.data_dir = *a.data_dir;
    config.validate();

    // Termination signals are taken by a dedicated thread, so the server can be
    // stopped outside signal-handler context.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    std::size_t added = 0;
    auto service = open_service(config, &added);
    if (added > 0) std::cout << "imported " << added << " patients from " << config.cohort_path.string() << "\n";
    HttpServer server(*service);
    const int port = server.bind(config.bind_address, config.port);
    std::thread waiter([&server, signals] {
        int sig = 0;
        sigwait(&signals, &sig);
        server.stop();
    });
    std::cout << "listening on http://" << config.bind_address << ":" << port << std::endl;
    server.listen();
    // Unblock the waiter when listen() ended for another reason.
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SepsisLab: uncertainty-aware sepsis prediction and lab recommendation"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Write a synthetic cohort (events, statics, labels, vocabulary)");
    g->add_option("--seed", gen.seed, "Random seed")->required();
    g->add_option("--patients", gen.patients, "Number of patients")->required()->check(CLI::PositiveNumber);
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--prevalence", gen.config.prevalence, "Share of positive patients")->capture_default_str();
    g->add_option("--missing-fraction", gen.config.missing_fraction, "Probability a lab is not drawn")->capture_default_str();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train the LSTM, imputation model and logistic baseline");
    t->add_option("--data", tr.data, "Cohort directory")->required()->check(CLI::ExistingDirectory);
    t->add_option("--out", tr.out, "Checkpoint path")->required();
    t->add_option("--seed", tr.config.seed, "Random seed")->capture_default_str();
    t->add_option("--epochs", tr.config.epochs, "Training epochs")->capture_default_str();
    t->add_option("--hidden", tr.config.hidden_dim, "LSTM width H")->capture_default_str();
    t->add_option("--embed", tr.config.embed_dim, "Embedding width E")->capture_default_str();
    t->add_option("--layers", tr.config.num_layers, "LSTM layers")->capture_default_str();
    t->add_option("--lr", tr.config.learning_rate, "Learning rate")->capture_default_str();
    t->add_option("--batch", tr.config.batch_size, "Mini-batch size")->capture_default_str();
    t->add_option("--optimizer", tr.optimizer, "adam or sgd")->capture_default_str();
    t->add_option("--lab-dropout", tr.config.lab_dropout, "Lab dropout probability")->capture_default_str();
    t->add_flag("--impute-missing", tr.config.impute_missing, "Complete the final step with an imputed draw");
    t->add_option("--max-timesteps", tr.config.max_timesteps, "Sequence cap")->capture_default_str();

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Run the masked / recommended / full comparison");
    e->add_option("--model", ev.model, "Checkpoint path")->required()->check(CLI::ExistingFile);
    e->add_option("--cohort", ev.cohort, "Cohort directory")->required()->check(CLI::ExistingDirectory);
    e->add_option("--condition", ev.condition, "masked, recommended, full or all")->capture_default_str();
    e->add_option("--budget", ev.budget, "Share of withheld labs that may be revealed")->capture_default_str();
    e->add_option("--out", ev.out, "Report CSV path");
    e->add_option("--log", ev.log, "Acquisition log CSV path");
    e->add_option("--scorer", ev.scorer, "lstm, logistic or both")->capture_default_str();
    e->add_option("--patients", ev.patients, "test (split from the train report) or all")->capture_default_str();
    e->add_option("--limit", ev.limit, "Use at most this many patients (0: no limit)")->capture_default_str();
    e->add_option("--samples", ev.policy.counterfactual_samples, "Counterfactual draws K")->capture_default_str();
    e->add_option("--mcs", ev.policy.mcs_samples, "Monte-Carlo draws M")->capture_default_str();
    e->add_option("--seed", ev.policy.seed, "Request seed")->capture_default_str();
    e->add_option("--th-e", ev.policy.th_e, "Entropy threshold")->capture_default_str();

    ServeArgs sv;
    auto* s = app.add_subcommand("serve", "Serve the HTTP API");
    s->add_option("--config", sv.config, "Service config JSON")->required()->check(CLI::ExistingFile);
    s->add_option("--port", sv.port, "Port (overrides config and SEPSISLAB_PORT; 0 picks a free port)");
    s->add_option("--data-dir", sv.data_dir, "Data directory (overrides config and SEPSISLAB_DATA_DIR)");

    CLI11_PARSE(app, argc, argv);
    try {
        if (g->parsed()) return run_generate(gen);
        if (t->parsed()) return run_train(tr);
        if (e->parsed()) return run_eval(ev);
        if (s->parsed()) return run_serve(sv);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
