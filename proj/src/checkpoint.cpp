#include "sepsislab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "sepsislab/errors.hpp"

namespace sepsislab {

namespace {

constexpr char kMagic[8] = {'S', 'L', 'C', 'K', 'P', 'T', '1', '\n'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    params.check_shapes();
    nlohmann::json header;
    header["format"] = "sepsislab.lstm";
    header["version"] = 1;
    header["vocabulary_hash"] = params.vocabulary_hash;
    header["shape"] = {{"num_variables", params.shape.num_variables},
                       {"static_dim", params.shape.static_dim},
                       {"embed_dim", params.shape.embed_dim},
                       {"hidden_dim", params.shape.hidden_dim},
                       {"num_layers", params.shape.num_layers}};
    nlohmann::json table = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : params.tensors()) {
        table.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", offset}});
        offset += t.data.size();
    }
    header["tensors"] = table;
    header["count"] = offset;
    const std::string h = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = h.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& t : params.tensors())
        out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size_bytes()));
    if (!out) throw ConfigError("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint_unchecked(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ConfigError(path.string() + " is not a sepsislab checkpoint");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1u << 26)) throw ConfigError("corrupt checkpoint header");
    std::string h(len, '\0');
    in.read(h.data(), static_cast<std::streamsize>(len));
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(h);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("corrupt checkpoint header: ") + e.what());
    }
    ModelShape shape;
    const auto& s = header.at("shape");
    shape.num_variables = s.at("num_variables").get<std::size_t>();
    shape.static_dim = s.at("static_dim").get<std::size_t>();
    shape.embed_dim = s.at("embed_dim").get<std::size_t>();
    shape.hidden_dim = s.at("hidden_dim").get<std::size_t>();
    shape.num_layers = s.at("num_layers").get<std::size_t>();

    ModelParams params = ModelParams::zeros(shape);
    params.vocabulary_hash = header.at("vocabulary_hash").get<std::string>();
    auto views = params.tensors();
    const auto& table = header.at("tensors");
    if (table.size() != views.size()) throw ConfigError("checkpoint tensor table does not match its shape header");
    for (std::size_t i = 0; i < views.size(); ++i) {
        const auto& e = table[i];
        if (e.at("name").get<std::string>() != views[i].name || e.at("rows").get<Eigen::Index>() != views[i].rows ||
            e.at("cols").get<Eigen::Index>() != views[i].cols)
            throw ConfigError("checkpoint tensor " + e.at("name").get<std::string>() + " does not match its shape");
        in.read(reinterpret_cast<char*>(views[i].data.data()), static_cast<std::streamsize>(views[i].data.size_bytes()));
        if (!in) throw ConfigError("truncated checkpoint " + path.string());
    }
    return params;
}

ModelParams load_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab) {
    ModelParams params = load_checkpoint_unchecked(path);
    if (params.vocabulary_hash != vocab.hash())
        throw ConfigError("checkpoint was trained on a different vocabulary (" + params.vocabulary_hash + " vs " +
                          vocab.hash() + ")");
    if (params.shape.num_variables != vocab.size())
        throw ConfigError("checkpoint variable count does not match the vocabulary");
    return params;
}

std::filesystem::path imputation_path_for(const std::filesystem::path& checkpoint) {
    return std::filesystem::path(checkpoint.string() + ".imputation.json");
}

std::filesystem::path logistic_path_for(const std::filesystem::path& checkpoint) {
    return std::filesystem::path(checkpoint.string() + ".logistic.json");
}

std::filesystem::path report_path_for(const std::filesystem::path& checkpoint) {
    return std::filesystem::path(checkpoint.string() + ".report.json");
}

std::filesystem::path vocabulary_path_for(const std::filesystem::path& checkpoint) {
    return std::filesystem::path(checkpoint.string() + ".vocabulary.json");
}

namespace {

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw ConfigError("failed writing " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + " is not valid JSON: " + e.what());
    }
}

}  // namespace

void save_train_report(const TrainReport& report, const std::filesystem::path& path) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : report.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"validation_loss", e.validation_loss},
                          {"validation_auc", e.validation_auc}});
    write_json({{"format", "sepsislab.train_report"},
                {"version", 1},
                {"best_epoch", report.best_epoch},
                {"best_validation_auc", report.best_validation_auc},
                {"epochs", epochs},
                {"train_ids", report.train_ids},
                {"validation_ids", report.validation_ids},
                {"test_ids", report.test_ids}},
               path);
}

TrainReport load_train_report(const std::filesystem::path& path) {
    const auto j = read_json(path);
    try {
        if (j.at("format") != "sepsislab.train_report") throw ConfigError(path.string() + " is not a train report");
        TrainReport r;
        r.best_epoch = j.at("best_epoch").get<std::size_t>();
        r.best_validation_auc = j.at("best_validation_auc").get<double>();
        for (const auto& e : j.at("epochs"))
            r.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                                e.at("validation_loss").get<double>(), e.at("validation_auc").get<double>()});
        r.train_ids = j.at("train_ids").get<std::vector<std::string>>();
        r.validation_ids = j.at("validation_ids").get<std::vector<std::string>>();
        r.test_ids = j.at("test_ids").get<std::vector<std::string>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": malformed train report: " + e.what());
    }
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) { write_json(vocab.to_json(), path); }

Vocabulary load_vocabulary(const std::filesystem::path& path) { return Vocabulary::from_json(read_json(path)); }

}  // namespace sepsislab
