#include "sepsislab/cohort_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string_view>

#include <nlohmann/json.hpp>

#include "sepsislab/errors.hpp"

namespace sepsislab {

namespace {

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

double parse_double(std::string_view s, std::size_t line, const char* what) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v))
        throw DataError(std::string("invalid ") + what + " '" + std::string(s) + "'", line);
    return v;
}

// Iterates the data lines of a CSV body, checking the header first.
template <typename F>
void for_each_row(const std::string& body, const std::vector<std::string>& expected_header, const char* file, F&& fn) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool header_seen = false;
    while (pos < body.size()) {
        auto end = body.find('\n', pos);
        if (end == std::string::npos) end = body.size();
        std::string_view line(body.data() + pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        auto fields = split(line);
        if (!header_seen) {
            header_seen = true;
            bool ok = fields.size() == expected_header.size();
            for (std::size_t i = 0; ok && i < fields.size(); ++i) ok = fields[i] == expected_header[i];
            if (!ok) throw DataError(std::string("unexpected header in ") + file, line_no);
            continue;
        }
        if (fields.size() != expected_header.size())
            throw DataError(std::string("expected ") + std::to_string(expected_header.size()) + " fields in " + file +
                                ", got " + std::to_string(fields.size()),
                            line_no);
        fn(fields, line_no);
    }
    if (!header_seen) throw DataError(std::string("missing header in ") + file, 1);
}

std::size_t count_flag_columns(const std::string& statics_csv) {
    auto end = statics_csv.find('\n');
    std::string_view header(statics_csv.data(), end == std::string::npos ? statics_csv.size() : end);
    if (!header.empty() && header.back() == '\r') header.remove_suffix(1);
    auto fields = split(header);
    if (fields.size() < 3) throw DataError("statics header must start with patient_id,age,sex", 1);
    return fields.size() - 3;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + p.string());
    out << body;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

Cohort parse_cohort(const std::string& events_csv, const std::string& statics_csv, const std::string* labels_csv,
                    const Vocabulary& vocab) {
    Cohort cohort;
    cohort.vocabulary = vocab;
    cohort.n_flags = count_flag_columns(statics_csv);

    std::vector<std::string> statics_header = {"patient_id", "age", "sex"};
    for (std::size_t i = 0; i < cohort.n_flags; ++i) statics_header.push_back("flag_" + std::to_string(i));

    std::map<std::string, PatientRecord> by_id;
    for_each_row(statics_csv, statics_header, kStaticsFile, [&](const auto& f, std::size_t line) {
        PatientRecord rec;
        rec.patient_id = std::string(f[0]);
        if (rec.patient_id.empty()) throw DataError("empty patient_id", line);
        rec.static_info.age = parse_double(f[1], line, "age");
        rec.static_info.sex = std::string(f[2]);
        for (std::size_t i = 0; i < cohort.n_flags; ++i) {
            const auto& s = f[3 + i];
            if (s != "0" && s != "1") throw DataError("history flag must be 0 or 1", line);
            rec.static_info.history_flags.push_back(s == "1" ? 1 : 0);
        }
        if (!by_id.emplace(rec.patient_id, std::move(rec)).second)
            throw DataError("duplicate patient_id in statics", line);
    });

    for_each_row(events_csv, {"patient_id", "time_hours", "variable", "value"}, kEventsFile,
                 [&](const auto& f, std::size_t line) {
                     auto it = by_id.find(std::string(f[0]));
                     if (it == by_id.end())
                         throw DataError("event for patient '" + std::string(f[0]) + "' absent from statics", line);
                     Observation obs;
                     obs.time = parse_double(f[1], line, "time_hours");
                     if (obs.time < 0.0) throw DataError("negative time_hours", line);
                     obs.variable = vocab.id_of(f[2]);
                     obs.value = parse_double(f[3], line, "value");
                     it->second.observations.push_back(obs);
                 });

    if (labels_csv) {
        for_each_row(*labels_csv, {"patient_id", "label", "label_time_hours"}, kLabelsFile,
                     [&](const auto& f, std::size_t line) {
                         auto it = by_id.find(std::string(f[0]));
                         if (it == by_id.end())
                             throw DataError("label for patient '" + std::string(f[0]) + "' absent from statics", line);
                         if (f[1] != "0" && f[1] != "1") throw DataError("label must be 0 or 1", line);
                         Label label;
                         label.positive = f[1] == "1";
                         label.time = parse_double(f[2], line, "label_time_hours");
                         it->second.label = label;
                     });
    }

    cohort.patients.reserve(by_id.size());
    for (auto& [id, rec] : by_id) {
        rec.sort_observations();
        cohort.patients.push_back(std::move(rec));
    }
    return cohort;
}

Cohort ingest_cohort(const std::filesystem::path& dir) {
    const auto vocab_path = dir / kVocabularyFile;
    Vocabulary vocab = Vocabulary::standard();
    if (std::filesystem::exists(vocab_path)) {
        try {
            vocab = Vocabulary::from_json(nlohmann::json::parse(read_file(vocab_path)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("invalid vocabulary.json: ") + e.what());
        }
    }
    return ingest_cohort(dir, vocab);
}

Cohort ingest_cohort(const std::filesystem::path& dir, const Vocabulary& vocab) {
    const std::string events = read_file(dir / kEventsFile);
    const std::string statics = read_file(dir / kStaticsFile);
    const auto labels_path = dir / kLabelsFile;
    if (std::filesystem::exists(labels_path)) {
        const std::string labels = read_file(labels_path);
        return parse_cohort(events, statics, &labels, vocab);
    }
    return parse_cohort(events, statics, nullptr, vocab);
}

void write_cohort(const Cohort& cohort, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<const PatientRecord*> sorted;
    for (const auto& p : cohort.patients) sorted.push_back(&p);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto* a, const auto* b) { return a->patient_id < b->patient_id; });

    std::string events = "patient_id,time_hours,variable,value\n";
    std::string statics = "patient_id,age,sex";
    for (std::size_t i = 0; i < cohort.n_flags; ++i) statics += ",flag_" + std::to_string(i);
    statics += '\n';
    std::string labels = "patient_id,label,label_time_hours\n";
    bool any_label = false;

    for (const auto* p : sorted) {
        statics += p->patient_id + "," + format_double(p->static_info.age) + "," + p->static_info.sex;
        if (p->static_info.history_flags.size() != cohort.n_flags)
            throw ConfigError("patient " + p->patient_id + " has a history flag vector of the wrong length");
        for (auto f : p->static_info.history_flags) statics += f ? ",1" : ",0";
        statics += '\n';
        for (const auto& o : p->observations) {
            events += p->patient_id + "," + format_double(o.time) + "," + cohort.vocabulary[o.variable].name + "," +
                      format_double(o.value) + "\n";
        }
        if (p->label) {
            any_label = true;
            labels += p->patient_id + "," + (p->label->positive ? "1" : "0") + "," + format_double(p->label->time) +
                      "\n";
        }
    }
    write_file(dir / kEventsFile, events);
    write_file(dir / kStaticsFile, statics);
    if (any_label)
        write_file(dir / kLabelsFile, labels);
    else
        std::filesystem::remove(dir / kLabelsFile);
    write_file(dir / kVocabularyFile, cohort.vocabulary.to_json().dump(2) + "\n");
}

}  // namespace sepsislab
