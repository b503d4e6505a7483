#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "synthaug/errors.hpp"
#include "synthaug/pipeline.hpp"

namespace synthaug::pipeline {

namespace {

const char* kRunsHeader = "model,scenario,sampling,variant,run,accuracy,precision,recall,f1";
const char* kFidHeader = "generator,class,extractor,fid";
const char* kExpertHeader = "generator,class,agreement";
const std::vector<std::string> kMetrics{"accuracy", "precision", "recall", "f1"};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

const std::string& field(const std::string& s) {
    if (s.empty() || s.find_first_of(",\"\n\r") != std::string::npos) {
        throw std::invalid_argument("report field '" + s + "' is empty or holds CSV metacharacters");
    }
    return s;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text, const std::string& header, const std::string& what) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != header) throw FormatError(what + ": expected header '" + header + "'");
    const auto width = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',') + 1);
    std::vector<std::vector<std::string>> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() != width) {
            throw FormatError(what + " line " + std::to_string(lineno) + ": expected " + std::to_string(width) + " fields");
        }
        out.push_back(std::move(cells));
    }
    return out;
}

double to_double(const std::string& s, const std::string& what) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) throw FormatError(what + ": bad number '" + s + "'");
    return v;
}

int to_int(const std::string& s, const std::string& what) {
    std::size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (s.empty() || used != s.size()) throw FormatError(what + ": bad integer '" + s + "'");
    return v;
}

double metric_of(const RunRow& r, const std::string& m) {
    if (m == "accuracy") return r.accuracy;
    if (m == "precision") return r.precision;
    if (m == "recall") return r.recall;
    return r.f1;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("failed writing " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string pad(std::string s, std::size_t width) {
    // "±" is two bytes but one column.
    std::size_t cols = 0;
    for (unsigned char c : s) cols += (c & 0xC0) != 0x80;
    if (cols < width) s.append(width - cols, ' ');
    return s;
}

} // namespace

void ExperimentReport::validate() const {
    if (rows.empty()) throw std::invalid_argument("report has no classifier rows");
    std::vector<std::string> models;
    std::map<std::pair<std::string, std::string>, std::vector<int>> runs;
    for (const auto& r : rows) {
        field(r.model), field(r.scenario), field(r.sampling), field(r.variant);
        if (std::find(kVariants.begin(), kVariants.end(), r.variant) == kVariants.end()) {
            throw std::invalid_argument("unknown variant '" + r.variant + "'");
        }
        if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
        runs[{r.model, r.variant}].push_back(r.run);
        if (r.scenario != rows.front().scenario || r.sampling != rows.front().sampling) {
            throw std::invalid_argument("report mixes scenarios or sampling methods");
        }
    }
    const std::size_t n = runs.begin()->second.size();
    if (n < 2) throw std::invalid_argument("report needs at least 2 runs per model and variant");
    for (const auto& m : models) {
        for (const auto& v : kVariants) {
            auto it = runs.find({m, v});
            if (it == runs.end()) throw std::invalid_argument("model " + m + " has no rows for variant " + v);
            auto ids = it->second;
            std::sort(ids.begin(), ids.end());
            if (ids.size() != n || std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
                throw std::invalid_argument("model " + m + " variant " + v + " has inconsistent runs");
            }
        }
    }
    if (rows.size() != models.size() * kVariants.size() * n) throw std::invalid_argument("report row count mismatch");
    for (const auto& f : fid_rows) field(f.generator), field(f.class_name), field(f.extractor);
    for (const auto& e : expert_rows) field(e.generator), field(e.class_name);
}

std::vector<AggregateRow> ExperimentReport::aggregates() const {
    std::vector<std::pair<std::string, std::string>> keys;
    for (const auto& r : rows) {
        std::pair<std::string, std::string> k{r.model, r.variant};
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
    std::vector<AggregateRow> out;
    for (const auto& [model, variant] : keys) {
        for (const auto& m : kMetrics) {
            std::vector<double> vals;
            for (const auto& r : rows) {
                if (r.model == model && r.variant == variant) vals.push_back(metric_of(r, m));
            }
            out.push_back({model, variant, m, metrics::run_stats(vals)});
        }
    }
    return out;
}

std::string format_cell(const metrics::RunAggregate& a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f \xC2\xB1 %.3f", a.mean, a.std);
    return buf;
}

std::string runs_csv(const std::vector<RunRow>& rows) {
    std::string s = std::string(kRunsHeader) + "\n";
    for (const auto& r : rows) {
        s += field(r.model) + "," + field(r.scenario) + "," + field(r.sampling) + "," + field(r.variant) + "," +
             std::to_string(r.run) + "," + num(r.accuracy) + "," + num(r.precision) + "," + num(r.recall) + "," +
             num(r.f1) + "\n";
    }
    return s;
}

std::vector<RunRow> parse_runs_csv(const std::string& text) {
    std::vector<RunRow> out;
    for (const auto& c : parse_csv(text, kRunsHeader, "runs.csv")) {
        out.push_back({c[0], c[1], c[2], c[3], to_int(c[4], "runs.csv"), to_double(c[5], "runs.csv"),
                       to_double(c[6], "runs.csv"), to_double(c[7], "runs.csv"), to_double(c[8], "runs.csv")});
    }
    return out;
}

std::string fid_csv(const std::vector<FidRow>& rows) {
    std::string s = std::string(kFidHeader) + "\n";
    for (const auto& r : rows) {
        s += field(r.generator) + "," + field(r.class_name) + "," + field(r.extractor) + "," + num(r.fid) + "\n";
    }
    return s;
}

std::vector<FidRow> parse_fid_csv(const std::string& text) {
    std::vector<FidRow> out;
    for (const auto& c : parse_csv(text, kFidHeader, "fid.csv")) out.push_back({c[0], c[1], c[2], to_double(c[3], "fid.csv")});
    return out;
}

std::string expert_csv(const std::vector<ExpertRow>& rows) {
    std::string s = std::string(kExpertHeader) + "\n";
    for (const auto& r : rows) s += field(r.generator) + "," + field(r.class_name) + "," + num(r.agreement) + "\n";
    return s;
}

std::vector<ExpertRow> parse_expert_csv(const std::string& text) {
    std::vector<ExpertRow> out;
    for (const auto& c : parse_csv(text, kExpertHeader, "expert.csv")) out.push_back({c[0], c[1], to_double(c[2], "expert.csv")});
    return out;
}

void emit_report(const ExperimentReport& report, const std::filesystem::path& dir) {
    report.validate();
    const auto aggs = report.aggregates();

    nlohmann::json j;
    j["scenario"] = report.rows.front().scenario;
    j["sampling"] = report.rows.front().sampling;
    auto& ja = j["aggregates"] = nlohmann::json::array();
    for (const auto& a : aggs) {
        ja.push_back({{"model", a.model},
                      {"variant", a.variant},
                      {"metric", a.metric},
                      {"mean", a.stats.mean},
                      {"std", a.stats.std},
                      {"n", a.stats.values.size()}});
    }
    auto& jf = j["fid"] = nlohmann::json::array();
    for (const auto& f : report.fid_rows) {
        jf.push_back({{"generator", f.generator}, {"class", f.class_name}, {"extractor", f.extractor}, {"fid", f.fid}});
    }
    auto& je = j["expert_agreement"] = nlohmann::json::array();
    for (const auto& e : report.expert_rows) {
        je.push_back({{"generator", e.generator}, {"class", e.class_name}, {"agreement", e.agreement}});
    }

    std::ostringstream txt;
    txt << "scenario: " << report.rows.front().scenario << ", sampling: " << report.rows.front().sampling << ", runs: "
        << aggs.front().stats.values.size() << "\n";
    std::vector<std::string> models;
    for (const auto& a : aggs) {
        if (std::find(models.begin(), models.end(), a.model) == models.end()) models.push_back(a.model);
    }
    for (const auto& m : kMetrics) {
        txt << "\n" << m << " (mean \xC2\xB1 SD)\n" << pad("model", 14);
        for (const auto& v : kVariants) txt << pad(v, 16);
        txt << "\n";
        for (const auto& model : models) {
            txt << pad(model, 14);
            for (const auto& v : kVariants) {
                for (const auto& a : aggs) {
                    if (a.model == model && a.variant == v && a.metric == m) txt << pad(format_cell(a.stats), 16);
                }
            }
            txt << "\n";
        }
    }
    if (!report.fid_rows.empty()) {
        txt << "\nFID\n";
        for (const auto& f : report.fid_rows) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.4f", f.fid);
            txt << pad(f.generator, 8) << pad(f.class_name, 10) << pad(f.extractor, 32) << buf << "\n";
        }
    }
    if (!report.expert_rows.empty()) {
        txt << "\nexpert agreement\n";
        for (const auto& e : report.expert_rows) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.3f", e.agreement);
            txt << pad(e.generator, 8) << pad(e.class_name, 10) << buf << "\n";
        }
    }

    std::filesystem::create_directories(dir);
    write_file(dir / "runs.csv", runs_csv(report.rows));
    write_file(dir / "fid.csv", fid_csv(report.fid_rows));
    write_file(dir / "expert.csv", expert_csv(report.expert_rows));
    write_file(dir / "summary.json", j.dump(2) + "\n");
    write_file(dir / "summary.txt", txt.str());
}

ExperimentReport read_report(const std::filesystem::path& dir) {
    ExperimentReport r;
    r.rows = parse_runs_csv(read_file(dir / "runs.csv"));
    if (std::filesystem::exists(dir / "fid.csv")) r.fid_rows = parse_fid_csv(read_file(dir / "fid.csv"));
    if (std::filesystem::exists(dir / "expert.csv")) r.expert_rows = parse_expert_csv(read_file(dir / "expert.csv"));
    return r;
}

} // namespace synthaug::pipeline
