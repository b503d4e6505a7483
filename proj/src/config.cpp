#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "synthaug/errors.hpp"
#include "synthaug/pipeline.hpp"

namespace synthaug::pipeline {

using json = nlohmann::json;

namespace {

std::string join(const std::string& parent, const std::string& key) { return parent.empty() ? key : parent + "." + key; }

const char* type_name(const json& j) { return j.type_name(); }

// One JSON object level. Every key read is recorded so finish() can reject the rest.
class Reader {
public:
    Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) {
            throw ConfigError(path_.empty() ? "$" : path_, std::string("expected an object, got ") + type_name(obj_));
        }
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = obj_.find(key);
        if (it == obj_.end() || it->is_null()) return nullptr;
        return &*it;
    }

    std::string path(const std::string& key) const { return join(path_, key); }

    void integer(const std::string& key, int& out, int lo = std::numeric_limits<int>::min()) {
        if (const json* v = find(key)) {
            if (!v->is_number_integer()) throw ConfigError(path(key), std::string("expected an integer, got ") + type_name(*v));
            const auto x = v->get<std::int64_t>();
            if (x > std::numeric_limits<int>::max() || x < std::numeric_limits<int>::min()) {
                throw ConfigError(path(key), "integer out of range");
            }
            out = static_cast<int>(x);
        }
        if (out < lo) throw ConfigError(path(key), "must be >= " + std::to_string(lo));
    }

    void unsigned64(const std::string& key, std::uint64_t& out) {
        if (const json* v = find(key)) {
            if (!v->is_number_unsigned()) {
                throw ConfigError(path(key), std::string("expected a non-negative integer, got ") + type_name(*v));
            }
            out = v->get<std::uint64_t>();
        }
    }

    void number(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) throw ConfigError(path(key), std::string("expected a number, got ") + type_name(*v));
            out = v->get<double>();
        }
        if (!std::isfinite(out)) throw ConfigError(path(key), "must be finite");
    }

    void positive(const std::string& key, double& out) {
        number(key, out);
        if (!(out > 0.0)) throw ConfigError(path(key), "must be positive");
    }

    void boolean(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(path(key), std::string("expected a boolean, got ") + type_name(*v));
            out = v->get<bool>();
        }
    }

    bool string(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) throw ConfigError(path(key), std::string("expected a string, got ") + type_name(*v));
            out = v->get<std::string>();
            return true;
        }
        return false;
    }

    // Parses an enum-like string with `convert`; conversion errors get the key path.
    template <typename E, typename F>
    void choice(const std::string& key, E& out, F convert) {
        std::string s;
        if (!string(key, s)) return;
        try {
            out = convert(s);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(path(key), e.what());
        }
    }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError(path(it.key()), "unknown key");
        }
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_corpus(const json& j, const std::string& path, CorpusSource& c) {
    Reader r(j, path);
    std::string dir;
    if (r.string("directory", dir)) c.directory = dir;
    r.integer("n_per_class", c.n_per_class, 1);
    r.integer("size", c.size, 16);
    if (c.size & (c.size - 1)) throw ConfigError(r.path("size"), "must be a power of two");
    if (r.find("seed")) {
        std::uint64_t s = 0;
        r.unsigned64("seed", s);
        c.seed = s;
    }
    r.finish();
}

void read_scenario(const json& j, const std::string& path, selection::ScenarioSpec& s) {
    Reader r(j, path);
    r.choice("kind", s.kind, selection::scenario_kind_from_string);
    r.choice("sampling", s.sampling, selection::sampling_from_string);
    r.integer("n_small_per_class", s.n_small_per_class, 1);
    r.integer("n_major", s.n_major, 1);
    r.integer("n_minor", s.n_minor, 1);
    r.integer("test_sets", s.test_sets, 1);
    r.integer("n_major_test", s.n_major_test, 1);
    r.integer("n_minor_test", s.n_minor_test, 1);
    r.positive("factor", s.factor);
    r.integer("major_label", s.major_label, 0);
    r.integer("minor_label", s.minor_label, 0);
    r.finish();
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
    }
}

void read_ddpm(const json& j, const std::string& path, DdpmSettings& d) {
    Reader r(j, path);
    r.integer("timesteps", d.timesteps, 1);
    r.positive("beta_start", d.beta_start);
    r.positive("beta_end", d.beta_end);
    if (!(d.beta_start <= d.beta_end && d.beta_end < 1.0)) {
        throw ConfigError(r.path("beta_end"), "need 0 < beta_start <= beta_end < 1");
    }
    r.integer("epochs", d.epochs, 1);
    r.integer("steps", d.steps, 0);
    r.integer("batch_size", d.batch_size, 1);
    r.positive("lr", d.lr);
    r.integer("base_channels", d.base_channels, 1);
    r.integer("depth", d.depth, 1);
    r.integer("time_dim", d.time_dim, 2);
    if (d.time_dim % 2) throw ConfigError(r.path("time_dim"), "must be even");
    r.finish();
}

void read_pggan(const json& j, const std::string& path, pggan::GanConfig& g) {
    Reader r(j, path);
    r.integer("latent_dim", g.latent_dim, 2);
    if (const json* f = r.find("filters")) {
        Reader fr(*f, r.path("filters"));
        g.filters_by_resolution.clear();
        for (auto it = f->begin(); it != f->end(); ++it) {
            int res = 0;
            try {
                std::size_t used = 0;
                res = std::stoi(it.key(), &used);
                if (used != it.key().size()) throw std::invalid_argument("trailing characters");
            } catch (const std::exception&) {
                throw ConfigError(fr.path(it.key()), "filter keys are resolutions such as \"8\"");
            }
            int n = 0;
            fr.integer(it.key(), n, 1);
            g.filters_by_resolution[res] = n;
        }
        fr.finish();
    }
    r.integer("batch_size", g.batch_size, 2);
    r.choice("loss", g.loss_mode, pggan::loss_mode_from_string);
    r.number("gp_lambda", g.gp_lambda);
    if (g.gp_lambda < 0) throw ConfigError(r.path("gp_lambda"), "must be >= 0");
    r.boolean("non_saturating", g.non_saturating);
    r.integer("steps_per_stage", g.steps_per_stage, 2);
    r.positive("lr", g.lr);
    r.number("beta1", g.adam.beta1);
    r.number("beta2", g.adam.beta2);
    r.finish();
}

void read_classifier(const json& j, const std::string& path, ClassifierSettings& c) {
    Reader r(j, path);
    r.integer("input_size", c.input_size, 32);
    if (c.input_size % 32) throw ConfigError(r.path("input_size"), "must be a multiple of 32");
    r.integer("batch_size", c.batch_size, 1);
    r.positive("lr", c.lr);
    if (const json* e = r.find("epochs")) {
        Reader er(*e, r.path("epochs"));
        for (auto kind : {classify::ModelKind::custom_cnn, classify::ModelKind::vgg16}) {
            er.integer(classify::to_string(kind), c.epochs[kind], 1);
        }
        er.finish();
    }
    r.boolean("save_checkpoints", c.save_checkpoints);
    r.finish();
}

void read_expert(const json& j, const std::string& path, ExpertSettings& x) {
    Reader r(j, path);
    r.choice("model", x.model, classify::model_kind_from_string);
    r.integer("epochs", x.epochs, 1);
    r.finish();
}

template <typename E, typename F>
std::vector<E> read_list(const json& j, const std::string& path, F convert) {
    if (!j.is_array()) throw ConfigError(path, std::string("expected an array, got ") + type_name(j));
    std::vector<E> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string p = path + "[" + std::to_string(i) + "]";
        if (!j[i].is_string()) throw ConfigError(p, "expected a string");
        try {
            out.push_back(convert(j[i].get<std::string>()));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(p, e.what());
        }
        for (std::size_t k = 0; k + 1 < out.size(); ++k) {
            if (out[k] == out.back()) throw ConfigError(p, "duplicate entry");
        }
    }
    if (out.empty()) throw ConfigError(path, "must not be empty");
    return out;
}

} // namespace

int DdpmSettings::training_steps(std::size_t class_size) const {
    if (steps > 0) return steps;
    const auto per_epoch = (class_size + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
    return epochs * static_cast<int>(std::max<std::size_t>(per_epoch, 1));
}

UNetConfig DdpmSettings::unet(int size) const {
    UNetConfig u;
    u.input_size = size;
    u.base_channels = base_channels;
    u.depth = depth;
    u.time_dim = time_dim;
    u.channels = 1;
    return u;
}

int ClassifierSettings::epochs_for(classify::ModelKind kind) const {
    auto it = epochs.find(kind);
    return it == epochs.end() ? 20 : it->second;
}

int ExperimentConfig::synth_count() const {
    if (synth_per_class) return *synth_per_class;
    return static_cast<int>(std::max<std::size_t>(scenario.scaled(2000), 1));
}

void ExperimentConfig::validate() const {
    if (runs < 2) throw ConfigError("runs", "must be >= 2 so a standard deviation exists");
    if (synth_per_class && *synth_per_class < 1) throw ConfigError("synth_per_class", "must be >= 1");
    if (models.empty()) throw ConfigError("models", "must not be empty");
    if (fid_extractors.empty()) throw ConfigError("fid_extractors", "must not be empty");
    if (corpus.size % (1 << ddpm.depth)) throw ConfigError("ddpm.depth", "corpus size must be divisible by 2^depth");
    try {
        scenario.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("scenario", e.what());
    }
    auto gan = pggan;
    gan.target_resolution = corpus.size;
    try {
        gan.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("pggan", e.what());
    }
}

ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("$", std::string("syntax error: ") + e.what());
    }
    ExperimentConfig cfg;
    Reader r(j, "");
    r.unsigned64("master_seed", cfg.master_seed);
    std::string out;
    if (r.string("output_dir", out)) cfg.output_dir = out;
    if (const json* v = r.find("corpus")) read_corpus(*v, "corpus", cfg.corpus);
    if (const json* v = r.find("scenario")) read_scenario(*v, "scenario", cfg.scenario);
    if (const json* v = r.find("ddpm")) read_ddpm(*v, "ddpm", cfg.ddpm);
    if (const json* v = r.find("pggan")) read_pggan(*v, "pggan", cfg.pggan);
    if (r.find("synth_per_class")) {
        int n = 0;
        r.integer("synth_per_class", n, 1);
        cfg.synth_per_class = n;
    }
    if (const json* v = r.find("models")) {
        cfg.models = read_list<classify::ModelKind>(*v, "models", classify::model_kind_from_string);
    }
    if (const json* v = r.find("classifier")) read_classifier(*v, "classifier", cfg.classifier);
    if (const json* v = r.find("expert")) read_expert(*v, "expert", cfg.expert);
    if (const json* v = r.find("fid_extractors")) {
        cfg.fid_extractors = read_list<metrics::Extractor>(*v, "fid_extractors", metrics::extractor_from_string);
    }
    r.integer("runs", cfg.runs);
    r.finish();
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("$", "cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["master_seed"] = cfg.master_seed;
    j["output_dir"] = cfg.output_dir.string();
    auto& c = j["corpus"];
    c["directory"] = cfg.corpus.directory ? json(cfg.corpus.directory->string()) : json(nullptr);
    c["n_per_class"] = cfg.corpus.n_per_class;
    c["size"] = cfg.corpus.size;
    c["seed"] = cfg.corpus.seed ? json(*cfg.corpus.seed) : json(nullptr);
    const auto& s = cfg.scenario;
    j["scenario"] = {{"kind", selection::to_string(s.kind)},
                     {"sampling", selection::to_string(s.sampling)},
                     {"n_small_per_class", s.n_small_per_class},
                     {"n_major", s.n_major},
                     {"n_minor", s.n_minor},
                     {"test_sets", s.test_sets},
                     {"n_major_test", s.n_major_test},
                     {"n_minor_test", s.n_minor_test},
                     {"factor", s.factor},
                     {"major_label", s.major_label},
                     {"minor_label", s.minor_label}};
    const auto& d = cfg.ddpm;
    j["ddpm"] = {{"timesteps", d.timesteps}, {"beta_start", d.beta_start}, {"beta_end", d.beta_end},
                 {"epochs", d.epochs},       {"steps", d.steps},           {"batch_size", d.batch_size},
                 {"lr", d.lr},               {"base_channels", d.base_channels}, {"depth", d.depth},
                 {"time_dim", d.time_dim}};
    const auto& g = cfg.pggan;
    json filters = json::object();
    for (int r = 4; r <= cfg.corpus.size; r *= 2) filters[std::to_string(r)] = g.filters_at(r);
    j["pggan"] = {{"latent_dim", g.latent_dim},
                  {"filters", filters},
                  {"batch_size", g.batch_size},
                  {"loss", pggan::to_string(g.loss_mode)},
                  {"gp_lambda", g.gp_lambda},
                  {"non_saturating", g.non_saturating},
                  {"steps_per_stage", g.steps_per_stage},
                  {"lr", g.lr},
                  {"beta1", g.adam.beta1},
                  {"beta2", g.adam.beta2}};
    j["synth_per_class"] = cfg.synth_count();
    json models = json::array();
    for (auto m : cfg.models) models.push_back(classify::to_string(m));
    j["models"] = models;
    json epochs = json::object();
    for (auto kind : {classify::ModelKind::custom_cnn, classify::ModelKind::vgg16}) {
        epochs[classify::to_string(kind)] = cfg.classifier.epochs_for(kind);
    }
    j["classifier"] = {{"input_size", cfg.classifier.input_size},
                       {"batch_size", cfg.classifier.batch_size},
                       {"lr", cfg.classifier.lr},
                       {"epochs", epochs},
                       {"save_checkpoints", cfg.classifier.save_checkpoints}};
    j["expert"] = {{"model", classify::to_string(cfg.expert.model)}, {"epochs", cfg.expert.epochs}};
    json ex = json::array();
    for (auto e : cfg.fid_extractors) ex.push_back(metrics::to_string(e));
    j["fid_extractors"] = ex;
    j["runs"] = cfg.runs;
    return j.dump(2) + "\n";
}

} // namespace synthaug::pipeline
