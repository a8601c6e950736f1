// Configuration-driven front end gluing the pipeline stages together:
// synth -> featurize -> train -> predict -> simulate -> evaluate, plus a
// gradcheck command that finite-difference-verifies every layer kind. One
// text config file (INI sections with typed keys) drives everything; every
// run echoes its fully resolved configuration next to its artifacts so any
// stage can be rerun independently and reruns are byte-identical.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "luc/ca.hpp"
#include "luc/common.hpp"
#include "luc/features.hpp"
#include "luc/metrics.hpp"
#include "luc/models.hpp"
#include "luc/nn.hpp"
#include "luc/raster.hpp"
#include "luc/synth.hpp"

namespace luc::pipeline {

// ---------------------------------------------------------------------------
// Logging. One line per event on stderr: timestamp, level, key=value pairs.
// Artifacts never carry timestamps; only the log stream does.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string log_timestamp() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string log_quote(const std::string& v) {
    if (!v.empty() && v.find_first_of(" =\"") == std::string::npos) return v;
    std::string q = "\"";
    for (char c : v) {
        if (c == '"' || c == '\\') q += '\\';
        q += c;
    }
    q += '"';
    return q;
}

}  // namespace detail

using LogFields = std::vector<std::pair<std::string, std::string>>;

inline void log_event(const std::string& level, const LogFields& fields) {
    std::ostringstream line;
    line << detail::log_timestamp() << ' ' << level;
    for (const auto& [k, v] : fields) line << ' ' << k << '=' << detail::log_quote(v);
    std::cerr << line.str() << '\n';
}

inline void log_info(const LogFields& fields) { log_event("info", fields); }

// ---------------------------------------------------------------------------
// Config file: INI sections, '#' or ';' comment lines, key = value.
// ---------------------------------------------------------------------------

struct IniEntry {
    std::string section;
    std::string key;
    std::string value;
    int line = 0;

    std::string full_key() const { return section + "." + key; }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

inline std::vector<IniEntry> parse_ini(std::istream& in, const std::string& origin) {
    std::vector<IniEntry> entries;
    std::string section, raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const std::string s = detail::trim(raw);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw config_error(origin + ":" + std::to_string(line) + ": unterminated section header");
            section = detail::trim(s.substr(1, s.size() - 2));
            if (section.empty())
                throw config_error(origin + ":" + std::to_string(line) + ": empty section name");
            continue;
        }
        const size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw config_error(origin + ":" + std::to_string(line) + ": expected key = value");
        if (section.empty())
            throw config_error(origin + ":" + std::to_string(line) + ": key outside any [section]");
        IniEntry e;
        e.section = section;
        e.key = detail::trim(s.substr(0, eq));
        e.value = detail::trim(s.substr(eq + 1));
        e.line = line;
        if (e.key.empty())
            throw config_error(origin + ":" + std::to_string(line) + ": empty key");
        entries.push_back(std::move(e));
    }
    return entries;
}

// ---------------------------------------------------------------------------
// Typed value parsing. Every error names the offending key.
// ---------------------------------------------------------------------------

namespace detail {

inline long parse_long(const std::string& key, const std::string& v) {
    size_t pos = 0;
    long out = 0;
    try {
        out = std::stol(v, &pos);
    } catch (const std::exception&) {
        throw config_error(key + ": '" + v + "' is not an integer");
    }
    if (pos != v.size()) throw config_error(key + ": '" + v + "' is not an integer");
    return out;
}

inline uint64_t parse_seed(const std::string& key, const std::string& v) {
    size_t pos = 0;
    unsigned long long out = 0;
    try {
        out = std::stoull(v, &pos);
    } catch (const std::exception&) {
        throw config_error(key + ": '" + v + "' is not a non-negative integer");
    }
    if (pos != v.size()) throw config_error(key + ": '" + v + "' is not a non-negative integer");
    return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
    size_t pos = 0;
    double out = 0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw config_error(key + ": '" + v + "' is not a number");
    }
    if (pos != v.size()) throw config_error(key + ": '" + v + "' is not a number");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw config_error(key + ": '" + v + "' is not a boolean (use true/false)");
}

inline std::vector<std::string> split_csv(const std::string& v) {
    std::vector<std::string> items;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) items.push_back(trim(item));
    if (!items.empty() && items.back().empty()) items.pop_back();
    return items;
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const std::string& item : split_csv(v))
        out.push_back(static_cast<int>(parse_long(key, item)));
    return out;
}

inline std::string format_int_list(const std::vector<int>& xs) {
    std::string s;
    for (size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
    return s;
}

inline Category parse_category(const std::string& key, const std::string& v) {
    for (Category c = 0; c < 4; ++c)
        if (v == synth::category_name(c)) return c;
    const long code = parse_long(key, v);
    if (code < 0 || code > 255)
        throw config_error(key + ": category code " + v + " is out of range [0,255]");
    return static_cast<Category>(code);
}

inline std::string format_category(Category c) {
    if (c < 4) return synth::category_name(c);
    return std::to_string(static_cast<int>(c));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// The resolved configuration. One section per pipeline stage; defaults are
// desk-scale so the bundled config runs in seconds.
// ---------------------------------------------------------------------------

struct PathsConfig {
    std::string out = "out";
    std::string scenario;  // base path; synth writes <scenario>.t0.lucr etc.
    std::string t0, t1, image;
    std::string features;
    std::string model;  // base path; train writes <model>.lucw/.manifest/.history.csv
    std::string prediction;
    std::string simulated, ca_log;
    std::string report, report_csv, ranking;
};

// Empty path keys resolve against the output directory so one --out flag
// relocates a whole run while explicit keys still win.
inline void resolve_paths(PathsConfig& p) {
    auto fallback = [](std::string& s, const std::string& v) {
        if (s.empty()) s = v;
    };
    fallback(p.scenario, p.out + "/scenario");
    fallback(p.t0, p.scenario + ".t0.lucr");
    fallback(p.t1, p.scenario + ".t1.lucr");
    fallback(p.image, p.scenario + ".image.lucf");
    fallback(p.features, p.out + "/features.lucf");
    fallback(p.model, p.out + "/model");
    fallback(p.prediction, p.out + "/prediction.lucf");
    fallback(p.simulated, p.out + "/simulated.lucr");
    fallback(p.ca_log, p.out + "/allocation.log");
    fallback(p.report, p.out + "/report.txt");
    fallback(p.report_csv, p.out + "/report.csv");
    fallback(p.ranking, p.out + "/ranking.csv");
}

struct FeaturesConfig {
    int window = 5;           // enrichment neighborhood (odd)
    double cell_size = 30.0;  // meters, for distance features
    bool distances = true;    // add a distance-to-category field per class
};

struct TrainSection {
    nn::TrainConfig opt;
    double jitter = 0.0;                // patch brightness jitter strength
    int eval_every = 10;                // validation cadence in steps
    double validation_fraction = 0.25;  // right-edge strip held out
    int cdae_steps = 200;               // autoencoder pretraining steps
};

struct MetricsSection {
    std::vector<int> neighborhoods = {3, 7, 11};
    int shuffles = 20;
    uint64_t seed = 1;
};

struct PipelineConfig {
    PathsConfig paths;
    luc::synth::SynthConfig synth;
    FeaturesConfig features;
    luc::model::ModelConfig net;             // [model] section
    Category from = luc::synth::kForest;     // model.from
    Category to = luc::synth::kAgriculture;  // model.to
    TrainSection train;
    luc::ca::CaParams ca;
    MetricsSection metrics;
};

// One root seed fans out into decorrelated per-stage streams so a single
// --seed flag still changes every stochastic stage coherently.
inline void apply_root_seed(PipelineConfig& cfg, uint64_t seed) {
    cfg.synth.rng_seed = derive_seed(seed, "synth");
    cfg.train.opt.rng_seed = derive_seed(seed, "train");
    cfg.ca.rng_seed = derive_seed(seed, "ca");
    cfg.metrics.seed = derive_seed(seed, "metrics");
}

// ---------------------------------------------------------------------------
// Schema: one entry per key with a typed setter and a formatter. The same
// table drives parsing, --set overrides, unknown-key detection, and the
// resolved-config echo, so they can never drift apart.
// ---------------------------------------------------------------------------

struct SchemaEntry {
    std::string key;  // "section.key"
    std::function<void(PipelineConfig&, const std::string&)> set;
    std::function<std::string(const PipelineConfig&)> get;
};

namespace detail {

template <class Acc>
SchemaEntry string_key(const std::string& key, Acc acc) {
    return {key, [acc](PipelineConfig& c, const std::string& v) { acc(c) = v; },
            [acc](const PipelineConfig& c) { return acc(c); }};
}

template <class Acc>
SchemaEntry int_key(const std::string& key, Acc acc) {
    return {key,
            [key, acc](PipelineConfig& c, const std::string& v) {
                acc(c) = static_cast<int>(parse_long(key, v));
            },
            [acc](const PipelineConfig& c) { return std::to_string(acc(c)); }};
}

template <class Acc>
SchemaEntry seed_key(const std::string& key, Acc acc) {
    return {key, [key, acc](PipelineConfig& c, const std::string& v) { acc(c) = parse_seed(key, v); },
            [acc](const PipelineConfig& c) { return std::to_string(acc(c)); }};
}

template <class Acc>
SchemaEntry double_key(const std::string& key, Acc acc) {
    return {key, [key, acc](PipelineConfig& c, const std::string& v) { acc(c) = parse_double(key, v); },
            [acc](const PipelineConfig& c) { return fmt_double(acc(c)); }};
}

template <class Acc>
SchemaEntry bool_key(const std::string& key, Acc acc) {
    return {key, [key, acc](PipelineConfig& c, const std::string& v) { acc(c) = parse_bool(key, v); },
            [acc](const PipelineConfig& c) { return acc(c) ? "true" : "false"; }};
}

template <class Acc>
SchemaEntry ints_key(const std::string& key, Acc acc) {
    return {key,
            [key, acc](PipelineConfig& c, const std::string& v) { acc(c) = parse_int_list(key, v); },
            [acc](const PipelineConfig& c) { return format_int_list(acc(c)); }};
}

template <class Acc>
SchemaEntry category_key(const std::string& key, Acc acc) {
    return {key,
            [key, acc](PipelineConfig& c, const std::string& v) { acc(c) = parse_category(key, v); },
            [acc](const PipelineConfig& c) { return format_category(acc(c)); }};
}

// 7 comma-separated band means for one synthetic category signature
template <class Acc>
SchemaEntry signature_key(const std::string& key, Acc acc) {
    return {key,
            [key, acc](PipelineConfig& c, const std::string& v) {
                const std::vector<std::string> items = split_csv(v);
                if (items.size() != synth::kBands)
                    throw config_error(key + ": expected " + std::to_string(synth::kBands) +
                                       " band values, got " + std::to_string(items.size()));
                for (size_t b = 0; b < items.size(); ++b) acc(c)[b] = parse_double(key, items[b]);
            },
            [acc](const PipelineConfig& c) {
                std::string s;
                for (size_t b = 0; b < synth::kBands; ++b)
                    s += (b ? "," : "") + fmt_double(acc(c)[b]);
                return s;
            }};
}

}  // namespace detail

inline const std::vector<SchemaEntry>& config_schema() {
    using namespace detail;
    static const std::vector<SchemaEntry> schema = {
        string_key("paths.out", [](auto& c) -> auto& { return c.paths.out; }),
        string_key("paths.scenario", [](auto& c) -> auto& { return c.paths.scenario; }),
        string_key("paths.t0", [](auto& c) -> auto& { return c.paths.t0; }),
        string_key("paths.t1", [](auto& c) -> auto& { return c.paths.t1; }),
        string_key("paths.image", [](auto& c) -> auto& { return c.paths.image; }),
        string_key("paths.features", [](auto& c) -> auto& { return c.paths.features; }),
        string_key("paths.model", [](auto& c) -> auto& { return c.paths.model; }),
        string_key("paths.prediction", [](auto& c) -> auto& { return c.paths.prediction; }),
        string_key("paths.simulated", [](auto& c) -> auto& { return c.paths.simulated; }),
        string_key("paths.ca_log", [](auto& c) -> auto& { return c.paths.ca_log; }),
        string_key("paths.report", [](auto& c) -> auto& { return c.paths.report; }),
        string_key("paths.report_csv", [](auto& c) -> auto& { return c.paths.report_csv; }),
        string_key("paths.ranking", [](auto& c) -> auto& { return c.paths.ranking; }),

        int_key("synth.width", [](auto& c) -> auto& { return c.synth.width; }),
        int_key("synth.height", [](auto& c) -> auto& { return c.synth.height; }),
        double_key("synth.cell_size", [](auto& c) -> auto& { return c.synth.cell_size; }),
        double_key("synth.noise_sd", [](auto& c) -> auto& { return c.synth.noise_sd; }),
        int_key("synth.smoothing_radius", [](auto& c) -> auto& { return c.synth.smoothing_radius; }),
        double_key("synth.trigger_rate", [](auto& c) -> auto& { return c.synth.trigger_rate; }),
        double_key("synth.trigger_strength",
                   [](auto& c) -> auto& { return c.synth.trigger_strength; }),
        signature_key("synth.signature_water", [](auto& c) -> auto& { return c.synth.signatures[0]; }),
        signature_key("synth.signature_agriculture",
                      [](auto& c) -> auto& { return c.synth.signatures[1]; }),
        signature_key("synth.signature_forest",
                      [](auto& c) -> auto& { return c.synth.signatures[2]; }),
        signature_key("synth.signature_built_up",
                      [](auto& c) -> auto& { return c.synth.signatures[3]; }),
        category_key("synth.rule_from", [](auto& c) -> auto& { return c.synth.rule.from; }),
        category_key("synth.rule_to", [](auto& c) -> auto& { return c.synth.rule.to; }),
        double_key("synth.beta_bias", [](auto& c) -> auto& { return c.synth.rule.beta_bias; }),
        double_key("synth.beta_enrichment",
                   [](auto& c) -> auto& { return c.synth.rule.beta_enrichment; }),
        double_key("synth.beta_distance",
                   [](auto& c) -> auto& { return c.synth.rule.beta_distance; }),
        double_key("synth.beta_trigger", [](auto& c) -> auto& { return c.synth.rule.beta_trigger; }),
        int_key("synth.enrichment_window",
                [](auto& c) -> auto& { return c.synth.rule.enrichment_window; }),
        seed_key("synth.seed", [](auto& c) -> auto& { return c.synth.rng_seed; }),

        int_key("features.window", [](auto& c) -> auto& { return c.features.window; }),
        double_key("features.cell_size", [](auto& c) -> auto& { return c.features.cell_size; }),
        bool_key("features.distances", [](auto& c) -> auto& { return c.features.distances; }),

        string_key("model.kind", [](auto& c) -> auto& { return c.net.kind; }),
        category_key("model.from", [](auto& c) -> auto& { return c.from; }),
        category_key("model.to", [](auto& c) -> auto& { return c.to; }),
        int_key("model.patch_size", [](auto& c) -> auto& { return c.net.patch_size; }),
        bool_key("model.spatial_weight", [](auto& c) -> auto& { return c.net.spatial_weight; }),
        string_key("model.pooling", [](auto& c) -> auto& { return c.net.pooling; }),
        ints_key("model.geo_hidden", [](auto& c) -> auto& { return c.net.geo_hidden; }),
        ints_key("model.trunk_filters", [](auto& c) -> auto& { return c.net.trunk_filters; }),
        ints_key("model.classifier_widths",
                 [](auto& c) -> auto& { return c.net.classifier_widths; }),
        ints_key("model.geo_branch_widths",
                 [](auto& c) -> auto& { return c.net.geo_branch_widths; }),
        ints_key("model.cdae_filters", [](auto& c) -> auto& { return c.net.cdae_filters; }),
        ints_key("model.cdae_classifier_widths",
                 [](auto& c) -> auto& { return c.net.cdae_classifier_widths; }),
        double_key("model.corruption_sigma",
                   [](auto& c) -> auto& { return c.net.corruption_sigma; }),

        int_key("train.steps", [](auto& c) -> auto& { return c.train.opt.max_steps; }),
        int_key("train.batch_size", [](auto& c) -> auto& { return c.train.opt.batch_size; }),
        double_key("train.learning_rate", [](auto& c) -> auto& { return c.train.opt.learning_rate; }),
        int_key("train.lr_decay_every", [](auto& c) -> auto& { return c.train.opt.lr_decay_every; }),
        double_key("train.lr_decay_factor",
                   [](auto& c) -> auto& { return c.train.opt.lr_decay_factor; }),
        double_key("train.momentum", [](auto& c) -> auto& { return c.train.opt.momentum; }),
        double_key("train.gradient_noise_eta",
                   [](auto& c) -> auto& { return c.train.opt.gradient_noise_eta; }),
        double_key("train.gradient_noise_gamma",
                   [](auto& c) -> auto& { return c.train.opt.gradient_noise_gamma; }),
        double_key("train.jitter", [](auto& c) -> auto& { return c.train.jitter; }),
        int_key("train.eval_every", [](auto& c) -> auto& { return c.train.eval_every; }),
        double_key("train.validation_fraction",
                   [](auto& c) -> auto& { return c.train.validation_fraction; }),
        int_key("train.cdae_steps", [](auto& c) -> auto& { return c.train.cdae_steps; }),
        seed_key("train.seed", [](auto& c) -> auto& { return c.train.opt.rng_seed; }),

        double_key("ca.threshold", [](auto& c) -> auto& { return c.ca.threshold; }),
        double_key("ca.expander_share", [](auto& c) -> auto& { return c.ca.expander_share; }),
        double_key("ca.expander_threshold",
                   [](auto& c) -> auto& { return c.ca.expander_threshold; }),
        double_key("ca.patch_size_mu", [](auto& c) -> auto& { return c.ca.patch_size_mu; }),
        double_key("ca.patch_size_sigma", [](auto& c) -> auto& { return c.ca.patch_size_sigma; }),
        double_key("ca.isometry", [](auto& c) -> auto& { return c.ca.isometry; }),
        double_key("ca.prune_factor", [](auto& c) -> auto& { return c.ca.prune_factor; }),
        seed_key("ca.seed", [](auto& c) -> auto& { return c.ca.rng_seed; }),

        ints_key("metrics.neighborhoods", [](auto& c) -> auto& { return c.metrics.neighborhoods; }),
        int_key("metrics.shuffles", [](auto& c) -> auto& { return c.metrics.shuffles; }),
        seed_key("metrics.seed", [](auto& c) -> auto& { return c.metrics.seed; }),
    };
    return schema;
}

namespace detail {

inline const std::map<std::string, const SchemaEntry*>& schema_index() {
    static const std::map<std::string, const SchemaEntry*> index = [] {
        std::map<std::string, const SchemaEntry*> m;
        for (const SchemaEntry& e : config_schema()) m[e.key] = &e;
        return m;
    }();
    return index;
}

// Applies one key=value; returns an error description instead of throwing so
// callers can gather every offender before failing.
inline std::string apply_key(PipelineConfig& cfg, const std::string& key, const std::string& value,
                             const std::string& where) {
    const auto& index = schema_index();
    const auto it = index.find(key);
    if (it == index.end()) return "unknown key '" + key + "'" + where;
    try {
        it->second->set(cfg, value);
    } catch (const config_error& e) {
        return std::string(e.what()) + where;
    }
    return "";
}

inline void raise_if_errors(const std::vector<std::string>& errors) {
    if (errors.empty()) return;
    std::string msg = "invalid configuration:";
    for (const std::string& e : errors) msg += "\n  " + e;
    throw config_error(msg);
}

}  // namespace detail

inline void apply_entries(PipelineConfig& cfg, const std::vector<IniEntry>& entries) {
    std::vector<std::string> errors;
    for (const IniEntry& e : entries) {
        const std::string err =
            detail::apply_key(cfg, e.full_key(), e.value, " (line " + std::to_string(e.line) + ")");
        if (!err.empty()) errors.push_back(err);
    }
    detail::raise_if_errors(errors);
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open config file: " + path);
    PipelineConfig cfg;
    apply_entries(cfg, parse_ini(f, path));
    return cfg;
}

// --set overrides, each "section.key=value", applied after the config file
inline void apply_overrides(PipelineConfig& cfg, const std::vector<std::string>& sets) {
    std::vector<std::string> errors;
    for (const std::string& s : sets) {
        const size_t eq = s.find('=');
        if (eq == std::string::npos) {
            errors.push_back("override '" + s + "' is not of the form key=value");
            continue;
        }
        const std::string err = detail::apply_key(cfg, detail::trim(s.substr(0, eq)),
                                                  detail::trim(s.substr(eq + 1)), " (--set)");
        if (!err.empty()) errors.push_back(err);
    }
    detail::raise_if_errors(errors);
}

// Fully resolved config in the same INI dialect the parser reads, so an
// echoed file can drive an identical rerun.
inline void write_config_echo(const PipelineConfig& cfg, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write config echo: " + path);
    std::string section;
    for (const SchemaEntry& e : config_schema()) {
        const size_t dot = e.key.find('.');
        const std::string sec = e.key.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) f << "\n";
            f << "[" << sec << "]\n";
            section = sec;
        }
        f << e.key.substr(dot + 1) << " = " << e.get(cfg) << "\n";
    }
    if (!f) throw data_error("failed writing config echo: " + path);
}

// ---------------------------------------------------------------------------
// Commands. Each one reads and writes only persisted artifacts, so any stage
// can be rerun on its own and the chain has no hidden in-memory handoff.
// ---------------------------------------------------------------------------

inline void cmd_synth(const PipelineConfig& cfg) {
    synth::SynthScenario s = synth::make_scenario(cfg.synth);
    synth::save_scenario(s, cfg.paths.scenario);
    log_info({{"event", "synth-done"},
              {"base", cfg.paths.scenario},
              {"eligible_cells", std::to_string(s.eligible_cells)},
              {"transitions", std::to_string(s.transitions)},
              {"oracle_auc", fmt_double(s.oracle_auc)}});
}

inline void cmd_featurize(const PipelineConfig& cfg) {
    const LuGrid t0 = load_grid(cfg.paths.t0);
    std::vector<std::pair<std::string, ScalarField>> aux;
    if (cfg.features.distances) {
        for (Category c : t0.categories()) {
            RegionMask target(t0.width(), t0.height());
            long count = 0;
            for (int y = 0; y < t0.height(); ++y)
                for (int x = 0; x < t0.width(); ++x)
                    if (!t0.masked(x, y) && t0.at(x, y) == c) {
                        target.set(x, y, true);
                        ++count;
                    }
            if (count == 0) continue;  // absent class: no distance surface
            aux.emplace_back("dist_" + detail::format_category(c),
                             distance_field(target, cfg.features.cell_size));
        }
    }
    const FeatureStack stack = build_feature_stack(t0, aux, cfg.features.window);
    save_stack(stack, cfg.paths.features);
    log_info({{"event", "featurize-done"},
              {"path", cfg.paths.features},
              {"features", std::to_string(stack.feature_count())}});
}

namespace detail {

inline std::shared_ptr<const MultiBandImage> load_image_if_needed(const std::string& kind,
                                                                  const std::string& path) {
    if (kind == "geo") return nullptr;
    return std::make_shared<const MultiBandImage>(load_image(path));
}

// Right-edge vertical strip of the map held out for validation
inline RegionMask validation_strip(int width, int height, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw config_error("validation_fraction must be in (0,1)");
    RegionMask region(width, height);
    const int cut = static_cast<int>(std::floor(static_cast<double>(width) * (1.0 - fraction)));
    for (int y = 0; y < height; ++y)
        for (int x = cut; x < width; ++x) region.set(x, y, true);
    return region;
}

}  // namespace detail

inline void cmd_train(const PipelineConfig& cfg) {
    const LuGrid t0 = load_grid(cfg.paths.t0);
    const LuGrid t1 = load_grid(cfg.paths.t1);
    const FeatureStack stack = load_stack(cfg.paths.features);

    model::ModelConfig mc = cfg.net;
    mc.feature_count = stack.feature_count();
    const auto image = detail::load_image_if_needed(mc.kind, cfg.paths.image);
    mc.bands = image ? image->bands : 0;
    mc.validate();

    const Dataset all = assemble_dataset(t0, t1, stack, image, cfg.from, cfg.to, mc.patch_size);
    const RegionMask region =
        detail::validation_strip(t0.width(), t0.height(), cfg.train.validation_fraction);
    const RegionSplit split = region_split(all, region, cfg.train.validation_fraction);
    log_info({{"event", "train-split"},
              {"samples", std::to_string(all.samples.size())},
              {"positives", std::to_string(all.positive_indices.size())},
              {"validation_fraction", fmt_double(split.validation_fraction)}});

    const nn::TrainConfig tc = cfg.train.opt;
    model::TrainedModel tm;
    if (mc.kind == "cdae") {
        nn::TrainConfig pre = tc;
        pre.max_steps = cfg.train.cdae_steps;
        pre.rng_seed = derive_seed(tc.rng_seed, "cdae");
        model::CdaeTrained ct =
            model::train_cdae(mc, split.train, split.validation, pre, cfg.train.eval_every);
        model::save_cdae(ct, cfg.paths.model + ".cdae");
        log_info({{"event", "cdae-pretrained"},
                  {"best_step", std::to_string(ct.best_step)},
                  {"best_validation", fmt_double(ct.best_validation)}});
        tm = model::train_classifier(mc, split.train, split.validation, tc, cfg.train.jitter,
                                     cfg.train.eval_every, &ct.model);
    } else {
        tm = model::train_classifier(mc, split.train, split.validation, tc, cfg.train.jitter,
                                     cfg.train.eval_every);
    }
    tm.feature_names = stack.names;
    tm.feature_means = stack.means;
    tm.feature_sds = stack.sds;
    model::save_model(tm, cfg.paths.model);
    log_info({{"event", "train-done"},
              {"model", cfg.paths.model},
              {"kind", mc.kind},
              {"best_step", std::to_string(tm.best_step)},
              {"best_validation", fmt_double(tm.best_validation)}});
}

inline void cmd_predict(const PipelineConfig& cfg) {
    model::TrainedModel tm = model::load_model(cfg.paths.model);
    const LuGrid t0 = load_grid(cfg.paths.t0);
    FeatureStack stack = load_stack(cfg.paths.features);
    if (stack.names != tm.feature_names)
        throw data_error("feature stack does not match the model (feature names differ)");

    // Re-express the stack in the model's training-time standardization so a
    // model can score a map whose feature statistics drifted.
    for (size_t i = 0; i < stack.fields.size(); ++i) {
        const double ms = stack.means[i], ss = stack.sds[i];
        const double mm = tm.feature_means[i], sm = tm.feature_sds[i];
        if (ms == mm && ss == sm) continue;
        if (!(sm > 0.0))
            throw data_error("model feature '" + stack.names[i] + "' has non-positive sd");
        for (double& v : stack.fields[i].data) v = (v * ss + ms - mm) / sm;
    }

    const auto image = detail::load_image_if_needed(tm.config.kind, cfg.paths.image);
    const Dataset all = assemble_dataset(t0, t0, stack, image, tm.from, tm.to, tm.config.patch_size);
    if (all.samples.empty()) throw data_error("no eligible cells for the model's transition");
    const std::vector<double> probs = model::predict_probability(tm.net, all);
    const ScalarField field = model::probability_map(all, probs, t0.width(), t0.height());
    save_field(field, cfg.paths.prediction);
    log_info({{"event", "predict-done"},
              {"path", cfg.paths.prediction},
              {"cells", std::to_string(all.samples.size())}});
}

inline void cmd_simulate(const PipelineConfig& cfg) {
    const LuGrid t0 = load_grid(cfg.paths.t0);
    ca::TransitionProbMap pmap{cfg.from, cfg.to, load_field(cfg.paths.prediction)};
    ca::SimulationState state = ca::run_simulation(t0, {std::move(pmap)}, cfg.ca);
    save_grid(state.grid, cfg.paths.simulated);
    ca::save_allocation_log(state.log, cfg.paths.ca_log);
    log_info({{"event", "simulate-done"},
              {"path", cfg.paths.simulated},
              {"patches", std::to_string(state.log.patches.size())},
              {"cells", std::to_string(state.log.realized_total(cfg.from, cfg.to))}});
}

inline void cmd_evaluate(const PipelineConfig& cfg) {
    const LuGrid initial = load_grid(cfg.paths.t0);
    const LuGrid actual = load_grid(cfg.paths.t1);
    const LuGrid simulated = load_grid(cfg.paths.simulated);
    const metrics::MetricsReport report =
        metrics::evaluate_simulated_map(initial, actual, simulated, cfg.metrics.neighborhoods,
                                        cfg.metrics.shuffles, cfg.metrics.seed);
    {
        std::ofstream f(cfg.paths.report);
        if (!f) throw data_error("cannot write report: " + cfg.paths.report);
        f << report.to_text();
    }
    {
        std::ofstream f(cfg.paths.report_csv);
        if (!f) throw data_error("cannot write report: " + cfg.paths.report_csv);
        f << report.to_csv();
    }
    log_info({{"event", "evaluate-done"},
              {"report", cfg.paths.report},
              {"accuracy", fmt_double(report.accuracy)},
              {"kappa", fmt_double(report.kappa)},
              {"kappa_simulation", fmt_double(report.kappa_simulation)}});

    // Ranking quality of the probability surface, when one has been produced
    if (std::filesystem::exists(cfg.paths.prediction)) {
        const ScalarField probs = load_field(cfg.paths.prediction);
        const metrics::RankingMetrics rm =
            metrics::evaluate_probability_map(probs, initial, actual, cfg.from, cfg.to);
        std::ofstream f(cfg.paths.ranking);
        if (!f) throw data_error("cannot write ranking metrics: " + cfg.paths.ranking);
        f << "metric,value\n";
        f << "auc_roc," << fmt_double(rm.auc_roc) << "\n";
        f << "auc_pr," << fmt_double(rm.auc_pr) << "\n";
        log_info({{"event", "ranking-done"},
                  {"auc_roc", fmt_double(rm.auc_roc)},
                  {"auc_pr", fmt_double(rm.auc_pr)}});
    }
}

// ---------------------------------------------------------------------------
// gradcheck: every layer kind plus both losses against central differences.
// ---------------------------------------------------------------------------

struct GradcheckRow {
    std::string name;
    double max_rel_err = 0.0;
};

inline constexpr double kGradcheckTolerance = 1e-5;

namespace detail {

inline Tensor random_offzero(const std::vector<int>& shape, Rng& rng) {
    // magnitudes in [0.1, 1] keep finite differences away from the kinks of
    // relu/max-pool and the clamp of the losses
    std::uniform_real_distribution<double> mag(0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    Tensor t(shape);
    for (long i = 0; i < t.numel(); ++i) t[i] = (sign(rng) ? 1.0 : -1.0) * mag(rng);
    return t;
}

inline double dot_batch(const nn::Batch& a, const nn::Batch& b) {
    double acc = 0.0;
    for (size_t s = 0; s < a.size(); ++s) acc += dot(a[s], b[s]);
    return acc;
}

// Projects the layer output against fixed random weights to get a scalar
// loss, then checks every parameter and input gradient.
inline GradcheckRow check_layer(const std::string& name, const nn::LayerSpec& spec,
                                const std::vector<int>& in_shape, int batch, Rng& rng) {
    nn::Network net = nn::build_network({in_shape, {spec}}, rng, name + ".");
    nn::Batch input;
    for (int s = 0; s < batch; ++s) input.push_back(random_offzero(in_shape, rng));

    nn::Batch probe = net.forward(input, true);
    nn::Batch proj(probe.size());
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (size_t s = 0; s < probe.size(); ++s) {
        proj[s] = Tensor(probe[s].shape());
        for (long i = 0; i < proj[s].numel(); ++i) proj[s][i] = u(rng);
    }

    net.zero_grads();
    net.forward(input, true);
    nn::Batch gin = net.backward(proj);
    std::vector<nn::ParamRef> params = net.params();
    for (size_t s = 0; s < input.size(); ++s)
        params.push_back({"input" + std::to_string(s), &input[s], &gin[s], true});

    auto loss = [&net, &input, &proj] { return dot_batch(net.forward(input, true), proj); };
    return {name, nn::finite_diff_check(params, loss).max_rel_err};
}

inline GradcheckRow check_bce(Rng& rng) {
    const int n = 8;
    nn::Batch pred(n);
    std::vector<double> labels(n);
    std::uniform_real_distribution<double> p(0.2, 0.8);
    for (int s = 0; s < n; ++s) {
        pred[s] = Tensor({1});
        pred[s][0] = p(rng);
        labels[s] = s % 2;
    }
    nn::LossResult res = nn::bce_loss(pred, labels);
    std::vector<nn::ParamRef> params;
    for (int s = 0; s < n; ++s)
        params.push_back({"pred" + std::to_string(s), &pred[s], &res.grad[s], true});
    auto loss = [&pred, &labels] { return nn::bce_loss(pred, labels).value; };
    return {"bce_loss", nn::finite_diff_check(params, loss).max_rel_err};
}

inline GradcheckRow check_mse(Rng& rng) {
    const int n = 4;
    nn::Batch pred(n), target(n);
    for (int s = 0; s < n; ++s) {
        pred[s] = random_offzero({2, 3, 3}, rng);
        target[s] = random_offzero({2, 3, 3}, rng);
    }
    nn::LossResult res = nn::mse_loss(pred, target);
    std::vector<nn::ParamRef> params;
    for (int s = 0; s < n; ++s)
        params.push_back({"pred" + std::to_string(s), &pred[s], &res.grad[s], true});
    auto loss = [&pred, &target] { return nn::mse_loss(pred, target).value; };
    return {"mse_loss", nn::finite_diff_check(params, loss).max_rel_err};
}

}  // namespace detail

// Finite-difference audit of every layer kind and both losses on small
// random tensors. Deterministic for a given seed.
inline std::vector<GradcheckRow> run_gradcheck(uint64_t seed) {
    using nn::LayerKind;
    Rng rng(derive_seed(seed, "gradcheck"));
    std::vector<GradcheckRow> rows;
    auto layer = [&](const std::string& name, const nn::LayerSpec& spec,
                     const std::vector<int>& in_shape, int batch) {
        rows.push_back(detail::check_layer(name, spec, in_shape, batch, rng));
    };
    layer("conv", {.kind = LayerKind::conv, .filters = 3, .size = 3, .stride = 2, .pad = 1},
          {2, 5, 5}, 2);
    layer("transposed_conv",
          {.kind = LayerKind::transposed_conv, .filters = 2, .size = 3, .stride = 2, .pad = 1},
          {2, 3, 3}, 2);
    layer("spatial_weight", {.kind = LayerKind::spatial_weight}, {2, 5, 5}, 2);
    layer("max_pool", {.kind = LayerKind::max_pool, .size = 2}, {2, 6, 6}, 2);
    layer("avg_pool", {.kind = LayerKind::avg_pool, .size = 3}, {2, 6, 6}, 2);
    layer("global_avg_pool", {.kind = LayerKind::global_avg_pool}, {3, 4, 4}, 2);
    layer("batchnorm", {.kind = LayerKind::batchnorm}, {3, 4, 4}, 3);
    layer("relu", {.kind = LayerKind::relu}, {2, 4, 4}, 2);
    layer("sigmoid", {.kind = LayerKind::sigmoid}, {2, 4, 4}, 2);
    layer("dense", {.kind = LayerKind::dense, .units = 4}, {7}, 3);
    layer("upsample", {.kind = LayerKind::upsample, .factor = 2}, {2, 3, 3}, 2);
    rows.push_back(detail::check_bce(rng));
    rows.push_back(detail::check_mse(rng));
    return rows;
}

inline void cmd_gradcheck(const PipelineConfig& cfg, std::ostream& out) {
    const std::vector<GradcheckRow> rows = run_gradcheck(cfg.train.opt.rng_seed);
    char buf[128];
    std::vector<std::string> failures;
    for (const GradcheckRow& r : rows) {
        const bool ok = r.max_rel_err < kGradcheckTolerance;
        std::snprintf(buf, sizeof buf, "%-16s max_rel_err=%.3e %s\n", r.name.c_str(), r.max_rel_err,
                      ok ? "pass" : "FAIL");
        out << buf;
        if (!ok) failures.push_back(r.name);
    }
    if (!failures.empty()) {
        std::string msg = "gradient check failed for:";
        for (const std::string& f : failures) msg += " " + f;
        throw numeric_error(msg);
    }
    log_info({{"event", "gradcheck-done"}, {"layers", std::to_string(rows.size())}});
}

// ---------------------------------------------------------------------------
// Dispatch. Resolves paths, echoes the effective config next to the
// artifacts, then runs the stage. Exit codes: 0 ok, 2 config, 3 data,
// 4 numeric; the CLI wrapper maps the exception types.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names = {"synth",    "featurize", "train",    "predict",
                                                   "simulate", "evaluate",  "gradcheck"};
    return names;
}

inline int run_command(const std::string& command, PipelineConfig cfg,
                       std::ostream& out = std::cout) {
    const auto& names = command_names();
    if (std::find(names.begin(), names.end(), command) == names.end())
        throw config_error("unknown command '" + command + "'");

    resolve_paths(cfg.paths);
    std::error_code ec;
    std::filesystem::create_directories(cfg.paths.out, ec);
    if (ec) throw data_error("cannot create output directory " + cfg.paths.out + ": " + ec.message());
    write_config_echo(cfg, cfg.paths.out + "/" + command + ".config");

    log_info({{"event", "start"}, {"cmd", command}, {"out", cfg.paths.out}});
    if (command == "synth") cmd_synth(cfg);
    else if (command == "featurize") cmd_featurize(cfg);
    else if (command == "train") cmd_train(cfg);
    else if (command == "predict") cmd_predict(cfg);
    else if (command == "simulate") cmd_simulate(cfg);
    else if (command == "evaluate") cmd_evaluate(cfg);
    else cmd_gradcheck(cfg, out);
    log_info({{"event", "done"}, {"cmd", command}});
    return 0;
}

}  // namespace luc::pipeline
