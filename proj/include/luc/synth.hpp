// Synthetic scenario generator: clustered categorical landscapes, multi-band
// imagery with configurable spectral signatures, and a planted logistic
// transition rule whose exact per-cell probability is returned alongside the
// realized draw. Because the rule is known, generated scenarios carry ground
// truth that real imagery never has: a Bayes-optimal probability field to
// benchmark models against.
#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "luc/common.hpp"
#include "luc/features.hpp"
#include "luc/metrics.hpp"
#include "luc/raster.hpp"

namespace luc::synth {

inline constexpr Category kWater = 0;
inline constexpr Category kAgriculture = 1;
inline constexpr Category kForest = 2;
inline constexpr Category kBuiltUp = 3;
inline constexpr int kBands = 7;

inline const char* category_name(Category c) {
    switch (c) {
        case kWater: return "water";
        case kAgriculture: return "agriculture";
        case kForest: return "forest";
        case kBuiltUp: return "built-up";
        default: return "unknown";
    }
}

// Logistic transition rule over three named features plus a bias:
//   p = sigmoid(bias + b_e * enrichment + b_d * distance + b_t * trigger)
// enrichment = share of to-class cells in the window around the cell,
// distance   = distance to the nearest to-class cell over the map diagonal,
// trigger    = 1 where the image motif was stamped (image-only signal).
struct PlantedRule {
    Category from = kForest;
    Category to = kAgriculture;
    double beta_bias = -0.5;
    double beta_enrichment = 2.0;
    double beta_distance = -2.0;
    double beta_trigger = 1.5;
    int enrichment_window = 5;

    void validate() const {
        if (from == to) throw config_error("planted rule needs from != to");
        if (enrichment_window < 1 || enrichment_window % 2 == 0)
            throw config_error("enrichment window must be odd and positive");
        for (double b : {beta_bias, beta_enrichment, beta_distance, beta_trigger})
            if (!std::isfinite(b)) throw config_error("rule coefficients must be finite");
    }
};

struct SynthConfig {
    int width = 96;
    int height = 96;
    double cell_size = 30.0;
    // per-category band means, row order water/agriculture/forest/built-up
    std::array<std::array<double, kBands>, 4> signatures = {{
        {0.20, 0.30, 0.25, 0.15, 0.05, 0.35, 0.03},
        {0.45, 0.50, 0.55, 0.70, 0.50, 0.80, 0.40},
        {0.30, 0.35, 0.30, 0.85, 0.40, 0.60, 0.25},
        {0.60, 0.65, 0.70, 0.50, 0.75, 0.45, 0.70},
    }};
    double noise_sd = 0.25;
    int smoothing_radius = 3;      // landscape clustering strength
    double trigger_rate = 0.25;    // share of from-cells stamped with the motif
    double trigger_strength = 3.0; // motif amplitude before per-band scaling
    PlantedRule rule;
    uint64_t rng_seed = 1;

    void validate() const {
        if (width < 16 || height < 16) throw config_error("landscape must be at least 16x16");
        if (cell_size <= 0) throw config_error("cell size must be positive");
        if (noise_sd < 0) throw config_error("image noise sd must be >= 0");
        if (smoothing_radius < 0) throw config_error("smoothing radius must be >= 0");
        if (trigger_rate < 0 || trigger_rate > 1) throw config_error("trigger rate must be in [0,1]");
        if (trigger_strength < 0) throw config_error("trigger strength must be >= 0");
        for (int a = 0; a < 4; ++a)
            for (int b = a + 1; b < 4; ++b)
                if (signatures[a] == signatures[b])
                    throw config_error(std::string("spectral signatures must differ (") +
                                       category_name(static_cast<Category>(a)) + " vs " +
                                       category_name(static_cast<Category>(b)) + ")");
        rule.validate();
    }
};

namespace detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// separable clamped box blur, one pass per axis
inline void box_smooth(ScalarField& f, int radius) {
    if (radius < 1) return;
    ScalarField tmp(f.width, f.height);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            const int lo = std::max(0, x - radius), hi = std::min(f.width - 1, x + radius);
            double s = 0.0;
            for (int i = lo; i <= hi; ++i) s += f.at(i, y);
            tmp.at(x, y) = s / (hi - lo + 1);
        }
    for (int x = 0; x < f.width; ++x)
        for (int y = 0; y < f.height; ++y) {
            const int lo = std::max(0, y - radius), hi = std::min(f.height - 1, y + radius);
            double s = 0.0;
            for (int i = lo; i <= hi; ++i) s += tmp.at(x, i);
            f.at(x, y) = s / (hi - lo + 1);
        }
}

inline ScalarField smoothed_noise_field(const SynthConfig& cfg, const std::string& tag) {
    Rng rng(derive_seed(cfg.rng_seed, tag));
    std::normal_distribution<double> n(0.0, 1.0);
    ScalarField f(cfg.width, cfg.height);
    for (double& v : f.data) v = n(rng);
    box_smooth(f, cfg.smoothing_radius);
    box_smooth(f, cfg.smoothing_radius);
    return f;
}

// indices of the field's cells ordered by value, ties broken row-major
inline std::vector<size_t> value_order(const ScalarField& f) {
    std::vector<size_t> order(f.data.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return f.data[a] < f.data[b]; });
    return order;
}

}  // namespace detail

struct Landscape {
    LuGrid t0;
    std::vector<std::pair<std::string, ScalarField>> aux;
};

// Clustered four-category landscape by rank-thresholding two smoothed noise
// fields: the first splits water / middle / forest, the second splits the
// middle band into built-up and agriculture. Rank assignment pins the class
// shares (12/43/35/10 percent) regardless of the field's distribution, so
// every category is always present.
inline Landscape generate_landscape(const SynthConfig& cfg) {
    cfg.validate();
    const size_t n = static_cast<size_t>(cfg.width) * cfg.height;

    ScalarField f1 = detail::smoothed_noise_field(cfg, "landscape:base");
    ScalarField f2 = detail::smoothed_noise_field(cfg, "landscape:urban");

    std::vector<Category> cells(n, kAgriculture);
    const std::vector<size_t> order1 = detail::value_order(f1);
    const size_t n_water = n * 12 / 100;
    const size_t n_forest = n * 35 / 100;
    for (size_t i = 0; i < n_water; ++i) cells[order1[i]] = kWater;
    for (size_t i = 0; i < n_forest; ++i) cells[order1[n - 1 - i]] = kForest;

    std::vector<size_t> middle;
    for (size_t i = n_water; i < n - n_forest; ++i) middle.push_back(order1[i]);
    std::stable_sort(middle.begin(), middle.end(),
                     [&](size_t a, size_t b) { return f2.data[a] > f2.data[b]; });
    const size_t n_built = n * 10 / 100;
    for (size_t i = 0; i < n_built && i < middle.size(); ++i) cells[middle[i]] = kBuiltUp;

    Landscape out{LuGrid(cfg.width, cfg.height, cfg.cell_size,
                         {kWater, kAgriculture, kForest, kBuiltUp}, std::move(cells)),
                  {}};

    // smooth auxiliary surfaces: a terrain-like field and a radial
    // accessibility gradient around a randomly placed center
    out.aux.emplace_back("elevation", detail::smoothed_noise_field(cfg, "landscape:elevation"));
    Rng rng(derive_seed(cfg.rng_seed, "landscape:center"));
    const int cx = static_cast<int>(rng() % static_cast<uint64_t>(cfg.width));
    const int cy = static_cast<int>(rng() % static_cast<uint64_t>(cfg.height));
    ScalarField access(cfg.width, cfg.height);
    const double dmax = std::hypot(cfg.width, cfg.height);
    for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x)
            access.at(x, y) = 1.0 - std::hypot(x - cx, y - cy) / dmax;
    out.aux.emplace_back("accessibility", std::move(access));
    return out;
}

struct RenderedImage {
    MultiBandImage image;   // z-scored per band
    ScalarField trigger;    // 1 at motif centers
    std::vector<double> band_means, band_sds;  // moments removed by scaling
};

// Per-cell band values = category signature + N(0, noise_sd), then a cross
// motif (bands 2 and 5) stamped at a random subset of rule.from cells, then
// per-band z-scoring. The motif is the only image content the start map does
// not determine, which is exactly what makes it image-only signal.
inline RenderedImage render_images(const LuGrid& grid, const SynthConfig& cfg, Rng& rng) {
    cfg.validate();
    if (grid.width() != cfg.width || grid.height() != cfg.height)
        throw data_error("render_images: grid does not match the configured size");
    RenderedImage out{MultiBandImage(kBands, cfg.width, cfg.height),
                      ScalarField(cfg.width, cfg.height), {}, {}};

    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> raw(out.image.data.size());
    for (int b = 0; b < kBands; ++b)
        for (int y = 0; y < cfg.height; ++y)
            for (int x = 0; x < cfg.width; ++x) {
                const Category c = grid.at(x, y);
                double v = cfg.signatures[static_cast<size_t>(c)][static_cast<size_t>(b)];
                if (cfg.noise_sd > 0) v += cfg.noise_sd * noise(rng);
                raw[out.image.index(b, x, y)] = v;
            }

    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
            if (grid.masked(x, y) || grid.at(x, y) != cfg.rule.from) continue;
            if (u(rng) >= cfg.trigger_rate) continue;
            out.trigger.at(x, y) = 1.0;
            for (int b : {2, 5}) {
                raw[out.image.index(b, x, y)] += cfg.trigger_strength;
                for (auto [dx, dy] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}})
                    if (grid.in_bounds(x + dx, y + dy))
                        raw[out.image.index(b, x + dx, y + dy)] += 0.5 * cfg.trigger_strength;
            }
        }

    const size_t cells = static_cast<size_t>(cfg.width) * cfg.height;
    for (int b = 0; b < kBands; ++b) {
        const size_t base = static_cast<size_t>(b) * cells;
        double mean = 0.0;
        for (size_t i = 0; i < cells; ++i) mean += raw[base + i];
        mean /= static_cast<double>(cells);
        double var = 0.0;
        for (size_t i = 0; i < cells; ++i) var += (raw[base + i] - mean) * (raw[base + i] - mean);
        const double sd = std::sqrt(var / static_cast<double>(cells));
        out.band_means.push_back(mean);
        out.band_sds.push_back(sd);
        for (size_t i = 0; i < cells; ++i)
            out.image.data[base + i] =
                sd > 0 ? static_cast<float>((raw[base + i] - mean) / sd) : 0.0f;
    }
    return out;
}

struct RuleOutcome {
    LuGrid t1;
    ScalarField oracle;      // exact transition probability; 0 off the from-class
    ScalarField enrichment;  // rule features, for inspection and tests
    ScalarField distance;
};

inline RuleOutcome apply_planted_rule(const LuGrid& t0, const ScalarField& trigger,
                                      const PlantedRule& rule, Rng& rng) {
    rule.validate();
    if (trigger.width != t0.width() || trigger.height != t0.height())
        throw data_error("apply_planted_rule: trigger field does not match the grid");
    if (t0.category_index(rule.from) < 0 || t0.category_index(rule.to) < 0)
        throw data_error("apply_planted_rule: rule classes missing from the grid category list");

    RegionMask to_mask(t0.width(), t0.height());
    for (int y = 0; y < t0.height(); ++y)
        for (int x = 0; x < t0.width(); ++x)
            if (!t0.masked(x, y) && t0.at(x, y) == rule.to) to_mask.set(x, y, true);
    if (to_mask.count() == 0)
        throw data_error("apply_planted_rule: no to-class cells, distance feature undefined");
    const ScalarField dist = distance_field(to_mask, 1.0);
    const double diag = std::hypot(t0.width(), t0.height());
    const int to_idx = t0.category_index(rule.to);

    RuleOutcome out{t0, ScalarField(t0.width(), t0.height()),
                    ScalarField(t0.width(), t0.height()), ScalarField(t0.width(), t0.height())};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int y = 0; y < t0.height(); ++y)
        for (int x = 0; x < t0.width(); ++x) {
            if (t0.masked(x, y) || t0.at(x, y) != rule.from) continue;
            const auto counts = neighborhood_counts(t0, {x, y}, rule.enrichment_window);
            long total = 0;
            for (long c : counts) total += c;
            const double enrich = static_cast<double>(counts[static_cast<size_t>(to_idx)]) /
                                  static_cast<double>(total);
            const double dnorm = dist.at(x, y) / diag;
            const double p = detail::sigmoid(rule.beta_bias + rule.beta_enrichment * enrich +
                                             rule.beta_distance * dnorm +
                                             rule.beta_trigger * trigger.at(x, y));
            out.enrichment.at(x, y) = enrich;
            out.distance.at(x, y) = dnorm;
            out.oracle.at(x, y) = p;
            if (u(rng) < p) out.t1.set(x, y, rule.to);
        }
    return out;
}

// ---------------------------------------------------------------------------
// One-call scenario assembly and artifact export
// ---------------------------------------------------------------------------

struct SynthScenario {
    SynthConfig config;
    LuGrid t0, t1;
    MultiBandImage image;
    ScalarField trigger, oracle;
    std::vector<std::pair<std::string, ScalarField>> aux;
    double oracle_auc = std::numeric_limits<double>::quiet_NaN();
    long eligible_cells = 0;
    long transitions = 0;
};

inline SynthScenario make_scenario(const SynthConfig& cfg) {
    cfg.validate();
    Landscape land = generate_landscape(cfg);
    Rng render_rng(derive_seed(cfg.rng_seed, "render"));
    RenderedImage ri = render_images(land.t0, cfg, render_rng);
    Rng label_rng(derive_seed(cfg.rng_seed, "labels"));
    RuleOutcome ro = apply_planted_rule(land.t0, ri.trigger, cfg.rule, label_rng);

    SynthScenario s{cfg,
                    std::move(land.t0),
                    std::move(ro.t1),
                    std::move(ri.image),
                    std::move(ri.trigger),
                    std::move(ro.oracle),
                    std::move(land.aux)};
    std::vector<double> scores;
    std::vector<int> labels;
    for (int y = 0; y < s.t0.height(); ++y)
        for (int x = 0; x < s.t0.width(); ++x) {
            if (s.t0.masked(x, y) || s.t0.at(x, y) != cfg.rule.from) continue;
            scores.push_back(s.oracle.at(x, y));
            labels.push_back(s.t1.at(x, y) == cfg.rule.to ? 1 : 0);
        }
    s.eligible_cells = static_cast<long>(scores.size());
    for (int l : labels) s.transitions += l;
    if (s.transitions > 0 && s.transitions < s.eligible_cells)
        s.oracle_auc = metrics::auc_roc(scores, labels);
    return s;
}

inline void save_scenario(const SynthScenario& s, const std::string& base) {
    save_grid(s.t0, base + ".t0.lucr");
    save_grid(s.t1, base + ".t1.lucr");
    save_image(s.image, base + ".image.lucf");
    save_field(s.trigger, base + ".trigger.lucf");
    save_field(s.oracle, base + ".oracle.lucf");
    std::vector<ScalarField> aux_fields;
    std::string aux_names;
    for (const auto& [name, field] : s.aux) {
        aux_fields.push_back(field);
        aux_names += (aux_names.empty() ? "" : ",") + name;
    }
    if (!aux_fields.empty()) save_fields(aux_fields, base + ".aux.lucf");

    Manifest m;
    m.set("tool_version", kToolVersion);
    m.set_int("width", s.config.width);
    m.set_int("height", s.config.height);
    m.set_double("cell_size", s.config.cell_size);
    m.set_double("noise_sd", s.config.noise_sd);
    m.set_int("smoothing_radius", s.config.smoothing_radius);
    m.set_double("trigger_rate", s.config.trigger_rate);
    m.set_double("trigger_strength", s.config.trigger_strength);
    m.set("rule.from", category_name(s.config.rule.from));
    m.set("rule.to", category_name(s.config.rule.to));
    m.set_double("rule.beta_bias", s.config.rule.beta_bias);
    m.set_double("rule.beta_enrichment", s.config.rule.beta_enrichment);
    m.set_double("rule.beta_distance", s.config.rule.beta_distance);
    m.set_double("rule.beta_trigger", s.config.rule.beta_trigger);
    m.set_int("rule.enrichment_window", s.config.rule.enrichment_window);
    m.set_int("rng_seed", static_cast<long>(s.config.rng_seed));
    for (int c = 0; c < 4; ++c) {
        std::string sig;
        for (int b = 0; b < kBands; ++b)
            sig += (b ? "," : "") + fmt_double(s.config.signatures[static_cast<size_t>(c)]
                                                                  [static_cast<size_t>(b)]);
        m.set(std::string("signature.") + category_name(static_cast<Category>(c)), sig);
    }
    m.set("aux_names", aux_names);
    m.set_int("eligible_cells", s.eligible_cells);
    m.set_int("transitions", s.transitions);
    m.set_double("oracle_auc", s.oracle_auc);
    m.save(base + ".manifest");
}

}  // namespace luc::synth
