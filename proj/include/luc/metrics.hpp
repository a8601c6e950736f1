// Map-comparison metrics: threshold-free ranking scores for probability maps
// (AUC-ROC, AUC-PR) and agreement scores for simulated maps (accuracy,
// quantity/allocation disagreement, Kappa, Kappa simulation, and a
// neighborhood-based fuzzy Kappa simulation with Gaussian distance decay).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "luc/common.hpp"
#include "luc/raster.hpp"

namespace luc::metrics {

// ---------------------------------------------------------------------------
// Ranking metrics
// ---------------------------------------------------------------------------

// Probability that a random positive outranks a random negative, ties at
// half credit. Computed from average ranks, so tied groups need no special
// casing downstream.
inline double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw data_error("auc_roc: score/label count mismatch");
    if (scores.empty()) throw data_error("auc_roc: empty input");
    long positives = 0;
    for (int l : labels) positives += l ? 1 : 0;
    const long negatives = static_cast<long>(labels.size()) - positives;
    if (positives == 0 || negatives == 0)
        throw data_error("auc_roc: needs at least one positive and one negative");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    double positive_rank_sum = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (size_t k = i; k < j; ++k)
            if (labels[order[k]]) positive_rank_sum += avg_rank;
        i = j;
    }
    const double p = static_cast<double>(positives);
    return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

// Area under the precision-recall curve, descending-score sweep over distinct
// thresholds with step interpolation: each achievable (recall, precision)
// point contributes (recall - previous recall) x precision.
inline double auc_pr(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw data_error("auc_pr: score/label count mismatch");
    long positives = 0;
    for (int l : labels) positives += l ? 1 : 0;
    if (positives == 0) throw data_error("auc_pr: needs at least one positive");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    double area = 0.0, prev_recall = 0.0;
    long tp = 0, fp = 0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        for (size_t k = i; k < j; ++k) (labels[order[k]] ? tp : fp) += 1;
        const double recall = static_cast<double>(tp) / static_cast<double>(positives);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return area;
}

struct RankingMetrics {
    double auc_roc = 0.0;
    double auc_pr = 0.0;
};

inline RankingMetrics evaluate_probability_scores(const std::vector<double>& scores,
                                                  const std::vector<int>& labels) {
    return {auc_roc(scores, labels), auc_pr(scores, labels)};
}

// Ranks the probability field over unmasked from-cells of the start map
// against the transitions that actually happened by the end map.
inline RankingMetrics evaluate_probability_map(const ScalarField& probs, const LuGrid& t0,
                                               const LuGrid& t1, Category from, Category to) {
    if (t0.width() != t1.width() || t0.height() != t1.height())
        throw data_error("evaluate_probability_map: start/end grids are not co-registered");
    if (probs.width != t0.width() || probs.height != t0.height())
        throw data_error("evaluate_probability_map: probability field does not match the grids");
    std::vector<double> scores;
    std::vector<int> labels;
    for (int y = 0; y < t0.height(); ++y)
        for (int x = 0; x < t0.width(); ++x) {
            if (t0.masked(x, y) || t1.masked(x, y) || t0.at(x, y) != from) continue;
            scores.push_back(probs.at(x, y));
            labels.push_back(t1.at(x, y) == to ? 1 : 0);
        }
    if (scores.empty()) throw data_error("evaluate_probability_map: no unmasked from-cells");
    return evaluate_probability_scores(scores, labels);
}

// ---------------------------------------------------------------------------
// Confusion matrix and disagreement decomposition
// ---------------------------------------------------------------------------

// rows = reference (actual) class, columns = comparison (simulated) class
struct ConfusionMatrix {
    std::vector<Category> categories;
    std::vector<long> counts;
    long total = 0;

    explicit ConfusionMatrix(std::vector<Category> cats = {})
        : categories(std::move(cats)),
          counts(categories.size() * categories.size(), 0) {}

    int size() const { return static_cast<int>(categories.size()); }
    long& at(int ref, int cmp) { return counts[static_cast<size_t>(ref) * categories.size() + cmp]; }
    long at(int ref, int cmp) const {
        return counts[static_cast<size_t>(ref) * categories.size() + cmp];
    }
};

inline ConfusionMatrix confusion_matrix(const LuGrid& reference, const LuGrid& comparison) {
    if (reference.width() != comparison.width() || reference.height() != comparison.height())
        throw data_error("confusion_matrix: grids are not co-registered");
    ConfusionMatrix cm(reference.categories());
    for (int y = 0; y < reference.height(); ++y)
        for (int x = 0; x < reference.width(); ++x) {
            if (reference.masked(x, y) || comparison.masked(x, y)) continue;
            const int i = reference.category_index(reference.at(x, y));
            const int j = reference.category_index(comparison.at(x, y));
            if (i < 0)
                throw data_error("confusion_matrix: reference cell value outside its category list");
            if (j < 0)
                throw data_error("confusion_matrix: comparison class " +
                                 std::to_string(int(comparison.at(x, y))) +
                                 " missing from the reference category list");
            ++cm.at(i, j);
            ++cm.total;
        }
    return cm;
}

inline double accuracy(const ConfusionMatrix& cm) {
    if (cm.total == 0) throw data_error("accuracy: empty confusion matrix");
    long agree = 0;
    for (int k = 0; k < cm.size(); ++k) agree += cm.at(k, k);
    return static_cast<double>(agree) / static_cast<double>(cm.total);
}

// Pontius decomposition of total disagreement into a quantity component
// (marginal mismatch) and an allocation component (spatial mismatch):
//   quantity   = 1/2 sum_j |row_j - col_j|
//   allocation = sum_j min(row_j - p_jj, col_j - p_jj)
// in proportions; quantity + allocation = 1 - accuracy.
inline std::pair<double, double> disagreement(const ConfusionMatrix& cm) {
    if (cm.total == 0) throw data_error("disagreement: empty confusion matrix");
    const double t = static_cast<double>(cm.total);
    double quantity = 0.0, allocation = 0.0;
    for (int j = 0; j < cm.size(); ++j) {
        double row = 0.0, col = 0.0;
        for (int k = 0; k < cm.size(); ++k) {
            row += static_cast<double>(cm.at(j, k));
            col += static_cast<double>(cm.at(k, j));
        }
        row /= t;
        col /= t;
        const double diag = static_cast<double>(cm.at(j, j)) / t;
        quantity += 0.5 * std::abs(row - col);
        allocation += std::min(row - diag, col - diag);
    }
    return {quantity, allocation};
}

inline double kappa(const ConfusionMatrix& cm) {
    if (cm.total == 0) throw data_error("kappa: empty confusion matrix");
    const double t = static_cast<double>(cm.total);
    double observed = 0.0, expected = 0.0;
    for (int j = 0; j < cm.size(); ++j) {
        observed += static_cast<double>(cm.at(j, j)) / t;
        double row = 0.0, col = 0.0;
        for (int k = 0; k < cm.size(); ++k) {
            row += static_cast<double>(cm.at(j, k));
            col += static_cast<double>(cm.at(k, j));
        }
        expected += (row / t) * (col / t);
    }
    if (std::abs(1.0 - expected) < 1e-12)
        throw numeric_error("kappa undefined: chance agreement equals 1");
    return (observed - expected) / (1.0 - expected);
}

// ---------------------------------------------------------------------------
// Kappa simulation: agreement between the actual and simulated end maps with
// chance corrected by the transition behavior conditional on the start map,
// so pure persistence earns no credit.
// ---------------------------------------------------------------------------

namespace detail {

inline void check_triple(const LuGrid& initial, const LuGrid& actual, const LuGrid& simulated) {
    if (initial.width() != actual.width() || initial.height() != actual.height() ||
        initial.width() != simulated.width() || initial.height() != simulated.height())
        throw data_error("map triple is not co-registered");
    if (initial.categories() != actual.categories() || initial.categories() != simulated.categories())
        throw data_error("map triple must share one category list");
}

inline bool triple_masked(const LuGrid& initial, const LuGrid& actual, const LuGrid& simulated,
                          int x, int y) {
    return initial.masked(x, y) || actual.masked(x, y) || simulated.masked(x, y);
}

}  // namespace detail

inline double kappa_simulation(const LuGrid& initial, const LuGrid& actual, const LuGrid& simulated) {
    detail::check_triple(initial, actual, simulated);
    const int k = initial.category_count();
    std::vector<double> start(static_cast<size_t>(k), 0.0);
    std::vector<double> a(static_cast<size_t>(k) * k, 0.0), s(static_cast<size_t>(k) * k, 0.0);
    double total = 0.0, agreement = 0.0;
    for (int y = 0; y < initial.height(); ++y)
        for (int x = 0; x < initial.width(); ++x) {
            if (detail::triple_masked(initial, actual, simulated, x, y)) continue;
            const int i = initial.category_index(initial.at(x, y));
            const int ja = initial.category_index(actual.at(x, y));
            const int js = initial.category_index(simulated.at(x, y));
            if (i < 0 || ja < 0 || js < 0)
                throw data_error("kappa_simulation: cell value outside the shared category list");
            start[static_cast<size_t>(i)] += 1.0;
            a[static_cast<size_t>(i) * k + ja] += 1.0;
            s[static_cast<size_t>(i) * k + js] += 1.0;
            agreement += actual.at(x, y) == simulated.at(x, y) ? 1.0 : 0.0;
            total += 1.0;
        }
    if (total == 0.0) throw data_error("kappa_simulation: no unmasked cells");

    const double p_o = agreement / total;
    double p_e = 0.0;
    for (int i = 0; i < k; ++i) {
        const double n_i = start[static_cast<size_t>(i)];
        if (n_i == 0.0) continue;
        double inner = 0.0;
        for (int j = 0; j < k; ++j)
            inner += (a[static_cast<size_t>(i) * k + j] / n_i) * (s[static_cast<size_t>(i) * k + j] / n_i);
        p_e += (n_i / total) * inner;
    }
    if (std::abs(1.0 - p_e) < 1e-12)
        throw numeric_error("kappa_simulation undefined: expected agreement equals 1 (no change)");
    return (p_o - p_e) / (1.0 - p_e);
}

// ---------------------------------------------------------------------------
// Fuzzy Kappa simulation. Cell-level agreement gives partial credit when the
// matching class sits nearby rather than exactly on the cell: membership of
// class c around (x,y) is the best exp(-d^2 / (2 sigma^2)) over same-class
// cells within the odd neighborhood window, and a cell scores the two-way
// minimum of actual-in-simulated and simulated-in-actual membership. Only
// change-relevant cells (where actual or simulated departs from the start
// map) enter the average; the convention is echoed in every report. The
// expectation is a seeded Monte Carlo: per start class, simulated outcomes
// are reshuffled across that class's cells, 20 times by default.
// ---------------------------------------------------------------------------

struct FuzzyKappaResult {
    double kappa = 0.0;
    double observed = 0.0;
    double expected = 0.0;
    int neighborhood = 0;
    double sigma = 0.0;
    int shuffles = 0;
    uint64_t seed = 0;
};

namespace detail {

inline double class_membership(const LuGrid& map, int cx, int cy, Category cls, int radius,
                               double inv_two_sigma_sq) {
    double best = 0.0;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            const int x = cx + dx, y = cy + dy;
            if (!map.in_bounds(x, y) || map.masked(x, y)) continue;
            if (map.at(x, y) != cls) continue;
            const double d2 = static_cast<double>(dx * dx + dy * dy);
            best = std::max(best, std::exp(-d2 * inv_two_sigma_sq));
            if (best == 1.0) return 1.0;
        }
    return best;
}

// mean two-way fuzzy agreement over change-relevant cells
inline double fuzzy_observed(const LuGrid& initial, const LuGrid& actual, const LuGrid& simulated,
                             int radius, double sigma) {
    const double inv = 1.0 / (2.0 * sigma * sigma);
    double sum = 0.0;
    long cells = 0;
    for (int y = 0; y < initial.height(); ++y)
        for (int x = 0; x < initial.width(); ++x) {
            if (triple_masked(initial, actual, simulated, x, y)) continue;
            const Category t0 = initial.at(x, y);
            const Category va = actual.at(x, y);
            const Category vs = simulated.at(x, y);
            if (va == t0 && vs == t0) continue;  // pure persistence carries no weight
            const double m1 = class_membership(simulated, x, y, va, radius, inv);
            const double m2 = class_membership(actual, x, y, vs, radius, inv);
            sum += std::min(m1, m2);
            ++cells;
        }
    if (cells == 0)
        throw numeric_error("fuzzy kappa simulation undefined: neither map departs from the start map");
    return sum / static_cast<double>(cells);
}

// simulated map with outcomes randomly reassigned within each start class
inline LuGrid reshuffle_within_class(const LuGrid& initial, const LuGrid& simulated, Rng& rng) {
    LuGrid out = simulated;
    for (Category cls : initial.categories()) {
        std::vector<Cell> cells;
        for (int y = 0; y < initial.height(); ++y)
            for (int x = 0; x < initial.width(); ++x) {
                if (initial.masked(x, y) || simulated.masked(x, y)) continue;
                if (initial.at(x, y) == cls) cells.push_back({x, y});
            }
        std::vector<Category> outcomes;
        outcomes.reserve(cells.size());
        for (Cell c : cells) outcomes.push_back(simulated.at(c.x, c.y));
        for (size_t i = outcomes.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(rng() % i);
            std::swap(outcomes[i - 1], outcomes[j]);
        }
        for (size_t i = 0; i < cells.size(); ++i) out.set(cells[i].x, cells[i].y, outcomes[i]);
    }
    return out;
}

}  // namespace detail

// sigma <= 0 selects the default of half the neighborhood radius
inline FuzzyKappaResult fuzzy_kappa_simulation_detail(const LuGrid& initial, const LuGrid& actual,
                                                      const LuGrid& simulated, int neighborhood,
                                                      double sigma = -1.0, int shuffles = 20,
                                                      uint64_t seed = 1) {
    detail::check_triple(initial, actual, simulated);
    if (neighborhood < 1 || neighborhood % 2 == 0)
        throw config_error("neighborhood must be odd and positive");
    if (shuffles < 1) throw config_error("shuffle count must be >= 1");

    FuzzyKappaResult res;
    res.neighborhood = neighborhood;
    res.shuffles = shuffles;
    res.seed = seed;

    // radius 0 collapses membership to cell identity; the analytic form is
    // exact there, so delegate instead of Monte Carlo estimating it
    if (neighborhood == 1) {
        res.kappa = kappa_simulation(initial, actual, simulated);
        res.sigma = 0.0;
        return res;
    }

    const int radius = neighborhood / 2;
    if (sigma <= 0.0) sigma = static_cast<double>(radius) / 2.0;
    res.sigma = sigma;

    res.observed = detail::fuzzy_observed(initial, actual, simulated, radius, sigma);
    Rng rng(derive_seed(seed, "fuzzy-kappa"));
    double expected_sum = 0.0;
    for (int rep = 0; rep < shuffles; ++rep) {
        const LuGrid reshuffled = detail::reshuffle_within_class(initial, simulated, rng);
        expected_sum += detail::fuzzy_observed(initial, actual, reshuffled, radius, sigma);
    }
    res.expected = expected_sum / static_cast<double>(shuffles);
    if (std::abs(1.0 - res.expected) < 1e-12)
        throw numeric_error("fuzzy kappa simulation undefined: expected agreement equals 1");
    res.kappa = (res.observed - res.expected) / (1.0 - res.expected);
    return res;
}

inline double fuzzy_kappa_simulation(const LuGrid& initial, const LuGrid& actual,
                                     const LuGrid& simulated, int neighborhood, double sigma = -1.0,
                                     int shuffles = 20, uint64_t seed = 1) {
    return fuzzy_kappa_simulation_detail(initial, actual, simulated, neighborhood, sigma, shuffles, seed)
        .kappa;
}

// ---------------------------------------------------------------------------
// Bundled report
// ---------------------------------------------------------------------------

struct MetricsReport {
    double accuracy = 0.0;
    double quantity_disagreement = 0.0;
    double allocation_disagreement = 0.0;
    double kappa = 0.0;
    double kappa_simulation = 0.0;
    std::vector<FuzzyKappaResult> fuzzy;  // one entry per neighborhood size

    std::string to_text() const {
        std::string out;
        char line[160];
        auto add = [&](const char* name, double v) {
            std::snprintf(line, sizeof line, "%-28s %12.6f\n", name, v);
            out += line;
        };
        out += "map agreement report (tool version ";
        out += kToolVersion;
        out += ")\nconvention: fuzzy agreement averaged over category-change cells only\n";
        add("accuracy", accuracy);
        add("quantity_disagreement", quantity_disagreement);
        add("allocation_disagreement", allocation_disagreement);
        add("kappa", kappa);
        add("kappa_simulation", kappa_simulation);
        for (const FuzzyKappaResult& f : fuzzy) {
            std::snprintf(line, sizeof line,
                          "fuzzy_kappa_simulation_%dx%-2d %12.6f   (sigma %.3f, %d shuffles, seed %llu)\n",
                          f.neighborhood, f.neighborhood, f.kappa, f.sigma, f.shuffles,
                          static_cast<unsigned long long>(f.seed));
            out += line;
        }
        return out;
    }

    std::string to_csv() const {
        std::string out = "metric,value\n";
        char line[160];
        auto add = [&](const std::string& name, double v) {
            std::snprintf(line, sizeof line, "%s,%.17g\n", name.c_str(), v);
            out += line;
        };
        out += "tool_version," + std::string(kToolVersion) + "\n";
        add("accuracy", accuracy);
        add("quantity_disagreement", quantity_disagreement);
        add("allocation_disagreement", allocation_disagreement);
        add("kappa", kappa);
        add("kappa_simulation", kappa_simulation);
        for (const FuzzyKappaResult& f : fuzzy) {
            const std::string tag =
                "fuzzy_kappa_simulation_" + std::to_string(f.neighborhood) + "x" +
                std::to_string(f.neighborhood);
            add(tag, f.kappa);
            add(tag + "_sigma", f.sigma);
            add(tag + "_shuffles", f.shuffles);
            add(tag + "_seed", static_cast<double>(f.seed));
        }
        return out;
    }
};

inline MetricsReport evaluate_simulated_map(const LuGrid& initial, const LuGrid& actual,
                                            const LuGrid& simulated,
                                            const std::vector<int>& neighborhoods = {3, 7, 11},
                                            int shuffles = 20, uint64_t seed = 1) {
    MetricsReport r;
    const ConfusionMatrix cm = confusion_matrix(actual, simulated);
    r.accuracy = accuracy(cm);
    std::tie(r.quantity_disagreement, r.allocation_disagreement) = disagreement(cm);
    r.kappa = kappa(cm);
    r.kappa_simulation = kappa_simulation(initial, actual, simulated);
    for (int n : neighborhoods)
        r.fuzzy.push_back(
            fuzzy_kappa_simulation_detail(initial, actual, simulated, n, -1.0, shuffles, seed));
    return r;
}

}  // namespace luc::metrics
