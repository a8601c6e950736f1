// Stochastic cellular automaton for land-use change allocation. Converts
// per-transition probability surfaces into a simulated map in two passes per
// transition: the expander grows existing target-class areas, the patcher
// seeds new ones. Patch sizes are lognormal, patch shape is steered by an
// isometry factor, and every allocation is journaled so a run can be replayed
// bit-exactly from its log.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "luc/common.hpp"
#include "luc/raster.hpp"

namespace luc::ca {

// Probability of one (from, to) transition per cell. Values are meaningful
// only where the start-year map holds the from class.
struct TransitionProbMap {
    Category from = 0;
    Category to = 0;
    ScalarField probs;
};

inline void validate_probability_map(const TransitionProbMap& pmap, const LuGrid& grid) {
    if (pmap.probs.width != grid.width() || pmap.probs.height != grid.height())
        throw data_error("probability map does not match grid dimensions");
    if (pmap.from == pmap.to) throw config_error("transition must change the class");
    if (grid.category_index(pmap.from) < 0 || grid.category_index(pmap.to) < 0)
        throw data_error("transition classes missing from the grid category list");
    for (int y = 0; y < grid.height(); ++y)
        for (int x = 0; x < grid.width(); ++x) {
            if (grid.masked(x, y) || grid.at(x, y) != pmap.from) continue;
            const double p = pmap.probs.at(x, y);
            if (!std::isfinite(p) || p < 0.0 || p > 1.0)
                throw data_error("transition probability out of [0,1] at (" + std::to_string(x) + "," +
                                 std::to_string(y) + ")");
        }
}

struct CaParams {
    double threshold = 0.5;           // probability cutoff for the quantity
    double expander_share = 0.5;      // r; the patcher takes s = 1 - r
    double expander_threshold = 0.5;  // t in the neighborhood adjustment rule
    double patch_size_mu = std::log(20.0);
    double patch_size_sigma = 0.5;
    double isometry = 1.5;
    double prune_factor = 10.0;  // candidate pool = prune_factor x seed demand
    uint64_t rng_seed = 1;

    void validate() const {
        if (!(threshold > 0.0 && threshold < 1.0)) throw config_error("threshold must be in (0,1)");
        if (expander_share < 0.0 || expander_share > 1.0)
            throw config_error("expander share must be in [0,1]");
        if (!(expander_threshold > 0.0 && expander_threshold < 1.0))
            throw config_error("expander threshold must be in (0,1)");
        if (patch_size_sigma < 0.0) throw config_error("patch size sigma must be >= 0");
        if (isometry < 0.0) throw config_error("isometry must be >= 0");
        if (prune_factor < 1.0) throw config_error("prune factor must be >= 1");
    }
};

enum class PatchMode : uint8_t { expander, patcher };

struct PatchRecord {
    Category from = 0;
    Category to = 0;
    PatchMode mode = PatchMode::patcher;
    Cell seed;
    long drawn_size = 0;     // lognormal draw before truncation
    long realized_size = 0;  // == cells.size()
    std::vector<Cell> cells;
};

// Journal of one simulation run: every grown patch plus free-form events
// (shortfalls, skipped seeds, conflicts between transitions).
struct AllocationLog {
    std::vector<PatchRecord> patches;
    std::vector<std::string> events;

    long realized_total(Category from, Category to) const {
        long n = 0;
        for (const PatchRecord& p : patches)
            if (p.from == from && p.to == to) n += p.realized_size;
        return n;
    }
};

struct SimulationState {
    LuGrid grid;
    std::vector<uint8_t> claimed;  // 1 = already transitioned in this run
    AllocationLog log;
    Rng rng;

    explicit SimulationState(LuGrid g)
        : grid(std::move(g)), claimed(static_cast<size_t>(grid.cell_count()), 0), rng(0) {}

    bool eligible(int x, int y, Category from) const {
        return grid.in_bounds(x, y) && !grid.masked(x, y) && !claimed[grid.index(x, y)] &&
               grid.at(x, y) == from;
    }
};

// ---------------------------------------------------------------------------
// Quantity
// ---------------------------------------------------------------------------

// Total number of cells to transition: from-class cells whose probability
// clears the cutoff.
inline long derive_quantity(const TransitionProbMap& pmap, const LuGrid& t0, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw config_error("threshold must be in (0,1)");
    if (pmap.probs.width != t0.width() || pmap.probs.height != t0.height())
        throw data_error("probability map does not match grid dimensions");
    long q = 0;
    for (int y = 0; y < t0.height(); ++y)
        for (int x = 0; x < t0.width(); ++x)
            if (!t0.masked(x, y) && t0.at(x, y) == pmap.from && pmap.probs.at(x, y) > threshold) ++q;
    return q;
}

inline std::pair<long, long> split_quota(long q, double r) {
    if (q < 0) throw config_error("quantity must be >= 0");
    if (r < 0.0 || r > 1.0) throw config_error("expander share must be in [0,1]");
    const long expander = std::llround(r * static_cast<double>(q));
    return {expander, q - expander};
}

// ---------------------------------------------------------------------------
// Expander probability adjustment: cells already embedded in target-class
// neighborhoods, or with probability above t, keep their value; the rest are
// damped by sqrt(n/4) where n counts target-class cells in the 3x3 window
// (center included, clipped at borders, masked cells skipped).
// ---------------------------------------------------------------------------
inline ScalarField expander_adjust(const TransitionProbMap& pmap, const LuGrid& grid, double t) {
    if (!(t > 0.0 && t < 1.0)) throw config_error("expander threshold must be in (0,1)");
    if (pmap.probs.width != grid.width() || pmap.probs.height != grid.height())
        throw data_error("probability map does not match grid dimensions");
    ScalarField out(grid.width(), grid.height());
    for (int y = 0; y < grid.height(); ++y)
        for (int x = 0; x < grid.width(); ++x) {
            long n = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if (!grid.in_bounds(nx, ny) || grid.masked(nx, ny)) continue;
                    if (grid.at(nx, ny) == pmap.to) ++n;
                }
            const double p = pmap.probs.at(x, y);
            out.at(x, y) = (n > 3 || p > t) ? p : p * std::sqrt(static_cast<double>(n) / 4.0);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Seed selection: rank the candidates by adjusted probability (ties broken by
// row-major order), keep the top prune_factor x seed_count as the pool, then
// draw without replacement with probability proportional to the adjusted
// value. A pool whose weights are exhausted (all zero) falls back to pool
// order so zero-probability cells remain claimable.
// ---------------------------------------------------------------------------
inline std::vector<Cell> select_seeds(const ScalarField& field, const std::vector<Cell>& candidates,
                                      long seed_count, double prune_factor, Rng& rng,
                                      std::vector<std::string>* events = nullptr) {
    if (seed_count < 0) throw config_error("seed count must be >= 0");
    if (prune_factor < 1.0) throw config_error("prune factor must be >= 1");
    if (seed_count == 0 || candidates.empty()) {
        if (events && seed_count > 0) events->push_back("seed selection: no candidates available");
        return {};
    }

    std::vector<size_t> order(candidates.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return field.at(candidates[a].x, candidates[a].y) > field.at(candidates[b].x, candidates[b].y);
    });
    const size_t pool_size = std::min(
        candidates.size(),
        static_cast<size_t>(std::llround(prune_factor * static_cast<double>(seed_count))));
    order.resize(pool_size);

    if (pool_size <= static_cast<size_t>(seed_count)) {
        if (pool_size < static_cast<size_t>(seed_count) && events)
            events->push_back("seed selection: pool holds " + std::to_string(pool_size) + " of " +
                              std::to_string(seed_count) + " requested seeds");
        std::vector<Cell> all;
        all.reserve(pool_size);
        for (size_t i : order) all.push_back(candidates[i]);
        return all;
    }

    std::vector<double> weight(pool_size);
    double total = 0.0;
    for (size_t i = 0; i < pool_size; ++i) {
        weight[i] = field.at(candidates[order[i]].x, candidates[order[i]].y);
        total += weight[i];
    }
    std::vector<char> used(pool_size, 0);
    std::vector<Cell> seeds;
    seeds.reserve(static_cast<size_t>(seed_count));
    for (long k = 0; k < seed_count; ++k) {
        size_t pick = pool_size;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng);
            size_t last_unused = pool_size;
            for (size_t i = 0; i < pool_size; ++i) {
                if (used[i]) continue;
                last_unused = i;
                if (target < weight[i]) {
                    pick = i;
                    break;
                }
                target -= weight[i];
            }
            // roundoff can push the target past the final weight
            if (pick == pool_size) pick = last_unused;
        } else {
            for (size_t i = 0; i < pool_size; ++i)
                if (!used[i]) {
                    pick = i;
                    break;
                }
        }
        used[pick] = 1;
        total -= weight[pick];
        seeds.push_back(candidates[order[pick]]);
    }
    return seeds;
}

// Lognormal patch size rounded to a whole cell count of at least 1. A zero
// sigma short-circuits to exp(mu) without touching the rng.
inline long draw_patch_size(double mu, double sigma, Rng& rng) {
    if (sigma < 0.0) throw config_error("patch size sigma must be >= 0");
    if (sigma == 0.0) return std::max<long>(1, std::llround(std::exp(mu)));
    std::lognormal_distribution<double> d(mu, sigma);
    return std::max<long>(1, std::llround(d(rng)));
}

// ---------------------------------------------------------------------------
// Patch growth: region-grow from the seed over 4-adjacent eligible cells,
// each step taking the frontier cell with the highest
//   adjusted_probability * isometry^(4-neighbors already in the patch),
// ties broken by row-major order. The grown cells flip to the target class
// and are journaled. Returns the transitioned cells (empty for a skipped
// seed).
// ---------------------------------------------------------------------------
inline std::vector<Cell> grow_patch(SimulationState& st, Category from, Category to, Cell seed,
                                    long target_size, double isometry, PatchMode mode,
                                    const ScalarField& field, long drawn_size = -1) {
    if (target_size < 1) throw config_error("patch target size must be >= 1");
    if (drawn_size < 0) drawn_size = target_size;
    const char* tag = mode == PatchMode::expander ? "expander" : "patcher";

    if (!st.eligible(seed.x, seed.y, from)) {
        st.log.events.push_back(std::string(tag) + " seed (" + std::to_string(seed.x) + "," +
                                std::to_string(seed.y) + ") skipped: cell not eligible");
        return {};
    }
    if (mode == PatchMode::expander) {
        bool adjacent = false;
        for (int dy = -1; dy <= 1 && !adjacent; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dx == 0 && dy == 0) continue;
                const int nx = seed.x + dx, ny = seed.y + dy;
                if (st.grid.in_bounds(nx, ny) && !st.grid.masked(nx, ny) && st.grid.at(nx, ny) == to) {
                    adjacent = true;
                    break;
                }
            }
        if (!adjacent) {
            st.log.events.push_back(std::string(tag) + " seed (" + std::to_string(seed.x) + "," +
                                    std::to_string(seed.y) + ") skipped: no adjacent target-class cell");
            return {};
        }
    }

    const int w = st.grid.width();
    std::vector<uint8_t> in_patch(static_cast<size_t>(st.grid.cell_count()), 0);
    std::vector<Cell> patch{seed};
    in_patch[st.grid.index(seed.x, seed.y)] = 1;
    std::vector<long> frontier;
    std::vector<uint8_t> in_frontier(in_patch.size(), 0);

    constexpr int kDx[4] = {0, -1, 1, 0};
    constexpr int kDy[4] = {-1, 0, 0, 1};
    auto push_neighbors = [&](Cell c) {
        for (int d = 0; d < 4; ++d) {
            const int nx = c.x + kDx[d], ny = c.y + kDy[d];
            if (!st.eligible(nx, ny, from)) continue;
            const size_t idx = st.grid.index(nx, ny);
            if (in_patch[idx] || in_frontier[idx]) continue;
            in_frontier[idx] = 1;
            frontier.push_back(static_cast<long>(idx));
        }
    };
    push_neighbors(seed);

    while (static_cast<long>(patch.size()) < target_size && !frontier.empty()) {
        double best_score = -1.0;
        size_t best_pos = 0;
        long best_idx = -1;
        for (size_t i = 0; i < frontier.size(); ++i) {
            const long idx = frontier[i];
            const int x = static_cast<int>(idx % w), y = static_cast<int>(idx / w);
            int touching = 0;
            for (int d = 0; d < 4; ++d) {
                const int nx = x + kDx[d], ny = y + kDy[d];
                if (st.grid.in_bounds(nx, ny) && in_patch[st.grid.index(nx, ny)]) ++touching;
            }
            const double score = field.at(x, y) * std::pow(isometry, touching);
            if (score > best_score || (score == best_score && idx < best_idx)) {
                best_score = score;
                best_pos = i;
                best_idx = idx;
            }
        }
        frontier.erase(frontier.begin() + static_cast<long>(best_pos));
        in_frontier[static_cast<size_t>(best_idx)] = 0;
        const Cell c{static_cast<int>(best_idx % w), static_cast<int>(best_idx / w)};
        in_patch[static_cast<size_t>(best_idx)] = 1;
        patch.push_back(c);
        push_neighbors(c);
    }

    if (static_cast<long>(patch.size()) < target_size)
        st.log.events.push_back(std::string(tag) + " patch at (" + std::to_string(seed.x) + "," +
                                std::to_string(seed.y) + "): frontier exhausted at " +
                                std::to_string(patch.size()) + " of " + std::to_string(target_size) +
                                " cells");

    for (const Cell& c : patch) {
        st.grid.set(c.x, c.y, to);
        st.claimed[st.grid.index(c.x, c.y)] = 1;
    }
    PatchRecord rec;
    rec.from = from;
    rec.to = to;
    rec.mode = mode;
    rec.seed = seed;
    rec.drawn_size = drawn_size;
    rec.realized_size = static_cast<long>(patch.size());
    rec.cells = patch;
    st.log.patches.push_back(std::move(rec));
    return patch;
}

// ---------------------------------------------------------------------------
// One transition, two passes
// ---------------------------------------------------------------------------

namespace detail {

// Allocates `quota` cells in rounds: pick eligible candidates, select seeds
// stochastically, draw sizes, grow. Returns the number of cells transitioned.
inline long allocate_pass(SimulationState& st, const TransitionProbMap& pmap, const CaParams& p,
                          PatchMode mode, const ScalarField& field, long quota) {
    long remaining = quota;
    const double mean_size =
        std::max(1.0, std::exp(p.patch_size_mu + 0.5 * p.patch_size_sigma * p.patch_size_sigma));
    const char* tag = mode == PatchMode::expander ? "expander" : "patcher";

    while (remaining > 0) {
        std::vector<Cell> candidates;
        for (int y = 0; y < st.grid.height(); ++y)
            for (int x = 0; x < st.grid.width(); ++x) {
                if (!st.eligible(x, y, pmap.from)) continue;
                if (mode == PatchMode::expander) {
                    bool adjacent = false;
                    for (int dy = -1; dy <= 1 && !adjacent; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            if (dx == 0 && dy == 0) continue;
                            const int nx = x + dx, ny = y + dy;
                            if (st.grid.in_bounds(nx, ny) && !st.grid.masked(nx, ny) &&
                                st.grid.at(nx, ny) == pmap.to) {
                                adjacent = true;
                                break;
                            }
                        }
                    if (!adjacent) continue;
                }
                candidates.push_back({x, y});
            }
        if (candidates.empty()) {
            st.log.events.push_back(std::string(tag) + " pass ended " + std::to_string(remaining) +
                                    " cells short: no eligible candidates");
            break;
        }

        const long want =
            std::clamp<long>(std::llround(std::ceil(static_cast<double>(remaining) / mean_size)), 1, 64);
        const std::vector<Cell> seeds =
            select_seeds(field, candidates, want, p.prune_factor, st.rng, &st.log.events);
        long progress = 0;
        for (const Cell& seed : seeds) {
            if (remaining == 0) break;
            const long drawn = draw_patch_size(p.patch_size_mu, p.patch_size_sigma, st.rng);
            const long target = std::min(drawn, remaining);
            const std::vector<Cell> grown =
                grow_patch(st, pmap.from, pmap.to, seed, target, p.isometry, mode, field, drawn);
            remaining -= static_cast<long>(grown.size());
            progress += static_cast<long>(grown.size());
        }
        if (progress == 0) {
            st.log.events.push_back(std::string(tag) + " pass stalled " + std::to_string(remaining) +
                                    " cells short");
            break;
        }
    }
    return quota - remaining;
}

}  // namespace detail

// Expander pass then patcher pass. Any quota the expander cannot place (for
// want of adjacency) carries over to the patcher, so the transition as a
// whole allocates min(Q, eligible cells). Returns the realized cell count.
inline long simulate_transition(SimulationState& st, const TransitionProbMap& pmap, const CaParams& p) {
    p.validate();
    validate_probability_map(pmap, st.grid);
    st.rng.seed(derive_seed(p.rng_seed, "ca:" + std::to_string(int(pmap.from)) + ">" +
                                            std::to_string(int(pmap.to))));

    long conflicts = 0;
    for (int y = 0; y < st.grid.height(); ++y)
        for (int x = 0; x < st.grid.width(); ++x)
            if (!st.grid.masked(x, y) && st.grid.at(x, y) == pmap.from &&
                st.claimed[st.grid.index(x, y)] && pmap.probs.at(x, y) > p.threshold)
                ++conflicts;
    if (conflicts > 0)
        st.log.events.push_back("transition " + std::to_string(int(pmap.from)) + ">" +
                                std::to_string(int(pmap.to)) + ": " + std::to_string(conflicts) +
                                " cells already claimed by an earlier transition");

    const long q = derive_quantity(pmap, st.grid, p.threshold);
    const auto [expander_quota, patcher_quota] = split_quota(q, p.expander_share);

    const ScalarField adjusted = expander_adjust(pmap, st.grid, p.expander_threshold);
    const long expanded =
        detail::allocate_pass(st, pmap, p, PatchMode::expander, adjusted, expander_quota);
    const long patched = detail::allocate_pass(st, pmap, p, PatchMode::patcher, pmap.probs,
                                               patcher_quota + (expander_quota - expanded));
    return expanded + patched;
}

// Applies each transition against the evolving grid in declared order. A cell
// transitions at most once per run; earlier transitions win conflicts.
inline SimulationState run_simulation(const LuGrid& initial,
                                      const std::vector<TransitionProbMap>& pmaps,
                                      const std::vector<CaParams>& params) {
    if (pmaps.size() != params.size())
        throw config_error("need one parameter set per transition (got " +
                           std::to_string(params.size()) + " for " + std::to_string(pmaps.size()) +
                           " transitions)");
    std::set<std::pair<Category, Category>> pairs;
    for (const TransitionProbMap& pm : pmaps)
        if (!pairs.insert({pm.from, pm.to}).second)
            throw config_error("duplicate transition " + std::to_string(int(pm.from)) + ">" +
                               std::to_string(int(pm.to)));

    SimulationState st(initial);
    for (size_t i = 0; i < pmaps.size(); ++i) simulate_transition(st, pmaps[i], params[i]);
    return st;
}

inline SimulationState run_simulation(const LuGrid& initial,
                                      const std::vector<TransitionProbMap>& pmaps,
                                      const CaParams& shared_params) {
    return run_simulation(initial, pmaps, std::vector<CaParams>(pmaps.size(), shared_params));
}

// ---------------------------------------------------------------------------
// Log persistence. Text journal at `path` with one line per patch:
//   <from> <to> <E|P> <seed_x> <seed_y> <drawn> <realized> <cell_offset>
// plus "! " event lines; cell coordinates at `path`.cells as LUCC binary
// (i32 x, i32 y pairs), indexed by the per-patch offset.
// ---------------------------------------------------------------------------

inline void save_allocation_log(const AllocationLog& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write allocation log: " + path);
    f << "LUCA 1\n";
    f << "patches " << log.patches.size() << "\n";
    uint64_t offset = 0;
    ByteWriter cells;
    cells.magic("LUCC");
    cells.u16(1);
    uint64_t total = 0;
    for (const PatchRecord& p : log.patches) total += static_cast<uint64_t>(p.cells.size());
    cells.u64(total);
    for (const PatchRecord& p : log.patches) {
        f << int(p.from) << " " << int(p.to) << " " << (p.mode == PatchMode::expander ? 'E' : 'P')
          << " " << p.seed.x << " " << p.seed.y << " " << p.drawn_size << " " << p.realized_size
          << " " << offset << "\n";
        for (const Cell& c : p.cells) {
            cells.i32(c.x);
            cells.i32(c.y);
        }
        offset += static_cast<uint64_t>(p.cells.size());
    }
    f << "events " << log.events.size() << "\n";
    for (const std::string& e : log.events) f << "! " << e << "\n";
    if (!f) throw data_error("failed writing allocation log: " + path);
    cells.save(path + ".cells");
}

inline AllocationLog load_allocation_log(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot open allocation log: " + path);
    std::string word;
    int version = 0;
    if (!(f >> word >> version) || word != "LUCA" || version != 1)
        throw data_error(path + ": not a version-1 allocation log");

    size_t n_patches = 0;
    if (!(f >> word >> n_patches) || word != "patches")
        throw data_error(path + ": missing patch count");

    ByteReader cells = ByteReader::from_file(path + ".cells");
    cells.expect_magic("LUCC", "allocation cell list");
    if (cells.u16() != 1) throw data_error(path + ".cells: unsupported version");
    const uint64_t total = cells.u64();

    AllocationLog log;
    log.patches.resize(n_patches);
    uint64_t expect_offset = 0;
    for (PatchRecord& p : log.patches) {
        int from = 0, to = 0;
        char mode = 0;
        uint64_t offset = 0;
        if (!(f >> from >> to >> mode >> p.seed.x >> p.seed.y >> p.drawn_size >> p.realized_size >>
              offset))
            throw data_error(path + ": truncated patch line");
        if (mode != 'E' && mode != 'P') throw data_error(path + ": bad patch mode");
        if (offset != expect_offset) throw data_error(path + ": cell offsets out of order");
        if (p.realized_size < 0) throw data_error(path + ": negative patch size");
        p.from = static_cast<Category>(from);
        p.to = static_cast<Category>(to);
        p.mode = mode == 'E' ? PatchMode::expander : PatchMode::patcher;
        p.cells.resize(static_cast<size_t>(p.realized_size));
        for (Cell& c : p.cells) {
            c.x = cells.i32();
            c.y = cells.i32();
        }
        expect_offset += static_cast<uint64_t>(p.realized_size);
    }
    if (expect_offset != total) throw data_error(path + ".cells: cell count mismatch");
    cells.expect_exhausted("allocation cell list");

    size_t n_events = 0;
    if (!(f >> word >> n_events) || word != "events")
        throw data_error(path + ": missing event count");
    std::string line;
    std::getline(f, line);  // consume the rest of the count line
    for (size_t i = 0; i < n_events; ++i) {
        if (!std::getline(f, line) || line.rfind("! ", 0) != 0)
            throw data_error(path + ": truncated event list");
        log.events.push_back(line.substr(2));
    }
    return log;
}

// Re-applies the journal to the start map. Every journaled cell must still
// hold the departure class when its record is replayed; the result is the
// simulated map, bit for bit.
inline LuGrid replay_log(const LuGrid& initial, const AllocationLog& log) {
    LuGrid grid = initial;
    for (const PatchRecord& p : log.patches) {
        if (p.realized_size != static_cast<long>(p.cells.size()))
            throw data_error("allocation log record is inconsistent");
        for (const Cell& c : p.cells) {
            if (!grid.in_bounds(c.x, c.y) || grid.at(c.x, c.y) != p.from)
                throw data_error("allocation log does not replay: cell (" + std::to_string(c.x) +
                                 "," + std::to_string(c.y) + ") is not class " +
                                 std::to_string(int(p.from)));
            grid.set(c.x, c.y, p.to);
        }
    }
    return grid;
}

}  // namespace luc::ca
