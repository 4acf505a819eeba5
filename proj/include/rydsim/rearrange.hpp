#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "rydsim/errors.hpp"
#include "rydsim/rng.hpp"

namespace rydsim {

// Row 0 is the top of the array; "downward" scans move toward larger row
// indices and exit below row rows-1.
struct GridOccupancy {
    int rows = 0, cols = 0;
    std::vector<std::uint8_t> occupied;  // row-major, rows x cols
    std::vector<std::uint8_t> target;

    static GridOccupancy empty(int rows, int cols) {
        GridOccupancy g;
        g.rows = rows;
        g.cols = cols;
        g.occupied.assign(static_cast<std::size_t>(rows) * cols, 0);
        g.target.assign(static_cast<std::size_t>(rows) * cols, 0);
        return g;
    }
    std::size_t idx(int row, int col) const {
        return static_cast<std::size_t>(row) * cols + col;
    }
    bool occ(int row, int col) const { return occupied[idx(row, col)] != 0; }
    bool tgt(int row, int col) const { return target[idx(row, col)] != 0; }
    int atom_count(int col) const {
        int n = 0;
        for (int r = 0; r < rows; ++r) n += occ(r, col);
        return n;
    }
    int target_count(int col) const {
        int n = 0;
        for (int r = 0; r < rows; ++r) n += tgt(r, col);
        return n;
    }
    int total_atoms() const { return std::accumulate(occupied.begin(), occupied.end(), 0); }
    int total_targets() const { return std::accumulate(target.begin(), target.end(), 0); }
    int filled_targets() const {
        int n = 0;
        for (std::size_t i = 0; i < occupied.size(); ++i) n += (occupied[i] && target[i]);
        return n;
    }
};

// Marks an r x c block of targets centered on the grid.
inline void set_centered_block_target(GridOccupancy& g, int trows, int tcols) {
    if (trows > g.rows || tcols > g.cols)
        throw std::invalid_argument("set_centered_block_target: block exceeds grid");
    const int r0 = (g.rows - trows) / 2, c0 = (g.cols - tcols) / 2;
    for (int r = r0; r < r0 + trows; ++r)
        for (int c = c0; c < c0 + tcols; ++c) g.target[g.idx(r, c)] = 1;
}

inline GridOccupancy random_load(int rows, int cols, double p, std::uint64_t seed) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("random_load: p must be in [0,1]");
    GridOccupancy g = GridOccupancy::empty(rows, cols);
    std::mt19937_64 gen(seed);
    for (auto& cell : g.occupied) cell = (uniform_unit(gen) < p) ? 1 : 0;
    return g;
}

// --- move plan ----------------------------------------------------------------

enum class MoveKind { horizontal, vertical, eject };

struct Move {
    MoveKind kind = MoveKind::vertical;
    int lane = 0;   // row for horizontal moves, column for vertical/eject
    int from = 0;   // column position (horizontal) or row position (vertical)
    int to = 0;     // eject: rows (exit below the bottom row)
    int group = 0;  // moves sharing a group id execute in one parallel scan
};

// ramp on/off per transfer: 15 us + 15 us; tweezer speed 75 um/ms; background
// vacuum lifetime ~10 s (<= 0 disables loss).
struct CostModel {
    double pickup_ms = 0.030;
    double speed_um_per_ms = 75.0;
    double site_pitch_um = 5.0;
    double background_lifetime_s = 10.0;

    void validate() const {
        if (!(pickup_ms >= 0.0) || !(speed_um_per_ms > 0.0) || !(site_pitch_um > 0.0))
            throw std::invalid_argument("CostModel: non-positive entries");
    }
};

struct MovePlan {
    std::vector<Move> presort_moves;
    std::vector<std::vector<Move>> eject_scans;
    std::vector<std::vector<Move>> column_scans;
    int n_pickups = 0;
    int n_scans = 0;
    double est_time_ms = 0.0;

    void finalize_cost(const CostModel& cost) {
        cost.validate();
        n_pickups = 0;
        n_scans = 0;
        double path_um = 0.0;
        int group = -1;
        int span = 0;
        for (const auto& mv : presort_moves) {
            ++n_pickups;
            if (mv.group != group) {
                path_um += span * cost.site_pitch_um;
                span = 0;
                group = mv.group;
                ++n_scans;
            }
            span = std::max(span, std::abs(mv.to - mv.from));
        }
        path_um += span * cost.site_pitch_um;
        for (const auto* phase : {&eject_scans, &column_scans})
            for (const auto& scan : *phase) {
                ++n_scans;
                int s = 0;
                for (const auto& mv : scan) {
                    ++n_pickups;
                    s = std::max(s, std::abs(mv.to - mv.from));
                }
                path_um += s * cost.site_pitch_um;
            }
        est_time_ms = n_pickups * cost.pickup_ms + path_um / cost.speed_um_per_ms;
    }
};

// --- pre-sorting ----------------------------------------------------------------

struct PresortResult {
    std::vector<Move> moves;
    GridOccupancy occupancy;
    std::vector<int> unresolved_columns;  // still deficient (global shortage)
};

// Moves atoms between columns until every column holds at least its target
// count. Donors come from whichever side of a deficient column has the larger
// total surplus (tie: left), nearest donor column first (tie: smaller row),
// and only into rows where the deficient column has an empty trap.
inline PresortResult presort(const GridOccupancy& grid) {
    PresortResult res;
    res.occupancy = grid;
    GridOccupancy& g = res.occupancy;
    std::vector<int> count(g.cols), want(g.cols);
    for (int c = 0; c < g.cols; ++c) {
        count[c] = g.atom_count(c);
        want[c] = g.target_count(c);
    }
    int group = 0;
    for (;;) {
        bool any_deficient = false, progress = false;
        for (int j = 0; j < g.cols; ++j) {
            if (count[j] >= want[j]) continue;
            any_deficient = true;
            int left = 0, right = 0;
            for (int c = 0; c < j; ++c) left += std::max(0, count[c] - want[c]);
            for (int c = j + 1; c < g.cols; ++c) right += std::max(0, count[c] - want[c]);
            if (left == 0 && right == 0) continue;
            const bool from_left = left >= right;  // tie: left
            bool moved_any = false;
            while (count[j] < want[j]) {
                // nearest donor atom on the chosen side in a row with an empty
                // trap in column j
                int best_col = -1, best_row = -1;
                for (int dist = 1; dist < g.cols && best_col < 0; ++dist) {
                    const int c = from_left ? j - dist : j + dist;
                    if (c < 0 || c >= g.cols) break;
                    if (count[c] <= want[c]) continue;
                    for (int r = 0; r < g.rows; ++r)
                        if (g.occ(r, c) && !g.occ(r, j)) {
                            best_col = c;
                            best_row = r;
                            break;
                        }
                }
                if (best_col < 0) break;  // one-side surplus exhausted
                g.occupied[g.idx(best_row, best_col)] = 0;
                g.occupied[g.idx(best_row, j)] = 1;
                --count[best_col];
                ++count[j];
                res.moves.push_back({MoveKind::horizontal, best_row, best_col, j, group});
                moved_any = true;
                progress = true;
            }
            if (moved_any) ++group;  // one parallel batch per deficient column visit
        }
        if (!any_deficient || !progress) break;
    }
    for (int j = 0; j < g.cols; ++j)
        if (count[j] < want[j]) res.unresolved_columns.push_back(j);
    return res;
}

// --- ejection --------------------------------------------------------------------

struct EjectResult {
    std::vector<std::vector<Move>> scans;
    GridOccupancy occupancy;
};

// Parallel downward scans; each scan ejects the bottom-most atom from every
// column still holding excess (which keeps the scan crossing-free), until all
// columns hold exactly their target count. Scan count = max per-column excess.
inline EjectResult eject(const GridOccupancy& grid) {
    EjectResult res;
    res.occupancy = grid;
    GridOccupancy& g = res.occupancy;
    for (;;) {
        std::vector<Move> scan;
        for (int c = 0; c < g.cols; ++c) {
            if (g.atom_count(c) <= g.target_count(c)) continue;
            for (int r = g.rows - 1; r >= 0; --r)
                if (g.occ(r, c)) {
                    g.occupied[g.idx(r, c)] = 0;
                    scan.push_back({MoveKind::eject, c, r, g.rows, 0});
                    break;
                }
        }
        if (scan.empty()) break;
        res.scans.push_back(std::move(scan));
    }
    return res;
}

// --- parallel sorting within columns ----------------------------------------------

struct ColumnSortResult {
    std::vector<std::vector<Move>> scans;
    GridOccupancy occupancy;
};

namespace detail {

inline std::vector<int> column_rows(const GridOccupancy& g, int col, bool targets) {
    std::vector<int> rows;
    for (int r = 0; r < g.rows; ++r)
        if (targets ? g.tgt(r, col) : g.occ(r, col)) rows.push_back(r);
    return rows;
}

// One scan moving at most one atom per column in the given direction. The
// order-preserving assignment (i-th atom to i-th target) guarantees that the
// chosen frontier atom always reaches its target: upward scans take the
// topmost atom that must move up, downward scans the bottommost that must
// move down.
inline bool column_sort_scan(GridOccupancy& g,
                             const std::vector<std::vector<int>>& targets_per_col, bool upward,
                             std::vector<Move>& scan) {
    bool moved = false;
    for (int c = 0; c < g.cols; ++c) {
        const auto& tgt = targets_per_col[c];
        if (tgt.empty()) continue;
        const auto atoms = column_rows(g, c, false);
        const int k = static_cast<int>(tgt.size());
        if (upward) {
            for (int i = 0; i < k; ++i)
                if (atoms[i] > tgt[i]) {
                    g.occupied[g.idx(atoms[i], c)] = 0;
                    g.occupied[g.idx(tgt[i], c)] = 1;
                    scan.push_back({MoveKind::vertical, c, atoms[i], tgt[i], 0});
                    moved = true;
                    break;
                }
        } else {
            for (int i = k - 1; i >= 0; --i)
                if (atoms[i] < tgt[i]) {
                    g.occupied[g.idx(atoms[i], c)] = 0;
                    g.occupied[g.idx(tgt[i], c)] = 1;
                    scan.push_back({MoveKind::vertical, c, atoms[i], tgt[i], 0});
                    moved = true;
                    break;
                }
        }
    }
    return moved;
}

inline ColumnSortResult column_sort_on(const GridOccupancy& grid,
                                       std::vector<std::vector<int>> targets) {
    ColumnSortResult res;
    res.occupancy = grid;
    GridOccupancy& g = res.occupancy;
    const int scan_cap = 2 * g.rows + 2;
    for (bool upward : {true, false}) {
        for (int s = 0; s < scan_cap; ++s) {
            std::vector<Move> scan;
            if (!column_sort_scan(g, targets, upward, scan)) break;
            res.scans.push_back(std::move(scan));
        }
    }
    for (std::size_t c = 0; c < targets.size(); ++c)
        for (int t : targets[c])
            if (!g.occ(t, static_cast<int>(c)))
                throw std::logic_error("column_sort: target left unfilled (scan cap hit)");
    return res;
}

// Per-column effective target rows. Deficient columns keep their topmost
// `have` targets; columns with excess get parking rows appended when
// park_excess is set (ejection deferred).
inline std::vector<std::vector<int>> effective_targets(const GridOccupancy& g,
                                                       bool park_excess) {
    std::vector<std::vector<int>> targets(g.cols);
    for (int c = 0; c < g.cols; ++c) {
        auto tgt = column_rows(g, c, true);
        const int have = g.atom_count(c);
        const int want = static_cast<int>(tgt.size());
        if (have < want) {
            tgt.resize(have);
        } else if (have > want) {
            if (!park_excess)
                throw std::invalid_argument("column_sort: column " + std::to_string(c) +
                                            " holds " + std::to_string(have) + " atoms for " +
                                            std::to_string(want) + " targets");
            int remaining = have - want;
            std::vector<std::uint8_t> is_target(g.rows, 0);
            for (int t : tgt) is_target[t] = 1;
            if (want == 0) {
                // no targets in this column: atoms stay where they are
                tgt = column_rows(g, c, false);
                remaining = 0;
            }
            for (int r = want ? tgt.back() + 1 : 0; r < g.rows && remaining > 0; ++r)
                if (!is_target[r]) {
                    tgt.push_back(r);
                    --remaining;
                }
            for (int r = want ? tgt.front() - 1 : -1; r >= 0 && remaining > 0; --r)
                if (!is_target[r]) {
                    tgt.insert(tgt.begin(), r);
                    --remaining;
                }
            std::sort(tgt.begin(), tgt.end());
        }
        targets[c] = std::move(tgt);
    }
    return targets;
}

}  // namespace detail

// Shuffles the i-th atom (top to bottom) of each column to its i-th target
// trap with repeated parallel scans, upward passes first. Requires equal atom
// and target counts per column.
inline ColumnSortResult column_sort(const GridOccupancy& grid) {
    for (int c = 0; c < grid.cols; ++c)
        if (grid.atom_count(c) != grid.target_count(c))
            throw std::invalid_argument("column_sort: column " + std::to_string(c) + " holds " +
                                        std::to_string(grid.atom_count(c)) + " atoms for " +
                                        std::to_string(grid.target_count(c)) + " targets");
    std::vector<std::vector<int>> targets(grid.cols);
    for (int c = 0; c < grid.cols; ++c) targets[c] = detail::column_rows(grid, c, true);
    return detail::column_sort_on(grid, std::move(targets));
}

// --- full pipeline -----------------------------------------------------------------

struct RearrangeOutcome {
    MovePlan plan;
    GridOccupancy final_occupancy;
    double filling_fraction = 0.0;
    double est_time_ms = 0.0;
    int atoms_lost = 0;
    std::vector<int> unresolved_columns;
    int rounds = 1;
};

namespace detail {

inline int apply_lifetime_loss(GridOccupancy& g, double elapsed_ms, double lifetime_s,
                               std::mt19937_64& gen) {
    if (lifetime_s <= 0.0) return 0;
    const double survive = std::exp(-(elapsed_ms * 1e-3) / lifetime_s);
    int lost = 0;
    for (auto& cell : g.occupied)
        if (cell && uniform_unit(gen) >= survive) {
            cell = 0;
            ++lost;
        }
    return lost;
}

}  // namespace detail

// Runs pre-sort, ejection, and column sorting; two_rounds defers ejection to a
// second round that re-plans residual defects. Lifetime loss (when enabled in
// the cost model) is applied per atom at the end of each round using that
// round's elapsed time.
inline RearrangeOutcome plan_and_simulate(const GridOccupancy& initial, const CostModel& cost,
                                          bool two_rounds, std::uint64_t seed) {
    cost.validate();
    std::mt19937_64 gen(seed);
    RearrangeOutcome out;
    out.rounds = two_rounds ? 2 : 1;
    GridOccupancy g = initial;
    for (int round = 0; round < out.rounds; ++round) {
        const bool do_eject = !two_rounds || round == 1;
        MovePlan plan;
        auto pre = presort(g);
        plan.presort_moves = std::move(pre.moves);
        g = std::move(pre.occupancy);
        out.unresolved_columns = std::move(pre.unresolved_columns);
        if (do_eject) {
            auto ej = eject(g);
            plan.eject_scans = std::move(ej.scans);
            g = std::move(ej.occupancy);
        }
        auto cs = detail::column_sort_on(g, detail::effective_targets(g, !do_eject));
        plan.column_scans = std::move(cs.scans);
        g = std::move(cs.occupancy);
        plan.finalize_cost(cost);
        out.est_time_ms += plan.est_time_ms;
        out.atoms_lost += detail::apply_lifetime_loss(g, plan.est_time_ms,
                                                      cost.background_lifetime_s, gen);
        if (round == 0) {
            out.plan = std::move(plan);
        } else {
            // append round-2 phases; groups stay phase-ordered
            for (auto& m : plan.presort_moves) out.plan.presort_moves.push_back(m);
            for (auto& s : plan.eject_scans) out.plan.eject_scans.push_back(std::move(s));
            for (auto& s : plan.column_scans) out.plan.column_scans.push_back(std::move(s));
            out.plan.n_pickups += plan.n_pickups;
            out.plan.n_scans += plan.n_scans;
            out.plan.est_time_ms += plan.est_time_ms;
        }
    }
    out.final_occupancy = std::move(g);
    out.filling_fraction = initial.total_targets() == 0
                               ? 1.0
                               : static_cast<double>(out.final_occupancy.filled_targets()) /
                                     initial.total_targets();
    return out;
}

// --- export -------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const Move& m) {
    const char* kind = m.kind == MoveKind::horizontal ? "horizontal"
                       : m.kind == MoveKind::eject    ? "eject"
                                                      : "vertical";
    j = nlohmann::json{{"kind", kind}, {"lane", m.lane}, {"from", m.from},
                       {"to", m.to},   {"group", m.group}};
}

inline nlohmann::json plan_to_json(const MovePlan& plan) {
    nlohmann::json j;
    j["presort_moves"] = plan.presort_moves;
    j["eject_scans"] = plan.eject_scans;
    j["column_scans"] = plan.column_scans;
    j["cost"] = {{"n_pickups", plan.n_pickups},
                 {"n_scans", plan.n_scans},
                 {"est_time_ms", plan.est_time_ms}};
    return j;
}

// Event log for replay: t_ms,kind,col,from_row,to_row. Horizontal (pre-sort)
// moves travel along a row, so `col` holds the row lane and from/to hold the
// column endpoints.
inline void write_plan_csv(const std::string& path, const MovePlan& plan,
                           const CostModel& cost, const std::string& comment = "") {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_plan_csv: cannot open " + path);
    if (!comment.empty()) f << "# " << comment << "\n";
    f << "t_ms,kind,col,from_row,to_row\n";
    double t = 0.0;
    char buf[160];
    auto emit = [&](const char* kind, int lane, int from, int to) {
        std::snprintf(buf, sizeof buf, "%.6f,%s,%d,%d,%d\n", t, kind, lane, from, to);
        f << buf;
    };
    int group = -1;
    double span = 0.0;
    for (const auto& m : plan.presort_moves) {
        if (m.group != group) {
            t += span;
            group = m.group;
            span = 0.0;
        }
        emit("horizontal", m.lane, m.from, m.to);
        span = std::max(span, cost.pickup_ms +
                                  std::abs(m.to - m.from) * cost.site_pitch_um /
                                      cost.speed_um_per_ms);
    }
    t += span;
    for (const auto* phase : {&plan.eject_scans, &plan.column_scans})
        for (const auto& scan : *phase) {
            double s = 0.0;
            for (const auto& m : scan) {
                emit(m.kind == MoveKind::eject ? "eject" : "vertical", m.lane, m.from, m.to);
                s = std::max(s, cost.pickup_ms + std::abs(m.to - m.from) * cost.site_pitch_um /
                                                     cost.speed_um_per_ms);
            }
            t += s;
        }
}

}  // namespace rydsim
