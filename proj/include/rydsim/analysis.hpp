#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rydsim/errors.hpp"
#include "rydsim/hilbert.hpp"
#include "rydsim/measure.hpp"
#include "rydsim/units.hpp"

namespace rydsim {

// --- connected correlators --------------------------------------------------

// G(k,l) on the signed displacement grid [-K..K] x [-L..L], together with the
// number of site pairs in each displacement class. G(k,l) = G(-k,-l).
struct CorrelationMap {
    int K = 0, L = 0;
    Eigen::ArrayXXd values;  // (2K+1) x (2L+1), index (k+K, l+L)
    Eigen::ArrayXXd counts;
    bool rectify_signs = true;  // (-1)^(k+l) rectification applies (density maps)

    double at(int k, int l) const { return values(k + K, l + L); }
    double count_at(int k, int l) const { return counts(k + K, l + L); }
};

namespace detail {

// Shared accumulation for density and staggered-magnetization correlators:
// field(shot) returns one value per site.
template <typename FieldFn>
CorrelationMap connected_correlator(const ShotSet& shots, FieldFn&& field, bool rectify) {
    const int nx = shots.nx, ny = shots.ny;
    const int n = shots.n_sites;
    const std::size_t S = shots.shots.size();
    if (S < 2) throw std::invalid_argument("connected correlator needs >= 2 shots");

    std::vector<double> mean(n, 0.0), pair_mean(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> f(n);
    for (const Config shot : shots.shots) {
        field(shot, f);
        for (int i = 0; i < n; ++i) {
            mean[i] += f[i];
            for (int j = i; j < n; ++j) pair_mean[static_cast<std::size_t>(i) * n + j] += f[i] * f[j];
        }
    }
    for (auto& x : mean) x /= static_cast<double>(S);
    for (auto& x : pair_mean) x /= static_cast<double>(S);

    CorrelationMap map;
    map.K = nx - 1;
    map.L = ny - 1;
    map.rectify_signs = rectify;
    map.values = Eigen::ArrayXXd::Zero(2 * map.K + 1, 2 * map.L + 1);
    map.counts = Eigen::ArrayXXd::Zero(2 * map.K + 1, 2 * map.L + 1);
    // i <= j accumulation into signed classes, then mirror.
    for (int i = 0; i < n; ++i) {
        const int ci = i % nx, ri = i / nx;
        for (int j = i; j < n; ++j) {
            const int k = (j % nx) - ci, l = (j / nx) - ri;
            const double g =
                pair_mean[static_cast<std::size_t>(i) * n + j] - mean[i] * mean[j];
            map.values(k + map.K, l + map.L) += g;
            map.counts(k + map.K, l + map.L) += 1.0;
        }
    }
    for (int k = -map.K; k <= map.K; ++k)
        for (int l = -map.L; l <= map.L; ++l) {
            if (l > 0 || (l == 0 && k >= 0)) continue;  // accumulated by i <= j
            map.values(k + map.K, l + map.L) = map.values(-k + map.K, -l + map.L);
            map.counts(k + map.K, l + map.L) = map.counts(-k + map.K, -l + map.L);
        }
    for (int k = -map.K; k <= map.K; ++k)
        for (int l = -map.L; l <= map.L; ++l)
            if (map.counts(k + map.K, l + map.L) > 0.0)
                map.values(k + map.K, l + map.L) /= map.counts(k + map.K, l + map.L);
    return map;
}

inline void occupation_field(Config shot, std::vector<double>& f) {
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<double>((shot >> i) & 1u);
}

}  // namespace detail

// Connected density-density correlator G2(k,l), pairs classed by signed
// displacement, expectations over shots, no periodic wrap.
inline CorrelationMap g2_density(const ShotSet& shots) {
    shots.require_grid("g2_density");
    return detail::connected_correlator(
        shots, [](Config s, std::vector<double>& f) { detail::occupation_field(s, f); }, true);
}

// Coarse-grained local staggered magnetization of one shot:
// m_i = (-1)^(col+row)/N_i sum_nn (n_i - n_j), N_i the actual neighbor count.
inline std::vector<double> staggered_field(Config shot, int nx, int ny) {
    std::vector<double> m(static_cast<std::size_t>(nx) * ny, 0.0);
    for (int r = 0; r < ny; ++r)
        for (int c = 0; c < nx; ++c) {
            const int i = r * nx + c;
            const double ni = static_cast<double>((shot >> i) & 1u);
            double acc = 0.0;
            int cnt = 0;
            const int dc[4] = {1, -1, 0, 0}, dr[4] = {0, 0, 1, -1};
            for (int d = 0; d < 4; ++d) {
                const int cc = c + dc[d], rr = r + dr[d];
                if (cc < 0 || cc >= nx || rr < 0 || rr >= ny) continue;
                const int j = rr * nx + cc;
                acc += ni - static_cast<double>((shot >> j) & 1u);
                ++cnt;
            }
            const double sign = ((c + r) % 2 == 0) ? 1.0 : -1.0;
            m[i] = sign * acc / cnt;
        }
    return m;
}

inline std::vector<double> staggered_field(const ShotSet& shots, std::size_t shot_index) {
    shots.require_grid("staggered_field");
    return staggered_field(shots.shots.at(shot_index), shots.nx, shots.ny);
}

// Connected correlator of the coarse-grained staggered magnetization. Already
// sign-corrected, so no rectification is applied when fitting.
inline CorrelationMap g2_m(const ShotSet& shots) {
    shots.require_grid("g2_m");
    const int nx = shots.nx, ny = shots.ny;
    return detail::connected_correlator(
        shots,
        [nx, ny](Config s, std::vector<double>& f) { f = staggered_field(s, nx, ny); },
        false);
}

// --- correlation length -----------------------------------------------------

enum class FitDirection { horizontal, vertical, radial };

struct CorrelationLengthFit {
    double xi = 0.0;       // sites
    double xi_err = 0.0;   // standard error from the linear fit
    bool infinite = false; // slope >= -1e-6: no measurable decay
    int n_points = 0;
};

// Least-squares fit of log G_rect(r) over 1 <= r <= L/2. For density maps
// G_rect(k,l) = (-1)^(k+l) G2(k,l); magnetization maps are used as-is.
// Non-positive rectified values inside the window are dropped pointwise.
inline CorrelationLengthFit fit_correlation_length(const CorrelationMap& map,
                                                   FitDirection dir) {
    std::vector<std::pair<double, double>> pts;  // (r, G_rect)
    // window 1 <= r <= L/2 with L the number of sites along the fit direction
    const double rmax = ((dir == FitDirection::vertical ? map.L : map.K) + 1) / 2.0 + 1e-9;
    auto rect = [&](int k, int l) {
        const double v = map.at(k, l);
        return map.rectify_signs ? (((k + l) % 2 == 0) ? v : -v) : v;
    };
    if (dir == FitDirection::horizontal) {
        for (int k = 1; k <= map.K && k <= static_cast<int>(rmax); ++k)
            pts.emplace_back(k, rect(k, 0));
    } else if (dir == FitDirection::vertical) {
        for (int l = 1; l <= map.L && l <= static_cast<int>(rmax); ++l)
            pts.emplace_back(l, rect(0, l));
    } else {
        // radial average with bin width 0.5 sites, weighted by pair counts
        const double rlim = (std::min(map.K, map.L) + 1) / 2.0 + 1e-9;
        std::vector<double> num, den;
        for (int k = -map.K; k <= map.K; ++k)
            for (int l = -map.L; l <= map.L; ++l) {
                if (k == 0 && l == 0) continue;
                const double r = std::sqrt(static_cast<double>(k) * k + static_cast<double>(l) * l);
                if (r > rlim) continue;
                const std::size_t bin = static_cast<std::size_t>(std::lround(r / 0.5));
                if (num.size() <= bin) {
                    num.resize(bin + 1, 0.0);
                    den.resize(bin + 1, 0.0);
                }
                const double w = map.count_at(k, l);
                num[bin] += w * rect(k, l);
                den[bin] += w;
            }
        for (std::size_t b = 0; b < num.size(); ++b)
            if (den[b] > 0.0) pts.emplace_back(0.5 * b, num[b] / den[b]);
    }
    if (pts.size() < 4)
        throw AnalysisError("fit_correlation_length: fewer than 4 displacements in window");

    std::vector<std::pair<double, double>> loge;
    for (auto& [r, g] : pts)
        if (g > 0.0 && r >= 1.0 - 1e-9) loge.emplace_back(r, std::log(g));
    if (loge.size() < 3)
        throw AnalysisError(
            "fit_correlation_length: fewer than 3 positive rectified points remain");

    // ordinary least squares y = a + b r
    double sr = 0, sy = 0, srr = 0, sry = 0;
    for (auto& [r, y] : loge) {
        sr += r;
        sy += y;
        srr += r * r;
        sry += r * y;
    }
    const double n = static_cast<double>(loge.size());
    const double denom = n * srr - sr * sr;
    const double b = (n * sry - sr * sy) / denom;
    const double a = (sy - b * sr) / n;
    double ss = 0.0;
    for (auto& [r, y] : loge) {
        const double e = y - (a + b * r);
        ss += e * e;
    }
    const double var_b = (loge.size() > 2) ? (ss / (n - 2.0)) * (n / denom) : 0.0;

    CorrelationLengthFit fit;
    fit.n_points = static_cast<int>(loge.size());
    if (b >= -1e-6) {
        fit.infinite = true;
        fit.xi = std::numeric_limits<double>::infinity();
        return fit;
    }
    fit.xi = -1.0 / b;
    fit.xi_err = std::sqrt(std::max(0.0, var_b)) / (b * b);
    return fit;
}

// --- Fourier order parameters -----------------------------------------------

struct FourierSpectrum {
    std::vector<std::array<double, 2>> kpoints;
    std::vector<double> values;
    bool symmetrized = false;

    double at(double k1, double k2) const {
        for (std::size_t i = 0; i < kpoints.size(); ++i)
            if (std::abs(kpoints[i][0] - k1) < 1e-12 && std::abs(kpoints[i][1] - k2) < 1e-12)
                return values[i];
        throw std::invalid_argument("FourierSpectrum: k-point not computed");
    }
};

// Per-configuration F(k) = |sum_i e^{i k.x_i} n_i| / sqrt(N) on the grid.
inline double fourier_single(Config shot, int nx, int ny, double k1, double k2) {
    std::complex<double> acc = 0.0;
    Config c = shot;
    while (c) {
        const int i = std::countr_zero(c);
        c &= c - 1;
        acc += std::polar(1.0, k1 * (i % nx) + k2 * (i / nx));
    }
    return std::abs(acc) / std::sqrt(static_cast<double>(nx) * ny);
}

// Ensemble mean of per-shot F(k); symmetrize averages (k1,k2) with (k2,k1).
inline FourierSpectrum fourier(const ShotSet& shots,
                               const std::vector<std::array<double, 2>>& kpoints,
                               bool symmetrize) {
    shots.require_grid("fourier");
    FourierSpectrum spec;
    spec.kpoints = kpoints;
    spec.symmetrized = symmetrize;
    spec.values.assign(kpoints.size(), 0.0);
    for (const Config s : shots.shots)
        for (std::size_t q = 0; q < kpoints.size(); ++q) {
            double v = fourier_single(s, shots.nx, shots.ny, kpoints[q][0], kpoints[q][1]);
            if (symmetrize)
                v = 0.5 * (v + fourier_single(s, shots.nx, shots.ny, kpoints[q][1], kpoints[q][0]));
            spec.values[q] += v;
        }
    for (auto& v : spec.values) v /= static_cast<double>(shots.shots.size());
    return spec;
}

struct OrderParameters {
    double checkerboard = 0.0;  // F~(pi,pi) - F~(0,pi)
    double striated = 0.0;      // F~(0,pi) - F~(pi/2,pi)
    double star = 0.0;          // F~(pi,pi/2)
};

namespace detail {
inline OrderParameters order_parameters_from(
    const std::function<double(double, double)>& fsym) {
    OrderParameters op;
    const double f_pipi = fsym(kPi, kPi);
    const double f_0pi = fsym(0.0, kPi);
    const double f_halfpi = fsym(kPi / 2.0, kPi);
    op.checkerboard = f_pipi - f_0pi;
    op.striated = f_0pi - f_halfpi;
    op.star = f_halfpi;  // F~ symmetric: F~(pi,pi/2) = F~(pi/2,pi)
    return op;
}
}  // namespace detail

inline OrderParameters order_parameters(const ShotSet& shots) {
    shots.require_grid("order_parameters");
    const auto spec = fourier(shots, {{kPi, kPi}, {0.0, kPi}, {kPi / 2.0, kPi}}, true);
    return detail::order_parameters_from(
        [&](double a, double b) { return spec.at(a, b); });
}

// --- exact (state-vector) counterparts --------------------------------------
// Born-rule expectations of the same per-shot functionals, used both by the
// phase-diagram driver (exact ground-state order parameters) and as the
// independent route in sampling-consistency checks.

inline void require_square_grid(const StateVector& state, int nx, int ny, const char* what) {
    if (nx < 1 || ny < 1 || nx * ny != state.basis->n_sites())
        throw GridIndexError(std::string(what) + ": state is not over an nx x ny grid");
}

template <typename Fn>
double born_expectation(const StateVector& state, Fn&& per_config) {
    const Basis& b = *state.basis;
    double acc = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k) {
        const double p = std::norm(state.amplitudes[static_cast<Eigen::Index>(k)]);
        if (p > 0.0) acc += p * per_config(b.at(k));
    }
    return acc;
}

inline FourierSpectrum fourier_exact(const StateVector& state, int nx, int ny,
                                     const std::vector<std::array<double, 2>>& kpoints,
                                     bool symmetrize) {
    require_square_grid(state, nx, ny, "fourier_exact");
    FourierSpectrum spec;
    spec.kpoints = kpoints;
    spec.symmetrized = symmetrize;
    for (const auto& kp : kpoints) {
        double v = born_expectation(state, [&](Config c) {
            double f = fourier_single(c, nx, ny, kp[0], kp[1]);
            if (symmetrize) f = 0.5 * (f + fourier_single(c, nx, ny, kp[1], kp[0]));
            return f;
        });
        spec.values.push_back(v);
    }
    return spec;
}

inline OrderParameters order_parameters_exact(const StateVector& state, int nx, int ny) {
    const auto spec =
        fourier_exact(state, nx, ny, {{kPi, kPi}, {0.0, kPi}, {kPi / 2.0, kPi}}, true);
    return detail::order_parameters_from(
        [&](double a, double b) { return spec.at(a, b); });
}

// Exact connected density-density correlator of a state.
inline CorrelationMap g2_density_exact(const StateVector& state, int nx, int ny) {
    require_square_grid(state, nx, ny, "g2_density_exact");
    const Basis& b = *state.basis;
    const int n = nx * ny;
    std::vector<double> mean(n, 0.0), pair_mean(static_cast<std::size_t>(n) * n, 0.0);
    for (std::size_t k = 0; k < b.size(); ++k) {
        const double p = std::norm(state.amplitudes[static_cast<Eigen::Index>(k)]);
        if (p == 0.0) continue;
        const Config c = b.at(k);
        for (int i = 0; i < n; ++i) {
            if (!((c >> i) & 1u)) continue;
            mean[i] += p;
            for (int j = i; j < n; ++j)
                if ((c >> j) & 1u) pair_mean[static_cast<std::size_t>(i) * n + j] += p;
        }
    }
    CorrelationMap map;
    map.K = nx - 1;
    map.L = ny - 1;
    map.rectify_signs = true;
    map.values = Eigen::ArrayXXd::Zero(2 * map.K + 1, 2 * map.L + 1);
    map.counts = Eigen::ArrayXXd::Zero(2 * map.K + 1, 2 * map.L + 1);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            const int k = (j % nx) - (i % nx), l = (j / nx) - (i / nx);
            map.values(k + map.K, l + map.L) +=
                pair_mean[static_cast<std::size_t>(i) * n + j] - mean[i] * mean[j];
            map.counts(k + map.K, l + map.L) += 1.0;
        }
    for (int k = -map.K; k <= map.K; ++k)
        for (int l = -map.L; l <= map.L; ++l) {
            if (l > 0 || (l == 0 && k >= 0)) continue;  // accumulated by i <= j
            map.values(k + map.K, l + map.L) = map.values(-k + map.K, -l + map.L);
            map.counts(k + map.K, l + map.L) = map.counts(-k + map.K, -l + map.L);
        }
    for (int k = -map.K; k <= map.K; ++k)
        for (int l = -map.L; l <= map.L; ++l)
            if (map.counts(k + map.K, l + map.L) > 0.0)
                map.values(k + map.K, l + map.L) /= map.counts(k + map.K, l + map.L);
    return map;
}

// --- conditional Rydberg density P^(d) ---------------------------------------

struct ConditionalDensity {
    double value = 0.0;
    double numerator = 0.0;    // sum over shots/sites of n_i * O_i^(d)
    double denominator = 0.0;  // sum of O_i^(d)
    bool defined = false;
};

namespace detail {

// O_i^(d) = [all 4 nearest neighbors ground] * [exactly d diagonal neighbors
// excited]; bulk sites only (full 8-site neighborhood).
inline bool conditional_projector(Config c, int nx, int ny, int col, int row, int d,
                                  bool& n_i) {
    const auto bit = [&](int cc, int rr) { return (c >> (rr * nx + cc)) & 1u; };
    n_i = bit(col, row);
    if (bit(col - 1, row) || bit(col + 1, row) || bit(col, row - 1) || bit(col, row + 1))
        return false;
    const int diag = static_cast<int>(bit(col - 1, row - 1)) + bit(col + 1, row - 1) +
                     bit(col - 1, row + 1) + bit(col + 1, row + 1);
    return diag == d;
}

template <typename EachConfig>
ConditionalDensity conditional_density_impl(int nx, int ny, int d, EachConfig&& each) {
    if (d < 0 || d > 4)
        throw std::invalid_argument("conditional_density: d must be in {0..4}");
    if (nx < 3 || ny < 3)
        throw std::invalid_argument("conditional_density: grid too small for bulk sites");
    ConditionalDensity out;
    each([&](Config c, double weight) {
        for (int row = 1; row < ny - 1; ++row)
            for (int col = 1; col < nx - 1; ++col) {
                bool ni = false;
                if (detail::conditional_projector(c, nx, ny, col, row, d, ni)) {
                    out.denominator += weight;
                    if (ni) out.numerator += weight;
                }
            }
    });
    if (out.denominator > 0.0) {
        out.value = out.numerator / out.denominator;
        out.defined = true;
    }
    return out;
}

}  // namespace detail

inline ConditionalDensity conditional_density(const ShotSet& shots, int d) {
    shots.require_grid("conditional_density");
    return detail::conditional_density_impl(shots.nx, shots.ny, d, [&](auto&& visit) {
        for (const Config s : shots.shots) visit(s, 1.0);
    });
}

inline ConditionalDensity conditional_density_exact(const StateVector& state, int nx, int ny,
                                                    int d) {
    require_square_grid(state, nx, ny, "conditional_density_exact");
    const Basis& b = *state.basis;
    return detail::conditional_density_impl(nx, ny, d, [&](auto&& visit) {
        for (std::size_t k = 0; k < b.size(); ++k) {
            const double p = std::norm(state.amplitudes[static_cast<Eigen::Index>(k)]);
            if (p > 0.0) visit(b.at(k), p);
        }
    });
}

// --- critical point ----------------------------------------------------------

struct DensityCurve {
    std::vector<double> delta;  // strictly increasing
    std::vector<double> n;      // mean Rydberg density at each delta
};

struct CriticalPointOptions {
    // Fit windows [lo, hi] in the same units as the curve's delta axis. When
    // empty, a default family of six windows spanning the central portion of
    // the data range is used (fractions {0.6, 0.8, 1.0} of the range, centered
    // at {0.45, 0.55} of the range).
    std::vector<std::array<double, 2>> windows;
};

struct CriticalPointResult {
    double delta_c = 0.0;
    double delta_c_err = 0.0;  // spread over fit windows
    std::vector<double> per_window;
};

// Susceptibility-peak extraction: cubic fits over a family of windows; the
// peak of the fitted derivative locates the critical point per window, and
// mean +/- spread over windows is returned.
inline CriticalPointResult critical_point(const DensityCurve& curve,
                                          const CriticalPointOptions& options = {}) {
    const std::size_t np = curve.delta.size();
    if (np != curve.n.size() || np < 10)
        throw std::invalid_argument("critical_point: need >= 10 (delta, n) points");
    for (std::size_t i = 1; i < np; ++i)
        if (!(curve.delta[i] > curve.delta[i - 1]))
            throw std::invalid_argument("critical_point: delta must strictly increase");

    std::vector<std::array<double, 2>> windows = options.windows;
    if (windows.empty()) {
        const double lo = curve.delta.front(), hi = curve.delta.back();
        const double range = hi - lo;
        for (double center : {0.45, 0.55})
            for (double width : {0.6, 0.8, 1.0}) {
                const double c = lo + center * range, h = 0.5 * width * range;
                windows.push_back({std::max(lo, c - h), std::min(hi, c + h)});
            }
    }

    CriticalPointResult res;
    for (const auto& [wlo, whi] : windows) {
        std::vector<double> xs, ys;
        for (std::size_t i = 0; i < np; ++i)
            if (curve.delta[i] >= wlo - 1e-12 && curve.delta[i] <= whi + 1e-12) {
                xs.push_back(curve.delta[i]);
                ys.push_back(curve.n[i]);
            }
        if (xs.size() < 5) continue;
        // center/scale for conditioning
        const double x0 = 0.5 * (xs.front() + xs.back());
        const double xs_scale = std::max(1e-300, 0.5 * (xs.back() - xs.front()));
        Eigen::MatrixXd A(xs.size(), 4);
        Eigen::VectorXd y(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double t = (xs[i] - x0) / xs_scale;
            A(i, 0) = 1.0;
            A(i, 1) = t;
            A(i, 2) = t * t;
            A(i, 3) = t * t * t;
            y(i) = ys[i];
        }
        Eigen::VectorXd coef = A.colPivHouseholderQr().solve(y);
        // derivative b + 2ct + 3dt^2 peaks at t* = -c/(3d) when d < 0
        const double c2 = coef[2], c3 = coef[3];
        if (!(c3 < 0.0)) continue;
        const double tstar = -c2 / (3.0 * c3);
        if (tstar <= (xs.front() - x0) / xs_scale || tstar >= (xs.back() - x0) / xs_scale)
            continue;
        res.per_window.push_back(x0 + tstar * xs_scale);
    }
    if (res.per_window.empty())
        throw AnalysisError("critical_point: no window produced an interior derivative peak");
    double sum = 0.0;
    for (double v : res.per_window) sum += v;
    res.delta_c = sum / res.per_window.size();
    double ss = 0.0;
    for (double v : res.per_window) ss += (v - res.delta_c) * (v - res.delta_c);
    res.delta_c_err =
        res.per_window.size() > 1 ? std::sqrt(ss / (res.per_window.size() - 1)) : 0.0;
    return res;
}

// --- Kibble-Zurek rescaling and collapse --------------------------------------

struct CollapseCurve {
    double rate = 0.0;                 // sweep rate s (any fixed unit)
    std::vector<double> delta;         // strictly increasing
    std::vector<double> xi;
    std::vector<double> xi_err;        // optional, may be empty
};

struct CollapseCurves {
    std::vector<CollapseCurve> curves;
    double s0 = 0.0;       // reference rate
    double z = 1.0;
    double nu = 0.0;
    double delta_c = 0.0;
};

inline double kz_mu(double z, double nu) { return nu / (1.0 + z * nu); }
inline double kz_kappa(double z, double nu) { return -1.0 / (1.0 + z * nu); }

// xi~ = xi (s/s0)^mu, delta~ = (delta - delta_c)(s/s0)^kappa.
inline CollapseCurves kz_rescale(const CollapseCurves& in) {
    if (in.curves.size() < 2) throw std::invalid_argument("kz_rescale: need >= 2 sweep rates");
    const double mu = kz_mu(in.z, in.nu), kappa = kz_kappa(in.z, in.nu);
    CollapseCurves out = in;
    for (auto& c : out.curves) {
        if (!(c.rate > 0.0)) throw std::invalid_argument("kz_rescale: rates must be positive");
        const double f = c.rate / in.s0;
        const double fmu = std::pow(f, mu), fka = std::pow(f, kappa);
        for (auto& x : c.xi) x *= fmu;
        for (auto& x : c.xi_err) x *= fmu;
        for (auto& d : c.delta) d = (d - in.delta_c) * fka;
    }
    return out;
}

// Collapse distance D: RMS over all ordered curve pairs (i', i) and points j of
// |xi~^(i')_j - f^(i)(delta~^(i')_j)|, where f^(i) linearly interpolates curve
// i; only points inside the overlap domain of all curves enter.
inline double collapse_distance(const CollapseCurves& rescaled) {
    const auto& cs = rescaled.curves;
    if (cs.size() < 2) throw std::invalid_argument("collapse_distance: need >= 2 curves");
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    for (const auto& c : cs) {
        if (c.delta.size() < 5)
            throw std::invalid_argument("collapse_distance: each curve needs >= 5 points");
        lo = std::max(lo, c.delta.front());
        hi = std::min(hi, c.delta.back());
    }
    if (!(lo < hi)) throw AnalysisError("collapse_distance: empty overlap domain");
    auto interp = [](const CollapseCurve& c, double x) {
        auto it = std::upper_bound(c.delta.begin(), c.delta.end(), x);
        std::size_t hi_idx = std::clamp<std::size_t>(it - c.delta.begin(), 1, c.delta.size() - 1);
        const std::size_t lo_idx = hi_idx - 1;
        const double t = (x - c.delta[lo_idx]) / (c.delta[hi_idx] - c.delta[lo_idx]);
        return c.xi[lo_idx] + t * (c.xi[hi_idx] - c.xi[lo_idx]);
    };
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < cs.size(); ++i)
        for (std::size_t ip = 0; ip < cs.size(); ++ip) {
            if (ip == i) continue;
            for (std::size_t j = 0; j < cs[ip].delta.size(); ++j) {
                const double x = cs[ip].delta[j];
                if (x < lo - 1e-15 || x > hi + 1e-15) continue;
                const double diff = cs[ip].xi[j] - interp(cs[i], x);
                acc += diff * diff;
                ++count;
            }
        }
    if (count == 0) throw AnalysisError("collapse_distance: no points in overlap domain");
    return std::sqrt(acc / static_cast<double>(count));
}

struct NuFitResult {
    double nu = 0.0;
    double nu_err = 0.0;
    double d_min = 0.0;
    std::vector<double> nu_grid;
    std::vector<double> d_values;
};

// Scans nu over [0.3, 1.2] in steps of 0.005 and returns the collapse-distance
// minimizer. The uncertainty combines the local curvature of D(nu) with the
// shift of the minimizer when delta_c moves by +/- delta_c_err.
inline NuFitResult fit_nu(const CollapseCurves& curves, double delta_c, double z,
                          double delta_c_err = 0.0, double nu_lo = 0.3, double nu_hi = 1.2,
                          double nu_step = 0.005) {
    if (curves.curves.size() < 2) throw std::invalid_argument("fit_nu: need >= 2 curves");
    auto scan = [&](double dc) {
        NuFitResult r;
        r.d_min = std::numeric_limits<double>::infinity();
        for (double nu = nu_lo; nu <= nu_hi + 1e-12; nu += nu_step) {
            CollapseCurves work = curves;
            work.z = z;
            work.nu = nu;
            work.delta_c = dc;
            const double d = collapse_distance(kz_rescale(work));
            r.nu_grid.push_back(nu);
            r.d_values.push_back(d);
            if (d < r.d_min) {
                r.d_min = d;
                r.nu = nu;
            }
        }
        return r;
    };
    NuFitResult res = scan(delta_c);
    // curvature-based width: quadratic fit of D around the minimum; sigma is
    // where the parabola rises by half of D_min above the minimum.
    double curv_err = nu_step;
    {
        const auto it = std::min_element(res.d_values.begin(), res.d_values.end());
        const std::size_t i0 = static_cast<std::size_t>(it - res.d_values.begin());
        const std::size_t a = i0 >= 5 ? i0 - 5 : 0;
        const std::size_t b = std::min(res.d_values.size() - 1, i0 + 5);
        if (b - a >= 4) {
            Eigen::MatrixXd A(b - a + 1, 3);
            Eigen::VectorXd y(b - a + 1);
            for (std::size_t i = a; i <= b; ++i) {
                const double t = res.nu_grid[i] - res.nu;
                A(i - a, 0) = 1.0;
                A(i - a, 1) = t;
                A(i - a, 2) = t * t;
                y(i - a) = res.d_values[i];
            }
            const Eigen::VectorXd c = A.colPivHouseholderQr().solve(y);
            if (c[2] > 0.0)
                curv_err = std::max(nu_step, std::sqrt(0.5 * std::max(res.d_min, 1e-12) / c[2]));
        }
    }
    double dc_err = 0.0;
    if (delta_c_err > 0.0) {
        const double nu_plus = scan(delta_c + delta_c_err).nu;
        const double nu_minus = scan(delta_c - delta_c_err).nu;
        dc_err = 0.5 * std::abs(nu_plus - nu_minus);
    }
    res.nu_err = std::sqrt(curv_err * curv_err + dc_err * dc_err);
    return res;
}

}  // namespace rydsim
