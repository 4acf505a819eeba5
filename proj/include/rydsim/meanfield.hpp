#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "json.hpp"
#include "rydsim/errors.hpp"
#include "rydsim/units.hpp"

namespace rydsim {

// --- classical energies per site ---------------------------------------------

struct ClassicalEnergies {
    double checkerboard = 0.0;  // -delta/2 + V(sqrt2 a) + V(2a)
    double star = 0.0;          // -delta/4
    double striated = 0.0;      // -delta/4 + V(2a)/2
    double delta_boundary = 0.0;  // checkerboard-star transition 4[V(sqrt2 a)+V(2a)]
};

inline ClassicalEnergies classical_energies(double v_sqrt2a, double v_2a, double delta) {
    if (v_sqrt2a < 0.0 || v_2a < 0.0)
        throw std::invalid_argument("classical_energies: interactions must be >= 0");
    ClassicalEnergies e;
    e.checkerboard = -0.5 * delta + v_sqrt2a + v_2a;
    e.star = -0.25 * delta;
    e.striated = -0.25 * delta + 0.5 * v_2a;
    e.delta_boundary = 4.0 * (v_sqrt2a + v_2a);
    return e;
}

// --- striated-phase sublattice ansatz -----------------------------------------
//
// Product state over the 2x2 unit cell: the A sublattice (checkerboard sites)
// splits into A1/A2 with per-site states cos(a)|g> + sin(a)|r>, the B
// sublattice is pinned to |g>. The drive expectation enters as
// -(omega/2) sin(2a): the optimal admixture sign is absorbed so the angles
// live in [0, pi/2].

struct SublatticeAnsatz {
    double a1 = 0.0;  // [0, pi/2], more-excited sublattice first
    double a2 = 0.0;
    double energy_per_site = 0.0;
    bool striated = false;  // |a1 - a2| > 1e-4
};

// Sublattice-resolved couplings. The default truncation keeps diagonal
// (sqrt2 a) and third-neighbor (2a) couplings, matching the simplified model;
// all_pairs extends the lattice sums until the 1/r^6 tail converges.
struct MeanFieldCouplings {
    double v_sqrt2a = 0.0;  // rad/s
    double v_2a = 0.0;
    bool all_pairs = false;

    static MeanFieldCouplings from_blockade_ratio(double rb_over_a, double omega,
                                                  bool all_pairs = false) {
        const double va = omega * std::pow(rb_over_a, 6);
        return {va / 8.0, va / 64.0, all_pairs};
    }

    // sum over A1-A2 displacements (odd, odd), per A1 site
    double coupling_cross() const {
        if (!all_pairs) return 4.0 * v_sqrt2a;
        const double va = 8.0 * v_sqrt2a;  // V at distance a
        double acc = 0.0;
        for (int dx = -15; dx <= 15; dx += 2)
            for (int dy = -15; dy <= 15; dy += 2)
                acc += va / std::pow(static_cast<double>(dx) * dx + static_cast<double>(dy) * dy, 3);
        return acc;
    }
    // sum over same-sublattice displacements (even, even) != 0, per site
    double coupling_same() const {
        if (!all_pairs) return 4.0 * v_2a;
        const double va = 8.0 * v_sqrt2a;
        double acc = 0.0;
        for (int dx = -16; dx <= 16; dx += 2)
            for (int dy = -16; dy <= 16; dy += 2) {
                if (dx == 0 && dy == 0) continue;
                acc += va / std::pow(static_cast<double>(dx) * dx + static_cast<double>(dy) * dy, 3);
            }
        return acc;
    }
};

// Variational energy per lattice site of the ansatz, nearest-neighbor blockade
// assumed perfect (B pinned to |g> removes all nearest-neighbor terms).
inline double striated_energy(double a1, double a2, double omega, double delta,
                              const MeanFieldCouplings& vc) {
    const double p1 = std::sin(a1) * std::sin(a1);
    const double p2 = std::sin(a2) * std::sin(a2);
    const double cross = vc.coupling_cross();      // 4 V(sqrt2 a) truncated
    const double same = 0.5 * vc.coupling_same();  // 2 V(2a) truncated
    const double cell = -(0.5 * omega) * (std::sin(2.0 * a1) + std::sin(2.0 * a2)) -
                        delta * (p1 + p2) + cross * p1 * p2 + same * (p1 * p1 + p2 * p2);
    return 0.25 * cell;
}

// The quoted closed form for the dressed striated state:
//   -delta/4 + V(2a)/2 - omega^2/[4(4V(sqrt2 a)-delta)]
//   + omega^2 V(sqrt2 a)/[2(4V(sqrt2 a)-delta)^2]
inline double perturbative_striated_energy(double omega, double delta, double v_sqrt2a,
                                           double v_2a) {
    const double gap = 4.0 * v_sqrt2a - delta;
    if (std::abs(gap) < 1e-12 * std::max(1.0, std::abs(delta)))
        throw AnalysisError("perturbative_striated_energy: pole at 4 V(sqrt2 a) = delta");
    return -0.25 * delta + 0.5 * v_2a - omega * omega / (4.0 * gap) +
           omega * omega * v_sqrt2a / (2.0 * gap * gap);
}

namespace detail {

// Nelder-Mead on [0, pi/2]^2 (reflected at the walls via clamping).
inline std::array<double, 2> nelder_mead_2d(const std::function<double(double, double)>& f,
                                            std::array<double, 2> start, double step,
                                            int max_iter = 400) {
    auto clamp = [](double x) { return std::clamp(x, 0.0, kPi / 2.0); };
    std::array<std::array<double, 2>, 3> simplex = {
        std::array<double, 2>{clamp(start[0]), clamp(start[1])},
        {clamp(start[0] + step), clamp(start[1])},
        {clamp(start[0]), clamp(start[1] + step)}};
    std::array<double, 3> fv;
    for (int i = 0; i < 3; ++i) fv[i] = f(simplex[i][0], simplex[i][1]);
    for (int it = 0; it < max_iter; ++it) {
        // order best..worst
        std::array<int, 3> idx = {0, 1, 2};
        std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fv[a] < fv[b]; });
        const auto &best = simplex[idx[0]], &worst = simplex[idx[2]];
        if (std::abs(fv[idx[2]] - fv[idx[0]]) <
                1e-14 * (std::abs(fv[idx[0]]) + 1e-30) &&
            std::hypot(worst[0] - best[0], worst[1] - best[1]) < 1e-10)
            break;
        const std::array<double, 2> centroid = {
            0.5 * (simplex[idx[0]][0] + simplex[idx[1]][0]),
            0.5 * (simplex[idx[0]][1] + simplex[idx[1]][1])};
        auto try_point = [&](double alpha) {
            std::array<double, 2> p = {clamp(centroid[0] + alpha * (centroid[0] - worst[0])),
                                       clamp(centroid[1] + alpha * (centroid[1] - worst[1]))};
            return p;
        };
        auto reflect = try_point(1.0);
        double fr = f(reflect[0], reflect[1]);
        if (fr < fv[idx[0]]) {
            auto expand = try_point(2.0);
            const double fe = f(expand[0], expand[1]);
            if (fe < fr) {
                simplex[idx[2]] = expand;
                fv[idx[2]] = fe;
            } else {
                simplex[idx[2]] = reflect;
                fv[idx[2]] = fr;
            }
        } else if (fr < fv[idx[1]]) {
            simplex[idx[2]] = reflect;
            fv[idx[2]] = fr;
        } else {
            auto contract = try_point(-0.5);
            const double fc = f(contract[0], contract[1]);
            if (fc < fv[idx[2]]) {
                simplex[idx[2]] = contract;
                fv[idx[2]] = fc;
            } else {
                for (int i : {idx[1], idx[2]}) {
                    simplex[i][0] = clamp(0.5 * (simplex[i][0] + best[0]));
                    simplex[i][1] = clamp(0.5 * (simplex[i][1] + best[1]));
                    fv[i] = f(simplex[i][0], simplex[i][1]);
                }
            }
        }
    }
    std::array<int, 3> idx = {0, 1, 2};
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fv[a] < fv[b]; });
    return simplex[idx[0]];
}

}  // namespace detail

// Grid-seeded local minimization of the ansatz energy over [0, pi/2]^2. The
// reported ansatz has a1 >= a2 (energy is symmetric under swap).
inline SublatticeAnsatz minimize_striated(double omega, double delta,
                                          const MeanFieldCouplings& vc) {
    if (!std::isfinite(omega) || !std::isfinite(delta))
        throw std::invalid_argument("minimize_striated: non-finite parameters");
    auto f = [&](double a1, double a2) { return striated_energy(a1, a2, omega, delta, vc); };
    const int g = 17;
    double best_f = std::numeric_limits<double>::infinity();
    std::array<double, 2> best = {0.0, 0.0};
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < g; ++j) {
            const double a1 = (kPi / 2.0) * i / (g - 1);
            const double a2 = (kPi / 2.0) * j / (g - 1);
            const double v = f(a1, a2);
            if (v < best_f) {
                best_f = v;
                best = {a1, a2};
            }
        }
    const auto refined = detail::nelder_mead_2d(f, best, 0.05);
    SublatticeAnsatz ans;
    ans.a1 = std::max(refined[0], refined[1]);
    ans.a2 = std::min(refined[0], refined[1]);
    ans.energy_per_site = f(ans.a1, ans.a2);
    ans.striated = std::abs(ans.a1 - ans.a2) > 1e-4;
    return ans;
}

// --- quench spectroscopy model -------------------------------------------------

struct BlochVector {
    double sx = 0.0, sy = 0.0, sz = 0.0;
    double norm() const { return std::sqrt(sx * sx + sy * sy + sz * sz); }
};

// Single-particle quench H = omega (cos phi sx + sin phi sy)/2 + delta sz/2 for
// time tau; delta is the effective detuning from the interaction-shifted
// resonance. Jitter: Gaussian detuning fluctuations with standard deviation
// sigma_delta_frac * interaction_shift (thermal spread of the shifts) and
// Gaussian pulse-area fluctuations of relative width sigma_area_frac.
struct QuenchModel {
    double omega = 0.0;  // rad/s
    double delta = 0.0;  // rad/s
    double tau = 0.0;    // s
    double phi_q = 0.0;  // rad
    double interaction_shift = 0.0;  // rad/s; 0 for the bare-resonance sublattice
    double sigma_delta_frac = 0.15;
    double sigma_area_frac = 0.10;
    bool jitter = false;

    double delta_tilde() const { return delta / std::sqrt(delta * delta + omega * omega); }
    double omega_tilde() const { return omega / std::sqrt(delta * delta + omega * omega); }
    double alpha() const { return 0.5 * tau * std::sqrt(delta * delta + omega * omega); }
};

namespace detail {

inline double sigma_z_prime(double omega, double delta, double tau, double phi_q,
                            const BlochVector& s) {
    const double w = std::sqrt(delta * delta + omega * omega);
    if (w == 0.0 || tau == 0.0) return s.sz;
    const double dt = delta / w, ot = omega / w;
    const double al = 0.5 * tau * w;
    const double s2a = std::sin(2.0 * al), sa2 = std::sin(al) * std::sin(al);
    const double ca2 = std::cos(al) * std::cos(al);
    return ot * s2a * (-s.sx * std::sin(phi_q) + s.sy * std::cos(phi_q)) +
           2.0 * dt * ot * sa2 * (s.sx * std::cos(phi_q) + s.sy * std::sin(phi_q)) +
           (ca2 - (1.0 - 2.0 * dt * dt) * sa2) * s.sz;
}

// Gauss-Hermite nodes/weights for integrals against exp(-x^2), via the
// Golub-Welsch tridiagonal; deterministic and cached per order.
inline const std::pair<std::vector<double>, std::vector<double>>& gauss_hermite_16() {
    static const auto table = [] {
        const int n = 16;
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
        for (int i = 1; i < n; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(0.5 * i);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
        std::vector<double> x(n), w(n);
        const double sqrt_pi = std::sqrt(kPi);
        for (int i = 0; i < n; ++i) {
            x[i] = es.eigenvalues()[i];
            const double v = es.eigenvectors()(0, i);
            w[i] = sqrt_pi * v * v;
        }
        return std::make_pair(x, w);
    }();
    return table;
}

}  // namespace detail

// Heisenberg-evolved <sigma_z'> for a Bloch vector under the quench model;
// jitter averaging uses fixed 16-node Gauss-Hermite quadrature (per axis).
inline double quench_sigma_z(const QuenchModel& m, const BlochVector& s) {
    if (!m.jitter)
        return detail::sigma_z_prime(m.omega, m.delta, m.tau, m.phi_q, s);
    const auto& [xs, ws] = detail::gauss_hermite_16();
    const double sigma_delta = m.sigma_delta_frac * std::abs(m.interaction_shift);
    const double inv_sqrt_pi = 1.0 / std::sqrt(kPi);
    double acc = 0.0;
    for (std::size_t a = 0; a < xs.size(); ++a) {
        const double delta_a = m.delta + std::sqrt(2.0) * sigma_delta * xs[a];
        for (std::size_t b = 0; b < xs.size(); ++b) {
            const double area_scale = 1.0 + std::sqrt(2.0) * m.sigma_area_frac * xs[b];
            acc += ws[a] * ws[b] *
                   detail::sigma_z_prime(m.omega, delta_a, m.tau * area_scale, m.phi_q, s);
        }
    }
    return acc * inv_sqrt_pi * inv_sqrt_pi;
}

// --- Bloch-vector fit -----------------------------------------------------------

struct BlochFitResult {
    BlochVector bloch;
    std::array<double, 3> errs = {0.0, 0.0, 0.0};
    double residual_rms = 0.0;
    bool residual_flag = false;  // set when residual_rms > 0.15
};

// Least-squares fit of P(phi_q) = (1 + <sigma_z'>)/2 over the Bloch components
// (the model is linear in sx, sy, sz), with the norm constrained to <= 1.
inline BlochFitResult fit_bloch(const std::vector<double>& phi_values,
                                const std::vector<double>& p_values, QuenchModel model) {
    if (phi_values.size() != p_values.size())
        throw std::invalid_argument("fit_bloch: phi/p length mismatch");
    {
        std::vector<double> uniq = phi_values;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end(),
                               [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                   uniq.end());
        if (uniq.size() < 6)
            throw std::invalid_argument("fit_bloch: need >= 6 distinct phi_q points");
    }
    const std::size_t n = phi_values.size();
    Eigen::MatrixXd A(n, 3);
    Eigen::VectorXd y(n);
    for (std::size_t i = 0; i < n; ++i) {
        model.phi_q = phi_values[i];
        const BlochVector ex{1, 0, 0}, ey{0, 1, 0}, ez{0, 0, 1};
        A(i, 0) = quench_sigma_z(model, ex);
        A(i, 1) = quench_sigma_z(model, ey);
        A(i, 2) = quench_sigma_z(model, ez);
        y(i) = 2.0 * p_values[i] - 1.0;  // sigma_z = +1 <=> |r>
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.rank() < 3)
        throw AnalysisError("fit_bloch: underdetermined data (model matrix rank < 3)");
    Eigen::Vector3d sol = svd.solve(y);
    if (sol.norm() > 1.0) {
        // constrained solution on the unit sphere via the secular equation in
        // the SVD basis: s_i = u_i d_i / (d_i^2 + lambda)
        const Eigen::Vector3d d = svd.singularValues();
        const Eigen::Vector3d u = svd.matrixU().transpose() * y;
        double lo = 0.0, hi = d[0] * u.norm() + 1.0;
        for (int it = 0; it < 200; ++it) {
            const double lam = 0.5 * (lo + hi);
            double norm2 = 0.0;
            for (int i = 0; i < 3; ++i) {
                const double si = u[i] * d[i] / (d[i] * d[i] + lam);
                norm2 += si * si;
            }
            (norm2 > 1.0 ? lo : hi) = lam;
        }
        const double lam = 0.5 * (lo + hi);
        Eigen::Vector3d sv;
        for (int i = 0; i < 3; ++i) sv[i] = u[i] * d[i] / (d[i] * d[i] + lam);
        sol = svd.matrixV() * sv;
    }
    BlochFitResult res;
    res.bloch = {sol[0], sol[1], sol[2]};
    const Eigen::VectorXd r = y - A * sol;
    res.residual_rms = std::sqrt(r.squaredNorm() / n);
    res.residual_flag = res.residual_rms > 0.15;
    // parameter errors from the unconstrained covariance s^2 (A^T A)^-1
    const double s2 = (n > 3) ? r.squaredNorm() / (n - 3) : 0.0;
    const Eigen::Matrix3d cov = s2 * (A.transpose() * A).inverse();
    for (int i = 0; i < 3; ++i) res.errs[i] = std::sqrt(std::max(0.0, cov(i, i)));
    return res;
}

inline nlohmann::json bloch_fit_to_json(const BlochFitResult& r) {
    return nlohmann::json{{"sx", r.bloch.sx},       {"sy", r.bloch.sy},
                          {"sz", r.bloch.sz},       {"errs", r.errs},
                          {"residual", r.residual_rms}, {"residual_flag", r.residual_flag}};
}

}  // namespace rydsim
