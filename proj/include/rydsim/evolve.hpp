#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "rydsim/errors.hpp"
#include "rydsim/hamiltonian.hpp"
#include "rydsim/hilbert.hpp"
#include "rydsim/rng.hpp"

namespace rydsim {

enum class EvolveMethod { krylov_expm, rk4 };

struct EvolveOptions {
    double substep_dt = 0.0;  // s; 0 = duration/2000
    int krylov_dim = 16;
    double norm_tol = 1e-9;
    EvolveMethod method = EvolveMethod::krylov_expm;

    void validate(double duration) const {
        if (substep_dt < 0.0) throw std::invalid_argument("EvolveOptions: negative substep_dt");
        if (krylov_dim < 2) throw std::invalid_argument("EvolveOptions: krylov_dim must be >= 2");
        (void)duration;
    }
    double effective_dt(double duration) const {
        return substep_dt > 0.0 ? substep_dt : duration / 2000.0;
    }
};

struct EvolveResult {
    StateVector state;
    double norm_drift = 0.0;  // |1 - ||psi|| | accumulated before final renormalization
    std::size_t n_substeps = 0;
};

namespace detail {

// One step of psi <- exp(-i dt H) psi via a Lanczos subspace of dimension <= m,
// with full re-orthogonalization. Hermitian H only.
inline void krylov_expm_step(const HamiltonianOperator& op, const DriveParams& p, double dt,
                             int m, Eigen::VectorXcd& psi) {
    const double beta0 = psi.norm();
    if (beta0 == 0.0) return;
    const Eigen::Index n = psi.size();
    m = static_cast<int>(std::min<Eigen::Index>(m, n));
    Eigen::MatrixXcd V(n, m);
    Eigen::VectorXd alpha(m), beta(m);  // beta[j] links v_j and v_{j+1}
    V.col(0) = psi / beta0;
    Eigen::VectorXcd w(n);
    int k = m;
    for (int j = 0; j < m; ++j) {
        op.apply(p, V.col(j), w);
        alpha[j] = w.dot(V.col(j)).real();  // Eigen dot conjugates the lhs... see below
        // (V.col(j).adjoint()*w) is the Rayleigh coefficient; both orders give
        // the same real part for Hermitian H.
        w -= alpha[j] * V.col(j);
        if (j > 0) w -= beta[j - 1] * V.col(j - 1);
        // full re-orthogonalization pass
        for (int i = 0; i <= j; ++i) w -= (V.col(i).dot(w)) * V.col(i);
        const double b = w.norm();
        if (j + 1 == m || b < 1e-14 * std::max(1.0, std::abs(alpha[j]))) {
            k = j + 1;
            break;
        }
        beta[j] = b;
        V.col(j + 1) = w / b;
    }
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(k, k);
    for (int j = 0; j < k; ++j) {
        T(j, j) = alpha[j];
        if (j + 1 < k) T(j, j + 1) = T(j + 1, j) = beta[j];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
    Eigen::VectorXcd phase(k);
    for (int j = 0; j < k; ++j)
        phase[j] = std::polar(1.0, -dt * es.eigenvalues()[j]);
    const Eigen::VectorXd e1 = es.eigenvectors().row(0).transpose();
    Eigen::VectorXcd small = es.eigenvectors() * (phase.array() * e1.array().cast<Complex>()).matrix();
    psi = beta0 * (V.leftCols(k) * small);
}

inline void rk4_step(const HamiltonianOperator& op, const DriveParams& p, double dt,
                     Eigen::VectorXcd& psi) {
    const Complex mi(0.0, -1.0);
    Eigen::VectorXcd k1, k2, k3, k4, tmp;
    op.apply(p, psi, k1);
    k1 *= mi;
    tmp = psi + 0.5 * dt * k1;
    op.apply(p, tmp, k2);
    k2 *= mi;
    tmp = psi + 0.5 * dt * k2;
    op.apply(p, tmp, k3);
    k3 *= mi;
    tmp = psi + dt * k3;
    op.apply(p, tmp, k4);
    k4 *= mi;
    psi += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

// Piecewise-constant propagation: H is frozen at each substep midpoint and the
// substep applied unitarily. Deterministic for fixed options.
inline EvolveResult evolve(const StateVector& state, const HamiltonianOperator& op,
                           const DriveSchedule& schedule, const EvolveOptions& options = {}) {
    if (state.basis.get() != op.basis_ptr().get())
        throw BasisMismatchError("evolve: state and operator bases differ");
    if (std::abs(state.norm() - 1.0) > 1e-9)
        throw std::invalid_argument("evolve: input state is not normalized");
    const double T = schedule.total_duration();
    options.validate(T);
    EvolveResult res;
    res.state.basis = state.basis;
    res.state.amplitudes = state.amplitudes;
    if (T == 0.0) return res;
    const double dt = options.effective_dt(T);
    const std::size_t n_steps = static_cast<std::size_t>(std::ceil(T / dt - 1e-12));
    double drift = 0.0;
    for (std::size_t s = 0; s < n_steps; ++s) {
        const double t0 = s * dt;
        const double t1 = std::min(T, t0 + dt);
        const DriveParams p = schedule_eval(schedule, 0.5 * (t0 + t1));
        if (options.method == EvolveMethod::krylov_expm)
            detail::krylov_expm_step(op, p, t1 - t0, options.krylov_dim, res.state.amplitudes);
        else
            detail::rk4_step(op, p, t1 - t0, res.state.amplitudes);
        drift = std::max(drift, std::abs(res.state.norm() - 1.0));
        if (drift > 1e-6)
            throw IntegrationError(
                "evolve: norm drift " + std::to_string(drift) +
                " exceeds 1e-6; reduce substep_dt (current " + std::to_string(t1 - t0) + " s)");
    }
    res.norm_drift = drift;
    res.n_substeps = n_steps;
    res.state.normalize();
    return res;
}

// <psi|H(params)|psi> (real for Hermitian H).
inline double expectation_energy(const HamiltonianOperator& op, const DriveParams& p,
                                 const StateVector& state) {
    Eigen::VectorXcd w;
    op.apply(p, state.amplitudes, w);
    return state.amplitudes.dot(w).real();
}

struct GroundStateResult {
    double energy = 0.0;
    StateVector state;
    double residual = 0.0;     // ||H psi - E psi||
    int degeneracy_dim = 1;    // Ritz values within 1e-10 of the minimum
    int iterations = 0;
};

inline constexpr std::size_t kGroundStateConfigCap = std::size_t{1} << 18;

// Lowest eigenpair by restarted Lanczos with full re-orthogonalization and a
// seeded start vector. Degenerate ground spaces (gap < 1e-10) are flagged and
// the seeded iterate is returned.
inline GroundStateResult ground_state(const HamiltonianOperator& op, const DriveParams& p,
                                      int block_dim = 48, int max_restarts = 400,
                                      std::uint64_t seed = 0x52594453u) {
    const std::size_t n = op.basis().size();
    if (n > kGroundStateConfigCap)
        throw SizeCapError("ground_state: basis size " + std::to_string(n) +
                           " exceeds cap of " + std::to_string(kGroundStateConfigCap) +
                           " configurations");
    const Eigen::Index ni = static_cast<Eigen::Index>(n);
    const int m = static_cast<int>(std::min<std::size_t>(block_dim, n));
    std::mt19937_64 gen(seed);
    Eigen::VectorXcd v(ni);
    for (Eigen::Index i = 0; i < ni; ++i)
        v[i] = Complex(2.0 * uniform_unit(gen) - 1.0, 2.0 * uniform_unit(gen) - 1.0);
    v /= v.norm();

    const double scale = std::max(1.0, op.norm_bound(p));
    Eigen::MatrixXcd V(ni, m);
    Eigen::VectorXcd w(ni);
    double energy = 0.0, residual = 0.0;
    int degeneracy = 1;
    int restart = 0;
    for (; restart < max_restarts; ++restart) {
        Eigen::VectorXd alpha(m), beta(m);
        V.col(0) = v;
        int k = m;
        for (int j = 0; j < m; ++j) {
            op.apply(p, V.col(j), w);
            alpha[j] = V.col(j).dot(w).real();
            w -= alpha[j] * V.col(j);
            if (j > 0) w -= beta[j - 1] * V.col(j - 1);
            for (int i = 0; i <= j; ++i) w -= (V.col(i).dot(w)) * V.col(i);
            const double b = w.norm();
            if (j + 1 == m || b < 1e-13 * scale) {
                k = j + 1;
                break;
            }
            beta[j] = b;
            V.col(j + 1) = w / b;
        }
        Eigen::MatrixXd T = Eigen::MatrixXd::Zero(k, k);
        for (int j = 0; j < k; ++j) {
            T(j, j) = alpha[j];
            if (j + 1 < k) T(j, j + 1) = T(j + 1, j) = beta[j];
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
        energy = es.eigenvalues()[0];
        degeneracy = 1;
        for (int j = 1; j < k; ++j)
            if (es.eigenvalues()[j] - energy < 1e-10 * scale) ++degeneracy;
        v = V.leftCols(k) * es.eigenvectors().col(0).cast<Complex>();
        v /= v.norm();
        op.apply(p, v, w);
        residual = (w - energy * v).norm();
        if (residual < 1e-8 * std::max(1.0, std::abs(energy))) break;
    }
    if (residual >= 1e-8 * std::max(1.0, std::abs(energy)))
        throw ConvergenceError("ground_state: no convergence after " +
                               std::to_string(max_restarts) + " restarts (residual " +
                               std::to_string(residual) + ")");
    GroundStateResult res;
    res.energy = energy;
    res.state.basis = op.basis_ptr();
    res.state.amplitudes = std::move(v);
    res.residual = residual;
    res.degeneracy_dim = degeneracy;
    res.iterations = restart + 1;
    return res;
}

// <n_i> per site from Born probabilities.
inline std::vector<double> site_densities(const StateVector& state) {
    const Basis& b = *state.basis;
    const int n = b.n_sites();
    std::vector<double> dens(n, 0.0);
    for (std::size_t k = 0; k < b.size(); ++k) {
        const double pk = std::norm(state.amplitudes[static_cast<Eigen::Index>(k)]);
        if (pk == 0.0) continue;
        Config c = b.at(k);
        while (c) {
            const int i = std::countr_zero(c);
            dens[i] += pk;
            c &= c - 1;
        }
    }
    return dens;
}

inline double mean_density(const StateVector& state) {
    const auto d = site_densities(state);
    double acc = 0.0;
    for (double x : d) acc += x;
    return acc / static_cast<double>(d.size());
}

}  // namespace rydsim
