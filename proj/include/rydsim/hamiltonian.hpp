#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "rydsim/errors.hpp"
#include "rydsim/hilbert.hpp"
#include "rydsim/lattice.hpp"
#include "rydsim/units.hpp"

namespace rydsim {

// Instantaneous drive (omega, delta, phi); phi wrapped into (-pi, pi].
struct DriveParams {
    double omega = 0.0;  // rad/s, >= 0
    double delta = 0.0;  // rad/s
    double phi = 0.0;    // rad

    DriveParams() = default;
    DriveParams(double w, double d, double p) : omega(w), delta(d), phi(wrap_phase(p)) {
        if (!std::isfinite(w) || !std::isfinite(d) || !std::isfinite(p))
            throw std::invalid_argument("DriveParams: non-finite value");
        if (w < 0.0) throw std::invalid_argument("DriveParams: omega must be >= 0");
    }

    static double wrap_phase(double p) {
        double r = std::remainder(p, kTwoPi);
        return r;  // (-pi, pi]
    }
};

// --- drive schedules --------------------------------------------------------

// Constant-rate detuning sweep at fixed omega; omega ramps linearly to zero
// over end_ramp_s after the endpoint is reached (0 = abrupt turn-off).
struct LinearSweep {
    double delta_start = 0.0;  // rad/s
    double delta_end = 0.0;    // rad/s
    double rate = 0.0;         // rad/s^2, sign matching (delta_end - delta_start)
    double omega = 0.0;        // rad/s
    double end_ramp_s = 0.0;

    double sweep_duration() const { return (delta_end - delta_start) / rate; }
    double total_duration() const { return sweep_duration() + end_ramp_s; }

    void validate() const {
        if (!(rate != 0.0) || !(sweep_duration() > 0.0))
            throw std::invalid_argument("LinearSweep: (delta_end - delta_start)/rate must be > 0");
        if (end_ramp_s < 0.0) throw std::invalid_argument("LinearSweep: negative end ramp");
    }
};

// Natural cubic spline through five (t, delta) control points, with linear
// omega on/off ramps at the fixed-detuning ends.
struct SplineSweep {
    std::vector<std::array<double, 2>> points;  // five (t [s], delta [rad/s]), t increasing
    double omega = 0.0;
    double omega_ramp_s = 0.0;
    std::vector<double> second_derivs;  // filled by prepare()

    double spline_duration() const { return points.back()[0] - points.front()[0]; }
    double total_duration() const { return spline_duration() + 2.0 * omega_ramp_s; }

    void validate() const {
        if (points.size() != 5)
            throw std::invalid_argument("SplineSweep: exactly five control points required");
        for (std::size_t k = 1; k < points.size(); ++k)
            if (!(points[k][0] > points[k - 1][0]))
                throw std::invalid_argument("SplineSweep: control times must strictly increase");
        if (omega_ramp_s < 0.0) throw std::invalid_argument("SplineSweep: negative omega ramp");
    }

    void prepare();  // defined after the spline helpers below
};

// Constant (omega_q, delta_q, phi_q) pulse of length t_q.
struct Quench {
    double omega_q = 0.0;
    double delta_q = 0.0;
    double phi_q = 0.0;
    double t_q = 0.0;

    double total_duration() const { return t_q; }

    void validate() const {
        if (!(t_q >= 0.0)) throw std::invalid_argument("Quench: t_q must be >= 0");
        if (omega_q < 0.0) throw std::invalid_argument("Quench: omega_q must be >= 0");
        if (omega_q > 0.0 && t_q >= 1.0 / omega_q)
            std::cerr << "rydsim: warning: quench time t_q = " << t_q
                      << " s is not short against 1/omega_q = " << 1.0 / omega_q << " s\n";
    }
};

struct DriveSchedule {
    std::variant<LinearSweep, SplineSweep, Quench> variant;

    DriveSchedule(LinearSweep s) : variant(s) { std::get<LinearSweep>(variant).validate(); }
    DriveSchedule(SplineSweep s) : variant(std::move(s)) {
        std::get<SplineSweep>(variant).prepare();
    }
    DriveSchedule(Quench s) : variant(s) { std::get<Quench>(variant).validate(); }

    double total_duration() const {
        return std::visit([](const auto& s) { return s.total_duration(); }, variant);
    }
};

namespace detail {

// Natural cubic spline second derivatives (zero curvature at the ends).
inline std::vector<double> spline_second_derivatives(
    const std::vector<std::array<double, 2>>& pts) {
    const int n = static_cast<int>(pts.size());
    std::vector<double> m(n, 0.0), diag(n, 0.0), rhs(n, 0.0), upper(n, 0.0);
    diag[0] = diag[n - 1] = 1.0;
    for (int i = 1; i < n - 1; ++i) {
        const double h0 = pts[i][0] - pts[i - 1][0];
        const double h1 = pts[i + 1][0] - pts[i][0];
        diag[i] = 2.0 * (h0 + h1);
        upper[i] = h1;
        rhs[i] = 6.0 * ((pts[i + 1][1] - pts[i][1]) / h1 - (pts[i][1] - pts[i - 1][1]) / h0);
    }
    // Thomas solve; lower(i) = h0 except at the natural-end rows where it is 0.
    std::vector<double> c(n, 0.0);
    c[0] = 0.0;
    for (int i = 1; i < n - 1; ++i) {
        const double h0 = pts[i][0] - pts[i - 1][0];
        const double w = (i == 1) ? 0.0 : h0;  // row 0 has upper coefficient 0
        const double denom = diag[i] - w * c[i - 1];
        c[i] = upper[i] / denom;
        rhs[i] = (rhs[i] - w * rhs[i - 1]) / denom;
        diag[i] = denom;
    }
    for (int i = n - 2; i >= 1; --i) rhs[i] -= c[i] * rhs[i + 1];
    for (int i = 1; i < n - 1; ++i) m[i] = rhs[i];
    return m;
}

inline double spline_eval(const std::vector<std::array<double, 2>>& pts,
                          const std::vector<double>& m, double t) {
    int i = static_cast<int>(pts.size()) - 2;
    while (i > 0 && t < pts[i][0]) --i;
    const double h = pts[i + 1][0] - pts[i][0];
    const double ta = (pts[i + 1][0] - t) / h;
    const double tb = (t - pts[i][0]) / h;
    return ta * pts[i][1] + tb * pts[i + 1][1] +
           ((ta * ta * ta - ta) * m[i] + (tb * tb * tb - tb) * m[i + 1]) * (h * h) / 6.0;
}

}  // namespace detail

inline void SplineSweep::prepare() {
    validate();
    second_derivs = detail::spline_second_derivatives(points);
}

inline DriveParams schedule_eval(const DriveSchedule& sched, double t) {
    const double T = sched.total_duration();
    if (t < -1e-15 || t > T * (1.0 + 1e-12) + 1e-15)
        throw std::out_of_range("schedule_eval: t outside [0, duration]");
    t = std::clamp(t, 0.0, T);
    if (const auto* lin = std::get_if<LinearSweep>(&sched.variant)) {
        const double ts = lin->sweep_duration();
        if (t <= ts) return {lin->omega, lin->delta_start + lin->rate * t, 0.0};
        const double frac = (lin->end_ramp_s > 0.0) ? 1.0 - (t - ts) / lin->end_ramp_s : 0.0;
        return {lin->omega * std::max(0.0, frac), lin->delta_end, 0.0};
    }
    if (const auto* sp = std::get_if<SplineSweep>(&sched.variant)) {
        const double r = sp->omega_ramp_s;
        const double t0 = sp->points.front()[0];
        if (t <= r)
            return {r > 0.0 ? sp->omega * (t / r) : sp->omega, sp->points.front()[1], 0.0};
        if (t >= r + sp->spline_duration()) {
            const double frac = r > 0.0 ? 1.0 - (t - r - sp->spline_duration()) / r : 0.0;
            return {sp->omega * std::max(0.0, frac), sp->points.back()[1], 0.0};
        }
        if (!sp->second_derivs.empty())
            return {sp->omega, detail::spline_eval(sp->points, sp->second_derivs, t - r + t0),
                    0.0};
        const auto m = detail::spline_second_derivatives(sp->points);
        return {sp->omega, detail::spline_eval(sp->points, m, t - r + t0), 0.0};
    }
    const auto& q = std::get<Quench>(sched.variant);
    return {q.omega_q, q.delta_q, q.phi_q};
}

// --- schedule JSON ----------------------------------------------------------
// Units in files are experiment-facing: frequencies as 2pi x MHz, times in us,
// sweep rates in MHz/us.

inline void to_json(nlohmann::json& j, const DriveSchedule& s) {
    j["units"] = {{"freq", "MHz"}, {"time", "us"}, {"rate", "MHz/us"}};
    if (const auto* lin = std::get_if<LinearSweep>(&s.variant)) {
        j["type"] = "linear";
        j["delta_start"] = to_mhz(lin->delta_start);
        j["delta_end"] = to_mhz(lin->delta_end);
        j["rate"] = to_mhz_per_us(lin->rate);
        j["omega"] = to_mhz(lin->omega);
        j["end_ramp"] = to_microseconds(lin->end_ramp_s);
    } else if (const auto* sp = std::get_if<SplineSweep>(&s.variant)) {
        j["type"] = "spline";
        auto& pts = j["points"] = nlohmann::json::array();
        for (const auto& p : sp->points) pts.push_back({to_microseconds(p[0]), to_mhz(p[1])});
        j["omega"] = to_mhz(sp->omega);
        j["omega_ramp"] = to_microseconds(sp->omega_ramp_s);
    } else {
        const auto& q = std::get<Quench>(s.variant);
        j["type"] = "quench";
        j["omega_q"] = to_mhz(q.omega_q);
        j["delta_q"] = to_mhz(q.delta_q);
        j["phi_q"] = q.phi_q;
        j["t_q"] = to_microseconds(q.t_q);
    }
}

inline DriveSchedule schedule_from_json(const nlohmann::json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "linear") {
        LinearSweep s;
        s.delta_start = mhz(j.at("delta_start").get<double>());
        s.delta_end = mhz(j.at("delta_end").get<double>());
        s.rate = mhz_per_us(j.at("rate").get<double>());
        s.omega = mhz(j.at("omega").get<double>());
        s.end_ramp_s = microseconds(j.value("end_ramp", 0.0));
        return DriveSchedule(s);
    }
    if (type == "spline") {
        SplineSweep s;
        for (const auto& p : j.at("points"))
            s.points.push_back({microseconds(p.at(0).get<double>()), mhz(p.at(1).get<double>())});
        s.omega = mhz(j.at("omega").get<double>());
        s.omega_ramp_s = microseconds(j.value("omega_ramp", 0.0));
        return DriveSchedule(std::move(s));
    }
    if (type == "quench") {
        Quench q;
        q.omega_q = mhz(j.at("omega_q").get<double>());
        q.delta_q = mhz(j.at("delta_q").get<double>());
        q.phi_q = j.value("phi_q", 0.0);
        q.t_q = microseconds(j.at("t_q").get<double>());
        return DriveSchedule(q);
    }
    throw ConfigError("schedule: unknown type '" + type + "'");
}

// --- Hamiltonian operator ---------------------------------------------------
//
//   H = (omega/2) sum_i (e^{i phi}|g_i><r_i| + e^{-i phi}|r_i><g_i|)
//       - delta sum_i n_i + sum_{i<j} V_ij n_i n_j
//
// Diagonals are precomputed per config. The coupling acts by single-bit
// flips; below kCachedCouplingLimit configs the flip targets are cached,
// above it they are resolved by binary search on the fly.
class HamiltonianOperator {
  public:
    static constexpr std::size_t kCachedCouplingLimit = std::size_t{1} << 16;

    HamiltonianOperator(std::shared_ptr<const Basis> basis, const InteractionMatrix& vm)
        : basis_(std::move(basis)) {
        if (vm.n_sites != basis_->n_sites())
            throw BasisMismatchError("build_operator: interaction matrix is for " +
                                     std::to_string(vm.n_sites) + " sites, basis has " +
                                     std::to_string(basis_->n_sites()));
        const std::size_t m = basis_->size();
        diag_interaction_.resize(m);
        popcount_.resize(m);
        for (std::size_t k = 0; k < m; ++k) {
            const Config c = basis_->at(k);
            popcount_[k] = std::popcount(c);
            double acc = 0.0;
            for (const auto& term : vm.pair_terms)
                if (((c >> term.i) & 1u) && ((c >> term.j) & 1u)) acc += term.v;
            diag_interaction_[k] = acc;
        }
        if (m <= kCachedCouplingLimit) {
            const int n = basis_->n_sites();
            flip_index_.assign(m * static_cast<std::size_t>(n), -1);
            for (std::size_t k = 0; k < m; ++k) {
                const Config c = basis_->at(k);
                for (int i = 0; i < n; ++i) {
                    auto idx = basis_->lookup(c ^ (Config{1} << i));
                    if (idx) flip_index_[k * n + i] = static_cast<std::int64_t>(*idx);
                }
            }
        }
    }

    const Basis& basis() const { return *basis_; }
    std::shared_ptr<const Basis> basis_ptr() const { return basis_; }
    double diagonal(std::size_t k, const DriveParams& p) const {
        return -p.delta * popcount_[k] + diag_interaction_[k];
    }
    double interaction_diagonal(std::size_t k) const { return diag_interaction_[k]; }

    // out = H(params) in  (unnormalized image); out is overwritten.
    void apply(const DriveParams& p, const Eigen::VectorXcd& in, Eigen::VectorXcd& out) const {
        const std::size_t m = basis_->size();
        if (static_cast<std::size_t>(in.size()) != m)
            throw BasisMismatchError("apply: state dimension does not match basis");
        out.resize(static_cast<Eigen::Index>(m));
        const int n = basis_->n_sites();
        const double half_omega = 0.5 * p.omega;
        // <c'|H|c> = (omega/2) e^{-i phi} when c' = c with one extra bit set,
        // (omega/2) e^{+i phi} when one bit cleared.
        const Complex lower = half_omega * std::polar(1.0, p.phi);      // bit cleared in target
        const Complex raise = half_omega * std::polar(1.0, -p.phi);     // bit set in target
        for (std::size_t k = 0; k < m; ++k)
            out[static_cast<Eigen::Index>(k)] =
                (-p.delta * popcount_[k] + diag_interaction_[k]) * in[static_cast<Eigen::Index>(k)];
        if (half_omega == 0.0) return;
        if (!flip_index_.empty()) {
            for (std::size_t k = 0; k < m; ++k) {
                const Config c = basis_->at(k);
                Complex acc = 0.0;
                const std::int64_t* row = flip_index_.data() + k * n;
                for (int i = 0; i < n; ++i) {
                    const std::int64_t t = row[i];
                    if (t < 0) continue;
                    // target k flips bit i of source config row[i]; from k's view,
                    // bit i set in k means the source had it cleared (raising into k).
                    acc += (((c >> i) & 1u) ? raise : lower) *
                           in[static_cast<Eigen::Index>(t)];
                }
                out[static_cast<Eigen::Index>(k)] += acc;
            }
        } else {
            for (std::size_t k = 0; k < m; ++k) {
                const Config c = basis_->at(k);
                Complex acc = 0.0;
                for (int i = 0; i < n; ++i) {
                    auto idx = basis_->lookup(c ^ (Config{1} << i));
                    if (!idx) continue;
                    acc += (((c >> i) & 1u) ? raise : lower) *
                           in[static_cast<Eigen::Index>(*idx)];
                }
                out[static_cast<Eigen::Index>(k)] += acc;
            }
        }
    }

    StateVector apply(const DriveParams& p, const StateVector& state) const {
        if (state.basis.get() != basis_.get())
            throw BasisMismatchError("apply: state built over a different basis");
        StateVector out;
        out.basis = basis_;
        apply(p, state.amplitudes, out.amplitudes);
        return out;
    }

    // Upper bound on the spectral norm at the given drive (diagonal range plus
    // Gershgorin coupling term); used for drift tolerances.
    double norm_bound(const DriveParams& p) const {
        double d = 0.0;
        for (std::size_t k = 0; k < basis_->size(); ++k)
            d = std::max(d, std::abs(diagonal(k, p)));
        return d + 0.5 * p.omega * basis_->n_sites();
    }

  private:
    std::shared_ptr<const Basis> basis_;
    std::vector<double> diag_interaction_;
    std::vector<int> popcount_;
    std::vector<std::int64_t> flip_index_;  // m x n_sites, -1 = not in basis
};

inline HamiltonianOperator build_operator(std::shared_ptr<const Basis> basis,
                                          const InteractionMatrix& vm) {
    return HamiltonianOperator(std::move(basis), vm);
}

}  // namespace rydsim
