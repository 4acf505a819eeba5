#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "rydsim/analysis.hpp"
#include "rydsim/errors.hpp"
#include "rydsim/evolve.hpp"
#include "rydsim/hamiltonian.hpp"
#include "rydsim/hilbert.hpp"
#include "rydsim/io.hpp"
#include "rydsim/lattice.hpp"
#include "rydsim/meanfield.hpp"
#include "rydsim/measure.hpp"
#include "rydsim/parallel.hpp"
#include "rydsim/rearrange.hpp"
#include "rydsim/rng.hpp"
#include "rydsim/units.hpp"

namespace rydsim::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// --- config plumbing ---------------------------------------------------------

inline void reject_unknown_keys(const json& j, const std::string& path,
                                const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config: " + path + " must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + path + "." + key + "'");
}

inline json load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    try {
        return json::parse(f, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
}

template <typename T>
T require(const json& j, const std::string& path, const std::string& key) {
    if (!j.contains(key)) throw ConfigError("config: missing key '" + path + "." + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value at '" + path + "." + key + "': " + e.what());
    }
}

struct AxisSpec {
    double lo = 0.0, hi = 0.0;
    int n = 0;
    double at(int i) const { return n == 1 ? lo : lo + (hi - lo) * i / (n - 1.0); }
};

inline AxisSpec parse_axis(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3)
        throw ConfigError("config: " + path + " must be [lo, hi, n]");
    AxisSpec a{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<int>()};
    if (a.n < 1) throw ConfigError("config: " + path + ": n must be >= 1");
    return a;
}

// --- shared sections ----------------------------------------------------------

inline Lattice parse_lattice(const json& j) {
    reject_unknown_keys(j, "lattice", {"kind", "nx", "ny", "spacing_um"});
    return build_lattice(lattice_kind_from_string(require<std::string>(j, "lattice", "kind")),
                         require<int>(j, "lattice", "nx"), require<int>(j, "lattice", "ny"),
                         j.value("spacing_um", 1.0));
}

// v0 either explicit or from R_b/a at the drive omega; truncation in units of a.
inline InteractionMatrix parse_interaction(const json& j, const Lattice& lat, double omega) {
    reject_unknown_keys(j, "interaction", {"rb_over_a", "v0_mhz_um6", "truncation_a"});
    double v0 = 0.0;
    if (j.contains("v0_mhz_um6")) {
        v0 = mhz(j.at("v0_mhz_um6").get<double>());
    } else {
        const double rb = require<double>(j, "interaction", "rb_over_a");
        if (!(omega > 0.0))
            throw ConfigError("config: interaction.rb_over_a needs a schedule with omega > 0");
        v0 = v0_from_blockade_ratio(rb, omega, lat.spacing_um);
    }
    const double trunc = j.value("truncation_a", 2.0);
    return interaction_matrix(lat, v0, trunc * lat.spacing_um);
}

inline std::shared_ptr<const Basis> parse_basis(const json& j, const Lattice& lat) {
    reject_unknown_keys(j, "basis", {"constraint"});
    const std::string c = j.value("constraint", "full");
    if (c == "full") return enumerate_basis(BasisConfig::full(lat.n_sites()));
    if (c == "nn_blockade") return enumerate_basis(BasisConfig::blockaded(lat));
    throw ConfigError("config: basis.constraint must be 'full' or 'nn_blockade'");
}

inline DriveSchedule parse_schedule(const json& j) {
    reject_unknown_keys(j, "schedule",
                        {"type", "delta_start", "delta_end", "rate", "omega", "end_ramp",
                         "points", "omega_ramp", "omega_q", "delta_q", "phi_q", "t_q", "units"});
    try {
        return schedule_from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: schedule: ") + e.what());
    }
}

inline double schedule_omega(const DriveSchedule& s) {
    if (const auto* lin = std::get_if<LinearSweep>(&s.variant)) return lin->omega;
    if (const auto* sp = std::get_if<SplineSweep>(&s.variant)) return sp->omega;
    return std::get<Quench>(s.variant).omega_q;
}

inline EvolveOptions parse_evolve(const json& j, double duration) {
    reject_unknown_keys(j, "evolve", {"substeps", "method", "krylov_dim"});
    EvolveOptions opt;
    const int substeps = j.value("substeps", 2000);
    if (substeps < 1) throw ConfigError("config: evolve.substeps must be >= 1");
    opt.substep_dt = duration / substeps;
    opt.krylov_dim = j.value("krylov_dim", 16);
    const std::string m = j.value("method", "krylov_expm");
    if (m == "krylov_expm")
        opt.method = EvolveMethod::krylov_expm;
    else if (m == "rk4")
        opt.method = EvolveMethod::rk4;
    else
        throw ConfigError("config: evolve.method must be 'krylov_expm' or 'rk4'");
    return opt;
}

inline std::optional<DetectionModel> parse_noise(const json& cfg) {
    if (!cfg.contains("noise")) return std::nullopt;
    const json& j = cfg.at("noise");
    reject_unknown_keys(j, "noise", {"preset", "p_g_loss", "p_r_recapture"});
    if (j.contains("preset")) {
        const std::string p = j.at("preset").get<std::string>();
        if (p == "mw_enhanced") return DetectionModel::mw_enhanced();
        if (p == "no_mw") return DetectionModel::no_mw();
        if (p == "ideal") return DetectionModel::ideal();
        throw ConfigError("config: noise.preset must be mw_enhanced|no_mw|ideal");
    }
    DetectionModel m{j.value("p_g_loss", 0.01), j.value("p_r_recapture", 0.009)};
    m.validate();
    return m;
}

struct ShotSpec {
    std::size_t n = 0;
    std::uint64_t seed = 1;
};

inline ShotSpec parse_shots(const json& j) {
    reject_unknown_keys(j, "shots", {"n", "seed"});
    ShotSpec s;
    s.n = require<std::uint64_t>(j, "shots", "n");
    s.seed = j.value("seed", std::uint64_t{1});
    if (s.n < 1) throw ConfigError("config: shots.n must be >= 1");
    return s;
}

struct RunContext {
    fs::path out_dir;
    std::string hash;
    unsigned workers = 1;
};

inline RunContext make_context(const json& config, const std::string& out_dir,
                               std::optional<std::uint64_t> seed_override, unsigned workers) {
    RunContext ctx;
    ctx.out_dir = out_dir;
    fs::create_directories(ctx.out_dir);
    std::uint64_t seed = 0;
    if (seed_override)
        seed = *seed_override;
    else if (config.contains("shots") && config.at("shots").contains("seed"))
        seed = config.at("shots").at("seed").get<std::uint64_t>();
    else if (config.contains("load") && config.at("load").contains("seed0"))
        seed = config.at("load").at("seed0").get<std::uint64_t>();
    ctx.hash = config_hash(config, seed);
    ctx.workers = workers;
    return ctx;
}

inline void write_correlation_csv(const fs::path& path, const CorrelationMap& map,
                                  const std::string& hash) {
    auto f = open_csv(path, provenance_comment(hash), "k,l,value,count");
    for (int k = -map.K; k <= map.K; ++k)
        for (int l = -map.L; l <= map.L; ++l)
            f << k << "," << l << "," << fmt_double(map.at(k, l)) << ","
              << static_cast<long long>(map.count_at(k, l)) << "\n";
}

// --- sweep ---------------------------------------------------------------------

inline void run_sweep(const json& config, const RunContext& ctx,
                      std::optional<std::uint64_t> seed_override) {
    reject_unknown_keys(config, "", {"lattice", "interaction", "basis", "schedule", "evolve",
                                     "shots", "noise", "output", "workers"});
    const Lattice lat = parse_lattice(config.at("lattice"));
    const DriveSchedule sched = parse_schedule(config.at("schedule"));
    const auto vm = parse_interaction(config.at("interaction"), lat, schedule_omega(sched));
    auto basis = parse_basis(config.value("basis", json::object()), lat);
    const auto opts = parse_evolve(config.value("evolve", json::object()),
                                   sched.total_duration());
    ShotSpec shots_spec = parse_shots(config.at("shots"));
    if (seed_override) shots_spec.seed = *seed_override;

    const auto op = build_operator(basis, vm);
    auto psi0 = StateVector::basis_state(basis, 0);  // all atoms in |g>
    const auto evolved = evolve(psi0, op, sched, opts);

    ShotSet shots = sample(evolved.state, shots_spec.n, shots_spec.seed);
    if (lat.has_grid()) {
        shots.nx = lat.nx;
        shots.ny = lat.ny;
    }
    shots.meta.schedule_hash = ctx.hash;
    if (const auto noise = parse_noise(config))
        shots = apply_detection_noise(shots, *noise, derive_seed(shots_spec.seed, 1));

    write_shot_csv(ctx.out_dir / "shots.csv", shots, provenance_comment(ctx.hash));
    write_shot_sidecar(ctx.out_dir / "shots.meta.json", shots,
                       {{"config_hash", ctx.hash}, {"version", kVersion},
                        {"norm_drift", evolved.norm_drift}});

    if (lat.has_grid()) {
        const auto g2 = g2_density(shots);
        write_correlation_csv(ctx.out_dir / "g2_map.csv", g2, ctx.hash);
        const auto g2m = g2_m(shots);
        write_correlation_csv(ctx.out_dir / "g2m_map.csv", g2m, ctx.hash);

        json fits;
        auto record = [&](const char* name, const CorrelationMap& map, FitDirection dir) {
            try {
                const auto fit = fit_correlation_length(map, dir);
                fits[name] = {{"xi", fit.infinite ? -1.0 : fit.xi},
                              {"xi_err", fit.xi_err},
                              {"infinite", fit.infinite},
                              {"n_points", fit.n_points}};
            } catch (const AnalysisError& e) {
                fits[name] = {{"error", e.what()}};
            }
        };
        record("horizontal", g2, FitDirection::horizontal);
        record("vertical", g2, FitDirection::vertical);
        record("radial_staggered", g2m, FitDirection::radial);
        write_json_file(ctx.out_dir / "correlation_lengths.json", fits, ctx.hash);

        const auto patterns = checkerboard_patterns(lat.nx, lat.ny);
        write_json_file(ctx.out_dir / "perfect_order.json",
                        {{"probability", perfect_order_probability(shots, patterns)},
                         {"n_shots", shots.shots.size()},
                         {"n_sites", shots.n_sites}},
                        ctx.hash);
    }
}

// --- phase diagram ---------------------------------------------------------------

inline void run_phase_diagram(const json& config, const RunContext& ctx) {
    reject_unknown_keys(config, "",
                        {"lattice", "basis", "drive", "raster", "interaction", "state", "sweep",
                         "output", "workers"});
    const Lattice lat = parse_lattice(config.at("lattice"));
    lat.require_grid("phase diagram");
    const double omega = mhz(require<double>(config.at("drive"), "drive", "omega_mhz"));
    reject_unknown_keys(config.at("drive"), "drive", {"omega_mhz"});
    const json raster = config.at("raster");
    reject_unknown_keys(raster, "raster", {"rb_over_a", "delta_over_omega"});
    const AxisSpec rb_axis = parse_axis(raster.at("rb_over_a"), "raster.rb_over_a");
    const AxisSpec dd_axis = parse_axis(raster.at("delta_over_omega"), "raster.delta_over_omega");
    const double trunc =
        config.value("interaction", json::object()).value("truncation_a", 2.0);
    const std::string state_kind = config.value("state", "ground");
    if (state_kind != "ground" && state_kind != "sweep")
        throw ConfigError("config: state must be 'ground' or 'sweep'");
    if (state_kind == "sweep") {
        if (!config.contains("sweep"))
            throw ConfigError("config: state 'sweep' requires a sweep section");
        reject_unknown_keys(config.at("sweep"), "sweep",
                            {"delta_start_mhz", "rate_mhz_per_us", "end_ramp_us", "substeps"});
    }

    auto basis = parse_basis(config.value("basis", json::object()), lat);

    struct Point {
        double rb, dd, checker, striated, star, density, energy;
        int degeneracy;
    };
    const int npts = rb_axis.n * dd_axis.n;
    std::vector<Point> pts(npts);
    parallel_for(npts, ctx.workers, [&](std::size_t q) {
        const int i = static_cast<int>(q) / dd_axis.n;
        const int j = static_cast<int>(q) % dd_axis.n;
        Point& pt = pts[q];
        pt.rb = rb_axis.at(i);
        pt.dd = dd_axis.at(j);
        const auto vm = interaction_matrix(
            lat, v0_from_blockade_ratio(pt.rb, omega, lat.spacing_um), trunc * lat.spacing_um);
        const auto op = build_operator(basis, vm);
        StateVector state;
        pt.degeneracy = 1;
        if (state_kind == "ground") {
            auto gs = ground_state(op, DriveParams{omega, pt.dd * omega, 0.0});
            state = std::move(gs.state);
            pt.energy = gs.energy;
            pt.degeneracy = gs.degeneracy_dim;
        } else {
            const json& sw = config.at("sweep");
            LinearSweep lin;
            lin.delta_start = mhz(require<double>(sw, "sweep", "delta_start_mhz"));
            lin.delta_end = pt.dd * omega;
            lin.rate = mhz_per_us(require<double>(sw, "sweep", "rate_mhz_per_us"));
            lin.omega = omega;
            lin.end_ramp_s = microseconds(sw.value("end_ramp_us", 0.0));
            DriveSchedule sched(lin);
            auto psi0 = StateVector::basis_state(basis, 0);
            EvolveOptions opts;
            opts.substep_dt = sched.total_duration() / sw.value("substeps", 2000);
            state = evolve(psi0, op, sched, opts).state;
            pt.energy = expectation_energy(op, DriveParams{omega, pt.dd * omega, 0.0}, state);
        }
        const auto ops = order_parameters_exact(state, lat.nx, lat.ny);
        pt.checker = ops.checkerboard;
        pt.striated = ops.striated;
        pt.star = ops.star;
        pt.density = mean_density(state);
    });

    auto f = open_csv(ctx.out_dir / "phase_diagram.csv", provenance_comment(ctx.hash),
                      "rb_over_a,delta_over_omega,checkerboard,striated,star,mean_density,"
                      "energy_rad_s,degeneracy");
    for (const auto& pt : pts)
        f << fmt_double(pt.rb) << "," << fmt_double(pt.dd) << "," << fmt_double(pt.checker)
          << "," << fmt_double(pt.striated) << "," << fmt_double(pt.star) << ","
          << fmt_double(pt.density) << "," << fmt_double(pt.energy) << "," << pt.degeneracy
          << "\n";
}

// --- kz -----------------------------------------------------------------------------

inline void run_kz(const json& config, const RunContext& ctx,
                   std::optional<std::uint64_t> seed_override) {
    reject_unknown_keys(config, "",
                        {"source", "synthetic", "lattice", "interaction", "basis", "drive",
                         "sweep", "endpoints", "shots", "noise", "xi", "collapse",
                         "critical_point", "output", "workers"});
    const std::string source = config.value("source", "simulate");
    const json collapse_cfg = config.value("collapse", json::object());
    reject_unknown_keys(collapse_cfg, "collapse", {"z", "s0", "nu_lo", "nu_hi", "nu_step"});
    const double z = collapse_cfg.value("z", 1.0);

    CollapseCurves curves;
    curves.z = z;
    double delta_c = 0.0, delta_c_err = 0.0;
    std::string delta_units;

    if (source == "synthetic") {
        const json& syn = config.at("synthetic");
        reject_unknown_keys(syn, "synthetic",
                            {"nu_star", "delta_c", "rates", "s0", "delta_grid", "xi0"});
        const double nu_star = require<double>(syn, "synthetic", "nu_star");
        delta_c = require<double>(syn, "synthetic", "delta_c");
        const double xi0 = syn.value("xi0", 1.0);
        const AxisSpec grid = parse_axis(syn.at("delta_grid"), "synthetic.delta_grid");
        const auto rates = syn.at("rates").get<std::vector<double>>();
        curves.s0 = syn.value("s0", rates.front());
        const double mu = kz_mu(z, nu_star), kappa = kz_kappa(z, nu_star);
        for (double s : rates) {
            CollapseCurve c;
            c.rate = s;
            for (int i = 0; i < grid.n; ++i) {
                const double d = grid.at(i);
                const double dtil = (d - delta_c) * std::pow(s / curves.s0, kappa);
                c.delta.push_back(d);
                c.xi.push_back(std::pow(s / curves.s0, -mu) * xi0 * (2.0 + std::tanh(dtil)));
                c.xi_err.push_back(0.0);
            }
            curves.curves.push_back(std::move(c));
        }
        delta_units = "arb";
    } else if (source == "simulate") {
        const Lattice lat = parse_lattice(config.at("lattice"));
        lat.require_grid("kz");
        const double omega = mhz(require<double>(config.at("drive"), "drive", "omega_mhz"));
        reject_unknown_keys(config.at("drive"), "drive", {"omega_mhz"});
        const auto vm = parse_interaction(config.at("interaction"), lat, omega);
        auto basis = parse_basis(config.value("basis", json::object()), lat);
        const json& sw = config.at("sweep");
        reject_unknown_keys(sw, "sweep",
                            {"delta_start_mhz", "rates_mhz_per_us", "substeps"});
        const double delta_start = mhz(require<double>(sw, "sweep", "delta_start_mhz"));
        const auto rates = sw.at("rates_mhz_per_us").get<std::vector<double>>();
        if (rates.size() < 2) throw ConfigError("config: sweep needs >= 2 rates");
        const int substeps = sw.value("substeps", 500);
        const AxisSpec endpoints = parse_axis(config.at("endpoints"), "endpoints");
        ShotSpec shot_spec = parse_shots(config.at("shots"));
        if (seed_override) shot_spec.seed = *seed_override;
        const auto noise = parse_noise(config);
        const std::string xi_dir =
            config.value("xi", json::object()).value("direction", "radial");
        const FitDirection dir = xi_dir == "horizontal" ? FitDirection::horizontal
                                 : xi_dir == "vertical" ? FitDirection::vertical
                                                        : FitDirection::radial;

        const auto op = build_operator(basis, vm);
        const std::size_t slowest =
            std::min_element(rates.begin(), rates.end()) - rates.begin();
        curves.s0 = collapse_cfg.value("s0", rates[slowest]);
        struct CurvePoint {
            double xi = 0.0, xi_err = 0.0, density = 0.0;
            bool usable = false;
        };
        std::vector<CurvePoint> grid_pts(rates.size() * endpoints.n);
        parallel_for(grid_pts.size(), ctx.workers, [&](std::size_t q) {
            const std::size_t ri = q / endpoints.n;
            const int ei = static_cast<int>(q % endpoints.n);
            LinearSweep lin;
            lin.delta_start = delta_start;
            lin.delta_end = mhz(endpoints.at(ei));
            lin.rate = mhz_per_us(rates[ri]);
            lin.omega = omega;
            DriveSchedule sched(lin);
            EvolveOptions opts;
            opts.substep_dt = sched.total_duration() / substeps;
            auto psi0 = StateVector::basis_state(basis, 0);
            const auto evolved = evolve(psi0, op, sched, opts);
            ShotSet shots = sample(evolved.state, shot_spec.n, derive_seed(shot_spec.seed, q));
            shots.nx = lat.nx;
            shots.ny = lat.ny;
            if (noise)
                shots = apply_detection_noise(shots, *noise,
                                              derive_seed(shot_spec.seed, q + grid_pts.size()));
            CurvePoint& pt = grid_pts[q];
            double dens = 0.0;
            for (Config s : shots.shots) dens += hamming_density(s, shots.n_sites);
            pt.density = dens / shots.shots.size();
            try {
                const auto fit = fit_correlation_length(g2_m(shots), dir);
                if (!fit.infinite) {
                    pt.xi = fit.xi;
                    pt.xi_err = fit.xi_err;
                    pt.usable = fit.xi > 0.0;
                }
            } catch (const AnalysisError&) {
                pt.usable = false;
            }
        });

        // critical point from the slowest sweep, as close to adiabatic as we get
        DensityCurve dens_curve;
        for (int ei = 0; ei < endpoints.n; ++ei) {
            dens_curve.delta.push_back(endpoints.at(ei));  // MHz
            dens_curve.n.push_back(grid_pts[slowest * endpoints.n + ei].density);
        }
        CriticalPointOptions cp_opts;
        if (config.contains("critical_point")) {
            reject_unknown_keys(config.at("critical_point"), "critical_point",
                                {"windows_mhz"});
            for (const auto& w : config.at("critical_point").at("windows_mhz"))
                cp_opts.windows.push_back({w.at(0).get<double>(), w.at(1).get<double>()});
        } else {
            for (double center : {0.75, 1.0, 1.25})
                for (double width : {1.5, 2.0})
                    cp_opts.windows.push_back({to_mhz(omega) * (center - width / 2),
                                               to_mhz(omega) * (center + width / 2)});
        }
        const auto cp = critical_point(dens_curve, cp_opts);
        delta_c = cp.delta_c;
        delta_c_err = cp.delta_c_err;
        delta_units = "MHz";
        write_json_file(ctx.out_dir / "critical_point.json",
                        {{"delta_c_mhz", cp.delta_c},
                         {"delta_c_err_mhz", cp.delta_c_err},
                         {"delta_c_over_omega", mhz(cp.delta_c) / omega},
                         {"per_window_mhz", cp.per_window}},
                        ctx.hash);

        for (std::size_t ri = 0; ri < rates.size(); ++ri) {
            CollapseCurve c;
            c.rate = rates[ri];
            for (int ei = 0; ei < endpoints.n; ++ei) {
                const auto& pt = grid_pts[ri * endpoints.n + ei];
                if (!pt.usable) continue;
                c.delta.push_back(endpoints.at(ei));
                c.xi.push_back(pt.xi);
                c.xi_err.push_back(pt.xi_err);
            }
            if (c.delta.size() >= 5) curves.curves.push_back(std::move(c));
        }
        if (curves.curves.size() < 2)
            throw AnalysisError("kz: fewer than 2 usable correlation-growth curves");
    } else {
        throw ConfigError("config: source must be 'simulate' or 'synthetic'");
    }

    {
        auto f = open_csv(ctx.out_dir / "curves.csv", provenance_comment(ctx.hash),
                          "rate,delta,xi,xi_err");
        for (const auto& c : curves.curves)
            for (std::size_t i = 0; i < c.delta.size(); ++i)
                f << fmt_double(c.rate) << "," << fmt_double(c.delta[i]) << ","
                  << fmt_double(c.xi[i]) << ","
                  << fmt_double(c.xi_err.empty() ? 0.0 : c.xi_err[i]) << "\n";
    }

    const auto fit = fit_nu(curves, delta_c, z, delta_c_err, collapse_cfg.value("nu_lo", 0.3),
                            collapse_cfg.value("nu_hi", 1.2),
                            collapse_cfg.value("nu_step", 0.005));
    write_json_file(ctx.out_dir / "collapse.json",
                    {{"nu", fit.nu},
                     {"nu_err", fit.nu_err},
                     {"delta_c", delta_c},
                     {"delta_c_units", delta_units},
                     {"D_min", fit.d_min},
                     {"z", z},
                     {"s0", curves.s0}},
                    ctx.hash);

    CollapseCurves rescaled = curves;
    rescaled.nu = fit.nu;
    rescaled.delta_c = delta_c;
    rescaled = kz_rescale(rescaled);
    auto f = open_csv(ctx.out_dir / "rescaled_curves.csv", provenance_comment(ctx.hash),
                      "rate,delta_tilde,xi_tilde");
    for (const auto& c : rescaled.curves)
        for (std::size_t i = 0; i < c.delta.size(); ++i)
            f << fmt_double(c.rate) << "," << fmt_double(c.delta[i]) << ","
              << fmt_double(c.xi[i]) << "\n";
}

// --- quench ----------------------------------------------------------------------

inline void run_quench(const json& config, const RunContext& ctx,
                       std::optional<std::uint64_t> seed_override) {
    reject_unknown_keys(config, "",
                        {"lattice", "interaction", "basis", "prepare", "evolve", "quench",
                         "phi_scan", "shots", "noise", "bloch_fit", "output", "workers"});
    const Lattice lat = parse_lattice(config.at("lattice"));
    lat.require_grid("quench");
    const DriveSchedule prep = [&] {
        json p = config.at("prepare");
        return parse_schedule(p);
    }();
    const double omega = schedule_omega(prep);
    const auto vm = parse_interaction(config.at("interaction"), lat, omega);
    auto basis = parse_basis(config.value("basis", json::object()), lat);
    const auto opts = parse_evolve(config.value("evolve", json::object()),
                                   prep.total_duration());
    ShotSpec shot_spec = parse_shots(config.at("shots"));
    if (seed_override) shot_spec.seed = *seed_override;
    const auto noise = parse_noise(config);

    const json& q = config.at("quench");
    reject_unknown_keys(q, "quench", {"omega_q_mhz", "t_q_us", "phi_q", "delta_q_scan_mhz"});
    const double omega_q = mhz(require<double>(q, "quench", "omega_q_mhz"));
    const double t_q = microseconds(require<double>(q, "quench", "t_q_us"));
    const double phi_q_default = q.value("phi_q", kPi / 2.0);
    const AxisSpec dq_axis = parse_axis(q.at("delta_q_scan_mhz"), "quench.delta_q_scan_mhz");

    const auto op = build_operator(basis, vm);
    auto psi0 = StateVector::basis_state(basis, 0);
    const StateVector prepared = evolve(psi0, op, prep, opts).state;

    auto quench_and_measure = [&](double delta_q, double phi, std::uint64_t seed) {
        Quench qu;
        qu.omega_q = omega_q;
        qu.delta_q = delta_q;
        qu.phi_q = phi;
        qu.t_q = t_q;
        DriveSchedule sched{qu};
        EvolveOptions qopts;
        qopts.substep_dt = t_q / 64.0;
        const StateVector after = evolve(prepared, op, sched, qopts).state;
        ShotSet shots = sample(after, shot_spec.n, seed);
        shots.nx = lat.nx;
        shots.ny = lat.ny;
        if (noise) shots = apply_detection_noise(shots, *noise, derive_seed(seed, 99));
        return shots;
    };

    // P^(d) vs quench detuning
    struct Row {
        double dq;
        ConditionalDensity p[5];
    };
    std::vector<Row> rows(dq_axis.n);
    parallel_for(rows.size(), ctx.workers, [&](std::size_t i) {
        rows[i].dq = dq_axis.at(static_cast<int>(i));
        const auto shots = quench_and_measure(mhz(rows[i].dq), phi_q_default,
                                              derive_seed(shot_spec.seed, i));
        for (int d = 0; d <= 4; ++d) rows[i].p[d] = conditional_density(shots, d);
    });
    {
        auto f = open_csv(ctx.out_dir / "conditional_densities.csv",
                          provenance_comment(ctx.hash),
                          "delta_q_mhz,p0,p1,p2,p3,p4,den0,den1,den2,den3,den4");
        for (const auto& r : rows) {
            f << fmt_double(r.dq);
            for (int d = 0; d <= 4; ++d)
                f << "," << (r.p[d].defined ? fmt_double(r.p[d].value) : "nan");
            for (int d = 0; d <= 4; ++d) f << "," << fmt_double(r.p[d].denominator);
            f << "\n";
        }
    }

    // phi_q scans at the two resonances, plus Bloch-vector fits
    const json phi_cfg = config.value("phi_scan", json::object());
    reject_unknown_keys(phi_cfg, "phi_scan",
                        {"n", "delta_q_mhz_d0", "delta_q_mhz_d4"});
    const int nphi = phi_cfg.value("n", 12);
    const double dq0 = phi_cfg.value("delta_q_mhz_d0", 0.0);
    const double v_diag = nn_interaction(vm, lat.spacing_um) / 8.0;
    const double dq4 = phi_cfg.value("delta_q_mhz_d4", to_mhz(4.0 * v_diag));
    struct PhiRow {
        double phi, p0, p4;
    };
    std::vector<PhiRow> phi_rows(nphi);
    parallel_for(phi_rows.size(), ctx.workers, [&](std::size_t i) {
        const double phi = -kPi + (2.0 * kPi) * static_cast<double>(i) / nphi;
        phi_rows[i].phi = phi;
        const auto s0 =
            quench_and_measure(mhz(dq0), phi, derive_seed(shot_spec.seed, 1000 + i));
        const auto s4 =
            quench_and_measure(mhz(dq4), phi, derive_seed(shot_spec.seed, 2000 + i));
        const auto p0 = conditional_density(s0, 0);
        const auto p4 = conditional_density(s4, 4);
        phi_rows[i].p0 = p0.defined ? p0.value : std::nan("");
        phi_rows[i].p4 = p4.defined ? p4.value : std::nan("");
    });
    {
        auto f = open_csv(ctx.out_dir / "phi_scan.csv", provenance_comment(ctx.hash),
                          "phi_q,p0,p4");
        for (const auto& r : phi_rows)
            f << fmt_double(r.phi) << "," << fmt_double(r.p0) << "," << fmt_double(r.p4)
              << "\n";
    }

    const json bf = config.value("bloch_fit", json::object());
    reject_unknown_keys(bf, "bloch_fit",
                        {"sigma_delta_frac", "sigma_area_frac", "shift_d4_mhz"});
    QuenchModel model;
    model.omega = omega_q;
    model.tau = t_q;
    model.jitter = true;
    model.sigma_delta_frac = bf.value("sigma_delta_frac", 0.15);
    model.sigma_area_frac = bf.value("sigma_area_frac", 0.10);
    json fits;
    std::vector<double> phis, p0s, p4s;
    for (const auto& r : phi_rows) {
        phis.push_back(r.phi);
        p0s.push_back(r.p0);
        p4s.push_back(r.p4);
    }
    model.interaction_shift = 0.0;
    model.delta = mhz(dq0);
    fits["sublattice_00"] = bloch_fit_to_json(fit_bloch(phis, p0s, model));
    model.interaction_shift = mhz(bf.value("shift_d4_mhz", to_mhz(4.0 * v_diag)));
    model.delta = mhz(dq4) - model.interaction_shift;
    fits["sublattice_11"] = bloch_fit_to_json(fit_bloch(phis, p4s, model));
    write_json_file(ctx.out_dir / "bloch_fits.json", fits, ctx.hash);
}

// --- rearrange ----------------------------------------------------------------------

inline void run_rearrange(const json& config, const RunContext& ctx,
                          std::optional<std::uint64_t> seed_override) {
    reject_unknown_keys(config, "",
                        {"grid", "load", "target", "cost", "two_rounds", "output", "workers"});
    const json& gj = config.at("grid");
    reject_unknown_keys(gj, "grid", {"rows", "cols"});
    const int rows = require<int>(gj, "grid", "rows");
    const int cols = require<int>(gj, "grid", "cols");
    if (rows < 1 || cols < 1) throw ConfigError("config: grid dims must be >= 1");

    const json& lj = config.at("load");
    reject_unknown_keys(lj, "load", {"p", "n_seeds", "seed0"});
    const double p = require<double>(lj, "load", "p");
    const int n_seeds = lj.value("n_seeds", 1);
    std::uint64_t seed0 = lj.value("seed0", std::uint64_t{1});
    if (seed_override) seed0 = *seed_override;

    const json& tj = config.at("target");
    reject_unknown_keys(tj, "target", {"kind", "rows", "cols"});
    const std::string tkind = tj.value("kind", "centered_block");

    CostModel cost;
    if (config.contains("cost")) {
        const json& cj = config.at("cost");
        reject_unknown_keys(cj, "cost",
                            {"pickup_ms", "speed_um_per_ms", "site_pitch_um", "lifetime_s"});
        cost.pickup_ms = cj.value("pickup_ms", cost.pickup_ms);
        cost.speed_um_per_ms = cj.value("speed_um_per_ms", cost.speed_um_per_ms);
        cost.site_pitch_um = cj.value("site_pitch_um", cost.site_pitch_um);
        cost.background_lifetime_s = cj.value("lifetime_s", cost.background_lifetime_s);
    }
    const bool two_rounds = config.value("two_rounds", false);

    struct SeedStats {
        double filling, time_ms;
        int lost, unresolved;
    };
    std::vector<SeedStats> stats(n_seeds);
    std::optional<RearrangeOutcome> first;
    parallel_for(stats.size(), ctx.workers, [&](std::size_t i) {
        GridOccupancy g = random_load(rows, cols, p, derive_seed(seed0, i));
        if (tkind == "centered_block")
            set_centered_block_target(g, require<int>(tj, "target", "rows"),
                                      require<int>(tj, "target", "cols"));
        else if (tkind == "all")
            std::fill(g.target.begin(), g.target.end(), 1);
        else
            throw ConfigError("config: target.kind must be 'centered_block' or 'all'");
        auto outcome = plan_and_simulate(g, cost, two_rounds, derive_seed(seed0, 10000 + i));
        stats[i] = {outcome.filling_fraction, outcome.est_time_ms, outcome.atoms_lost,
                    static_cast<int>(outcome.unresolved_columns.size())};
        if (i == 0) first = std::move(outcome);
    });

    double mean_fill = 0.0, min_fill = 1.0, max_fill = 0.0, mean_time = 0.0, mean_lost = 0.0;
    int unresolved_total = 0;
    for (const auto& s : stats) {
        mean_fill += s.filling;
        min_fill = std::min(min_fill, s.filling);
        max_fill = std::max(max_fill, s.filling);
        mean_time += s.time_ms;
        mean_lost += s.lost;
        unresolved_total += s.unresolved;
    }
    mean_fill /= n_seeds;
    mean_time /= n_seeds;
    mean_lost /= n_seeds;
    write_json_file(ctx.out_dir / "filling_stats.json",
                    {{"n_seeds", n_seeds},
                     {"mean_filling", mean_fill},
                     {"min_filling", min_fill},
                     {"max_filling", max_fill},
                     {"mean_time_ms", mean_time},
                     {"mean_atoms_lost", mean_lost},
                     {"unresolved_column_events", unresolved_total},
                     {"two_rounds", two_rounds}},
                    ctx.hash);
    if (first) {
        nlohmann::json pj = plan_to_json(first->plan);
        pj["filling_fraction"] = first->filling_fraction;
        pj["est_time_ms"] = first->est_time_ms;
        write_json_file(ctx.out_dir / "plan.json", pj, ctx.hash);
        write_plan_csv(ctx.out_dir / "events.csv", first->plan, cost,
                       provenance_comment(ctx.hash));
    }
}

// --- entry point --------------------------------------------------------------------

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitCapError = 3;

// Dispatches one subcommand. Exit codes: 0 success, 2 config error,
// 3 resource-cap error, 1 other failure.
inline int run_command(const std::string& command, const std::string& config_path,
                       const std::string& out_dir, std::optional<std::uint64_t> seed,
                       unsigned workers) {
    try {
        const json config = load_config(config_path);
        unsigned w = workers;
        if (w == 0) w = config.value("workers", 1u);
        const RunContext ctx = make_context(config, out_dir, seed, w);
        if (command == "sweep")
            run_sweep(config, ctx, seed);
        else if (command == "phase-diagram")
            run_phase_diagram(config, ctx);
        else if (command == "kz")
            run_kz(config, ctx, seed);
        else if (command == "quench")
            run_quench(config, ctx, seed);
        else if (command == "rearrange")
            run_rearrange(config, ctx, seed);
        else
            throw ConfigError("unknown command '" + command + "'");
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "rydsim: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const SizeCapError& e) {
        std::cerr << "rydsim: " << e.what() << "\n";
        return kExitCapError;
    } catch (const std::exception& e) {
        std::cerr << "rydsim: error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace rydsim::cli
