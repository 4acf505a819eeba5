#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rydsim/errors.hpp"
#include "rydsim/hilbert.hpp"
#include "rydsim/rng.hpp"

namespace rydsim {

// Site-independent readout error channel: a ground atom is misread as Rydberg
// with p_g_loss, a Rydberg atom as ground with p_r_recapture.
struct DetectionModel {
    double p_g_loss = 0.01;
    double p_r_recapture = 0.009;

    // Main-text data use microwave-enhanced Rydberg detection (99.1% loss
    // probability); without it, Rydberg decay-and-recapture is ~15%.
    static DetectionModel mw_enhanced() { return {0.01, 0.009}; }
    static DetectionModel no_mw() { return {0.01, 0.15}; }
    static DetectionModel ideal() { return {0.0, 0.0}; }

    void validate() const {
        if (p_g_loss < 0.0 || p_g_loss >= 1.0 || p_r_recapture < 0.0 || p_r_recapture >= 1.0)
            throw std::invalid_argument("DetectionModel: probabilities must be in [0,1)");
    }
};

struct ShotMetadata {
    std::uint64_t seed = 0;
    std::string schedule_hash;  // provenance tag, free-form
    bool noise_applied = false;
    DetectionModel noise;
};

// Single-shot occupation images with provenance. Square-grid data carries
// (nx, ny); other geometries leave them 0 and grid-indexed estimators reject.
struct ShotSet {
    int n_sites = 0;
    int nx = 0;
    int ny = 0;
    std::vector<Config> shots;
    ShotMetadata meta;

    bool has_grid() const { return nx > 0 && ny > 0 && nx * ny == n_sites; }
    void require_grid(const char* what) const {
        if (!has_grid())
            throw GridIndexError(std::string(what) + " requires square-grid shots");
    }
};

// I.i.d. Born-rule samples of the occupation basis; identical (state, n_shots,
// seed) give identical shots.
inline ShotSet sample(const StateVector& state, std::size_t n_shots, std::uint64_t seed) {
    if (n_shots < 1) throw std::invalid_argument("sample: n_shots must be >= 1");
    if (std::abs(state.norm() - 1.0) > 1e-9)
        throw std::invalid_argument("sample: state is not normalized");
    const Basis& b = *state.basis;
    std::vector<double> cdf(b.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k) {
        acc += std::norm(state.amplitudes[static_cast<Eigen::Index>(k)]);
        cdf[k] = acc;
    }
    ShotSet out;
    out.n_sites = b.n_sites();
    out.meta.seed = seed;
    out.shots.resize(n_shots);
    std::mt19937_64 gen(seed);
    for (std::size_t s = 0; s < n_shots; ++s) {
        const double u = uniform_unit(gen) * acc;
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        const std::size_t k = std::min<std::size_t>(it - cdf.begin(), b.size() - 1);
        out.shots[s] = b.at(k);
    }
    return out;
}

// Independent per-site bit flips; one uniform is drawn per site read so the
// stream stays aligned regardless of outcomes.
inline ShotSet apply_detection_noise(const ShotSet& in, const DetectionModel& model,
                                     std::uint64_t seed) {
    model.validate();
    ShotSet out = in;
    out.meta.noise_applied = true;
    out.meta.noise = model;
    std::mt19937_64 gen(seed);
    for (auto& shot : out.shots) {
        Config flipped = shot;
        for (int i = 0; i < in.n_sites; ++i) {
            const double u = uniform_unit(gen);
            const bool excited = (shot >> i) & 1u;
            if (excited ? (u < model.p_r_recapture) : (u < model.p_g_loss))
                flipped ^= Config{1} << i;
        }
        shot = flipped;
    }
    return out;
}

// Fraction of shots exactly equal to either perfect pattern.
inline double perfect_order_probability(const ShotSet& shots,
                                        std::pair<Config, Config> pattern_pair) {
    shots.require_grid("perfect_order_probability");
    const Config mask = (shots.n_sites >= 64) ? ~Config{0} : ((Config{1} << shots.n_sites) - 1);
    if ((pattern_pair.first & ~mask) || (pattern_pair.second & ~mask))
        throw std::invalid_argument("perfect_order_probability: pattern exceeds site count");
    std::size_t hits = 0;
    for (Config s : shots.shots)
        if (s == pattern_pair.first || s == pattern_pair.second) ++hits;
    return shots.shots.empty() ? 0.0 : static_cast<double>(hits) / shots.shots.size();
}

// The two perfect checkerboard patterns on an nx x ny grid (even and odd
// (col+row) parity excited).
inline std::pair<Config, Config> checkerboard_patterns(int nx, int ny) {
    Config even = 0, odd = 0;
    for (int r = 0; r < ny; ++r)
        for (int c = 0; c < nx; ++c) {
            const int i = r * nx + c;
            if ((c + r) % 2 == 0)
                even |= Config{1} << i;
            else
                odd |= Config{1} << i;
        }
    return {even, odd};
}

// --- CSV + sidecar ----------------------------------------------------------
// One row per shot, columns site_0..site_{N-1}; optional leading '#' comment
// lines. Metadata goes to a JSON sidecar next to the CSV.

inline void write_shot_csv(const std::string& path, const ShotSet& shots,
                           const std::string& comment = "") {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_shot_csv: cannot open " + path);
    if (!comment.empty()) f << "# " << comment << "\n";
    for (int i = 0; i < shots.n_sites; ++i) f << (i ? "," : "") << "site_" << i;
    f << "\n";
    for (Config s : shots.shots) {
        for (int i = 0; i < shots.n_sites; ++i) f << (i ? "," : "") << ((s >> i) & 1u);
        f << "\n";
    }
}

inline void write_shot_sidecar(const std::string& path, const ShotSet& shots,
                               const nlohmann::json& extra = {}) {
    nlohmann::json j{{"n_sites", shots.n_sites},
                     {"nx", shots.nx},
                     {"ny", shots.ny},
                     {"n_shots", shots.shots.size()},
                     {"seed", shots.meta.seed},
                     {"schedule_hash", shots.meta.schedule_hash},
                     {"noise_applied", shots.meta.noise_applied}};
    if (shots.meta.noise_applied)
        j["noise"] = {{"p_g_loss", shots.meta.noise.p_g_loss},
                      {"p_r_recapture", shots.meta.noise.p_r_recapture}};
    for (auto& [k, v] : extra.items()) j[k] = v;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_shot_sidecar: cannot open " + path);
    f << j.dump(2) << "\n";
}

inline ShotSet read_shot_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_shot_csv: cannot open " + path);
    ShotSet out;
    std::string line;
    bool header_seen = false;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            out.n_sites = 1 + static_cast<int>(std::count(line.begin(), line.end(), ','));
            continue;
        }
        Config c = 0;
        int site = 0;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            if (cell == "1") c |= Config{1} << site;
            ++site;
        }
        if (site != out.n_sites)
            throw std::runtime_error("read_shot_csv: ragged row in " + path);
        out.shots.push_back(c);
    }
    return out;
}

}  // namespace rydsim
