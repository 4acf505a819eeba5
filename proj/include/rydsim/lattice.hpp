#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rydsim/errors.hpp"

namespace rydsim {

enum class LatticeKind { square, honeycomb, triangular };

inline const char* to_string(LatticeKind k) {
    switch (k) {
        case LatticeKind::square: return "square";
        case LatticeKind::honeycomb: return "honeycomb";
        case LatticeKind::triangular: return "triangular";
    }
    return "?";
}

inline LatticeKind lattice_kind_from_string(const std::string& s) {
    if (s == "square") return LatticeKind::square;
    if (s == "honeycomb") return LatticeKind::honeycomb;
    if (s == "triangular") return LatticeKind::triangular;
    throw std::invalid_argument("unknown lattice kind: " + s);
}

// Site positions are stored in units of the lattice spacing `a`; physical
// distances are coordinates times spacing_um. Square lattices carry integer
// (col,row) grid indices; honeycomb/triangular do not, and grid-indexed
// analyses reject them.
struct Lattice {
    LatticeKind kind = LatticeKind::square;
    int nx = 0;
    int ny = 0;
    double spacing_um = 1.0;
    std::vector<std::array<double, 2>> sites;  // units of a, row-major order
    std::vector<std::array<int, 2>> grid;      // (col,row); empty unless square

    int n_sites() const { return static_cast<int>(sites.size()); }
    bool has_grid() const { return !grid.empty(); }

    void require_grid(const char* what) const {
        if (!has_grid())
            throw GridIndexError(std::string(what) +
                                 " requires a square lattice with (col,row) indices; got " +
                                 to_string(kind));
    }

    // Euclidean distance in units of a.
    double distance(int i, int j) const {
        const double dx = sites[i][0] - sites[j][0];
        const double dy = sites[i][1] - sites[j][1];
        return std::sqrt(dx * dx + dy * dy);
    }
};

inline Lattice build_lattice(LatticeKind kind, int nx, int ny, double spacing_um) {
    if (nx < 1 || ny < 1) throw std::invalid_argument("build_lattice: nx, ny must be >= 1");
    if (!(spacing_um > 0.0)) throw std::invalid_argument("build_lattice: spacing must be > 0");
    Lattice lat;
    lat.kind = kind;
    lat.nx = nx;
    lat.ny = ny;
    lat.spacing_um = spacing_um;
    switch (kind) {
        case LatticeKind::square:
            lat.sites.reserve(static_cast<std::size_t>(nx) * ny);
            lat.grid.reserve(static_cast<std::size_t>(nx) * ny);
            for (int r = 0; r < ny; ++r)
                for (int c = 0; c < nx; ++c) {
                    lat.sites.push_back({static_cast<double>(c), static_cast<double>(r)});
                    lat.grid.push_back({c, r});
                }
            break;
        case LatticeKind::triangular: {
            // Offset rows; nearest-neighbor distance 1, interior sites have 6 neighbors.
            const double h = std::sqrt(3.0) / 2.0;
            for (int r = 0; r < ny; ++r)
                for (int c = 0; c < nx; ++c)
                    lat.sites.push_back({c + 0.5 * (r % 2), r * h});
            break;
        }
        case LatticeKind::honeycomb: {
            // nx x ny unit cells of two sites; primitive vectors (sqrt3, 0) and
            // (sqrt3/2, 3/2), basis offset (0, 1). Nearest-neighbor distance 1.
            const double s3 = std::sqrt(3.0);
            for (int r = 0; r < ny; ++r)
                for (int c = 0; c < nx; ++c) {
                    const double x0 = c * s3 + r * (s3 / 2.0);
                    const double y0 = r * 1.5;
                    lat.sites.push_back({x0, y0});
                    lat.sites.push_back({x0, y0 + 1.0});
                }
            break;
        }
    }
    return lat;
}

// Unordered nearest-neighbor pairs (distance == a within tolerance), i < j.
inline std::vector<std::array<int, 2>> nearest_neighbor_pairs(const Lattice& lat) {
    std::vector<std::array<int, 2>> pairs;
    const int n = lat.n_sites();
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (std::abs(lat.distance(i, j) - 1.0) < 1e-9) pairs.push_back({i, j});
    return pairs;
}

// Truncated van der Waals couplings. v0 is normalized so that V(a) = v0/a^6
// with a in um: V_ij = v0 / |x_i - x_j|^6 at physical distance.
struct InteractionMatrix {
    double v0 = 0.0;  // rad/s * um^6
    double truncation_um = 0.0;
    int n_sites = 0;
    struct PairTerm {
        int i, j;    // i < j
        double v;    // rad/s
    };
    std::vector<PairTerm> pair_terms;
};

inline InteractionMatrix interaction_matrix(const Lattice& lat, double v0,
                                            double truncation_um) {
    if (!(v0 > 0.0)) throw std::invalid_argument("interaction_matrix: v0 must be > 0");
    if (truncation_um < lat.spacing_um)
        throw std::invalid_argument("interaction_matrix: truncation below lattice spacing");
    InteractionMatrix vm;
    vm.v0 = v0;
    vm.truncation_um = truncation_um;
    vm.n_sites = lat.n_sites();
    const int n = lat.n_sites();
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double r = lat.distance(i, j) * lat.spacing_um;
            if (r <= truncation_um + 1e-12)
                vm.pair_terms.push_back({i, j, v0 / std::pow(r, 6)});
        }
    return vm;
}

// R_b = (v0/omega)^(1/6), in um when v0 is rad/s*um^6.
inline double blockade_radius(double v0, double omega) {
    if (!(v0 > 0.0) || !(omega > 0.0))
        throw std::invalid_argument("blockade_radius: v0 and omega must be > 0");
    return std::pow(v0 / omega, 1.0 / 6.0);
}

// v0 such that R_b/a has the requested value at drive omega.
inline double v0_from_blockade_ratio(double rb_over_a, double omega, double spacing_um) {
    return omega * std::pow(rb_over_a * spacing_um, 6);
}

// Interaction between grid neighbors, V(a) = v0/a^6.
inline double nn_interaction(const InteractionMatrix& vm, double spacing_um) {
    return vm.v0 / std::pow(spacing_um, 6);
}

inline void to_json(nlohmann::json& j, const Lattice& lat) {
    j = nlohmann::json{{"kind", to_string(lat.kind)},
                       {"nx", lat.nx},
                       {"ny", lat.ny},
                       {"spacing_a", lat.spacing_um},
                       {"sites", lat.sites}};
}

inline void from_json(const nlohmann::json& j, Lattice& lat) {
    Lattice rebuilt = build_lattice(lattice_kind_from_string(j.at("kind").get<std::string>()),
                                    j.at("nx").get<int>(), j.at("ny").get<int>(),
                                    j.at("spacing_a").get<double>());
    const auto sites = j.at("sites").get<std::vector<std::array<double, 2>>>();
    if (sites.size() != rebuilt.sites.size())
        throw std::invalid_argument("lattice json: site count mismatch");
    lat = std::move(rebuilt);
}

}  // namespace rydsim
