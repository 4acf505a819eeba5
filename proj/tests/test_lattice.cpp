#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>

#include "rydsim/lattice.hpp"
#include "rydsim/rng.hpp"
#include "rydsim/units.hpp"

using namespace rydsim;

TEST_CASE("square lattice sites and ordering") {
    const auto lat = build_lattice(LatticeKind::square, 2, 2, 1.0);
    REQUIRE(lat.n_sites() == 4);
    CHECK(lat.sites[0] == std::array<double, 2>{0, 0});
    CHECK(lat.sites[1] == std::array<double, 2>{1, 0});
    CHECK(lat.sites[2] == std::array<double, 2>{0, 1});
    CHECK(lat.sites[3] == std::array<double, 2>{1, 1});
    CHECK(lat.has_grid());

    CHECK(build_lattice(LatticeKind::square, 16, 16, 1.0).n_sites() == 256);

    // stable ordering across calls
    const auto again = build_lattice(LatticeKind::square, 2, 2, 1.0);
    CHECK(again.sites == lat.sites);
}

TEST_CASE("lattice input validation") {
    CHECK_THROWS_AS(build_lattice(LatticeKind::square, 0, 2, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(build_lattice(LatticeKind::square, 2, 2, 0.0), std::invalid_argument);
}

TEST_CASE("triangular lattice neighbor counts") {
    const auto lat = build_lattice(LatticeKind::triangular, 3, 3, 1.0);
    REQUIRE(lat.n_sites() == 9);
    CHECK_FALSE(lat.has_grid());
    // interior site (1,1) has 6 nearest neighbors at distance 1
    int interior = -1;
    for (int i = 0; i < lat.n_sites(); ++i) {
        int nn = 0;
        for (int j = 0; j < lat.n_sites(); ++j)
            if (j != i && std::abs(lat.distance(i, j) - 1.0) < 1e-9) ++nn;
        if (nn == 6) interior = i;
    }
    CHECK(interior >= 0);
}

TEST_CASE("lattice minimum distance is the spacing") {
    for (auto kind : {LatticeKind::square, LatticeKind::honeycomb, LatticeKind::triangular}) {
        const auto lat = build_lattice(kind, 3, 3, 1.0);
        double dmin = 1e9;
        for (int i = 0; i < lat.n_sites(); ++i)
            for (int j = i + 1; j < lat.n_sites(); ++j)
                dmin = std::min(dmin, lat.distance(i, j));
        CHECK(dmin == Catch::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("honeycomb lattice has 3 nearest neighbors in the bulk") {
    const auto lat = build_lattice(LatticeKind::honeycomb, 3, 3, 1.0);
    REQUIRE(lat.n_sites() == 18);
    const auto pairs = nearest_neighbor_pairs(lat);
    std::vector<int> nn(lat.n_sites(), 0);
    for (const auto& [i, j] : pairs) {
        ++nn[i];
        ++nn[j];
    }
    CHECK(*std::max_element(nn.begin(), nn.end()) == 3);
}

TEST_CASE("interaction matrix 1/r^6 values on 3x3 square") {
    const auto lat = build_lattice(LatticeKind::square, 3, 3, 1.0);
    const double v0 = 2.0;
    const auto vm = interaction_matrix(lat, v0, 2.0);
    auto value = [&](int i, int j) {
        for (const auto& t : vm.pair_terms)
            if ((t.i == i && t.j == j) || (t.i == j && t.j == i)) return t.v;
        return 0.0;
    };
    CHECK(value(0, 1) == Catch::Approx(v0));            // distance a
    CHECK(value(0, 4) == Catch::Approx(v0 / 8.0));      // sqrt(2) a
    CHECK(value(0, 2) == Catch::Approx(v0 / 64.0));     // 2a
    CHECK(value(0, 8) == 0.0);                          // 2*sqrt(2) a, truncated
    for (const auto& t : vm.pair_terms) CHECK(t.i < t.j);
}

TEST_CASE("blockade radius definition and paper anchors") {
    CHECK(blockade_radius(1.0, 1.0) == Catch::Approx(1.0));
    CHECK(blockade_radius(64.0, 1.0) == Catch::Approx(2.0));

    // a = 6.7 um, Omega = 2pi x 4.3 MHz, V(a) = 2pi x 9.95 MHz  =>  R_b = 1.15 a
    const double a = 6.7;
    const double v0 = mhz(9.95) * std::pow(a, 6);
    CHECK(blockade_radius(v0, mhz(4.3)) / a == Catch::Approx(1.15).margin(5e-4));

    // R_b/a = 1.15 at Omega = 2pi x 4.3 MHz  =>  V(a) = 2pi x 9.95 MHz
    const double v0b = v0_from_blockade_ratio(1.15, mhz(4.3), a);
    CHECK(to_mhz(v0b / std::pow(a, 6)) == Catch::Approx(9.95).margin(5e-3));

    // R_b/a = 1.47 at Omega = 2pi x 4.2 MHz  =>  V(sqrt2 a) ~ 2pi x 5.3 MHz
    const double v0c = v0_from_blockade_ratio(1.47, mhz(4.2), a);
    const double v_diag = v0c / std::pow(std::sqrt(2.0) * a, 6);
    CHECK(to_mhz(v_diag) == Catch::Approx(5.3).margin(2e-2));

    CHECK_THROWS_AS(blockade_radius(0.0, 1.0), std::invalid_argument);
}

TEST_CASE("interaction truncation monotonicity and scaling") {
    const auto lat = build_lattice(LatticeKind::square, 4, 3, 1.0);
    const auto small = interaction_matrix(lat, 1.0, 2.0);
    const auto large = interaction_matrix(lat, 1.0, 3.5);
    REQUIRE(large.pair_terms.size() > small.pair_terms.size());
    // enlarging the truncation never removes or changes retained pairs
    for (const auto& t : small.pair_terms) {
        bool found = false;
        for (const auto& u : large.pair_terms)
            if (u.i == t.i && u.j == t.j) {
                found = true;
                CHECK(u.v == Catch::Approx(t.v).epsilon(1e-15));
            }
        CHECK(found);
    }

    // scaling the spacing by c scales every V_ij by c^-6
    const double c = 1.7;
    const auto scaled_lat = build_lattice(LatticeKind::square, 4, 3, c);
    const auto scaled = interaction_matrix(scaled_lat, 1.0, 2.0 * c);
    REQUIRE(scaled.pair_terms.size() == small.pair_terms.size());
    for (std::size_t q = 0; q < small.pair_terms.size(); ++q)
        CHECK(scaled.pair_terms[q].v ==
              Catch::Approx(small.pair_terms[q].v * std::pow(c, -6.0)).epsilon(1e-12));
}

TEST_CASE("interaction symmetry holds for random probe pairs") {
    const auto lat = build_lattice(LatticeKind::triangular, 4, 4, 1.3);
    const auto vm = interaction_matrix(lat, 3.0, 4.0);
    // V stored once per unordered pair; reconstruct a dense symmetric lookup
    std::vector<double> dense(lat.n_sites() * lat.n_sites(), 0.0);
    for (const auto& t : vm.pair_terms) {
        dense[t.i * lat.n_sites() + t.j] = t.v;
        dense[t.j * lat.n_sites() + t.i] = t.v;
    }
    std::mt19937_64 gen(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int i = gen() % lat.n_sites(), j = gen() % lat.n_sites();
        CHECK(dense[i * lat.n_sites() + j] == dense[j * lat.n_sites() + i]);
    }
}

TEST_CASE("lattice json round trip") {
    const auto lat = build_lattice(LatticeKind::square, 3, 2, 6.7);
    nlohmann::json j = lat;
    CHECK(j.at("kind") == "square");
    CHECK(j.at("sites").size() == 6);
    const Lattice back = j.get<Lattice>();
    CHECK(back.nx == 3);
    CHECK(back.ny == 2);
    CHECK(back.spacing_um == Catch::Approx(6.7));
    CHECK(back.sites == lat.sites);
}
