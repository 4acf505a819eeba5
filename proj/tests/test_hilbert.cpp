#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "rydsim/hilbert.hpp"
#include "rydsim/lattice.hpp"

using namespace rydsim;

namespace {

// Brute-force blockade filter of the full basis; independent of the library's
// DFS enumeration.
std::vector<Config> brute_force_blockaded(const BasisConfig& cfg) {
    std::vector<Config> out;
    for (Config c = 0; c < (Config{1} << cfg.n_sites); ++c) {
        bool ok = true;
        for (const auto& [i, j] : cfg.neighbor_pairs)
            if (((c >> i) & 1u) && ((c >> j) & 1u)) {
                ok = false;
                break;
            }
        if (ok) out.push_back(c);
    }
    return out;
}

}  // namespace

TEST_CASE("full basis enumeration") {
    const auto basis = enumerate_basis(BasisConfig::full(2));
    REQUIRE(basis->size() == 4);
    for (std::size_t k = 0; k < 4; ++k) CHECK(basis->at(k) == k);
}

TEST_CASE("1x2 blockade basis removes the doubly excited config") {
    const auto lat = build_lattice(LatticeKind::square, 2, 1, 1.0);
    const auto basis = enumerate_basis(BasisConfig::blockaded(lat));
    REQUIRE(basis->size() == 3);
    CHECK(basis->at(0) == 0b00);
    CHECK(basis->at(1) == 0b01);
    CHECK(basis->at(2) == 0b10);
}

TEST_CASE("blockade basis equals brute-force independent-set filter up to 4x4") {
    for (int L = 2; L <= 4; ++L) {
        const auto lat = build_lattice(LatticeKind::square, L, L, 1.0);
        const auto cfg = BasisConfig::blockaded(lat);
        const auto basis = enumerate_basis(cfg);
        const auto brute = brute_force_blockaded(cfg);
        REQUIRE(basis->size() == brute.size());
        for (std::size_t k = 0; k < brute.size(); ++k) REQUIRE(basis->at(k) == brute[k]);
    }
}

TEST_CASE("blockade basis counts match grid-graph independent sets") {
    // reference counts from the brute-force oracle (2x2..4x4 above); 5x5
    // checked against the exhaustive count in the acceptance suite
    const std::size_t expected[] = {2, 7, 63, 1234, 55447};
    for (int L = 2; L <= 5; ++L) {
        const auto lat = build_lattice(LatticeKind::square, L, L, 1.0);
        CHECK(enumerate_basis(BasisConfig::blockaded(lat))->size() == expected[L - 1]);
    }
}

TEST_CASE("basis lookup round trip") {
    const auto lat = build_lattice(LatticeKind::square, 3, 3, 1.0);
    const auto basis = enumerate_basis(BasisConfig::blockaded(lat));
    for (std::size_t k = 0; k < basis->size(); ++k) {
        auto idx = basis->lookup(basis->at(k));
        REQUIRE(idx.has_value());
        CHECK(*idx == k);
    }
    CHECK_FALSE(basis->lookup(0b11).has_value());  // adjacent pair, not in basis
    // strictly increasing order
    for (std::size_t k = 1; k < basis->size(); ++k) CHECK(basis->at(k) > basis->at(k - 1));
}

TEST_CASE("basis caps are enforced and named") {
    CHECK_THROWS_AS(enumerate_basis(BasisConfig::full(25)), SizeCapError);
    try {
        enumerate_basis(BasisConfig::full(25));
    } catch (const SizeCapError& e) {
        CHECK(std::string(e.what()).find("24") != std::string::npos);
    }
    const auto lat = build_lattice(LatticeKind::square, 7, 6, 1.0);
    CHECK_THROWS_AS(enumerate_basis(BasisConfig::blockaded(lat)), SizeCapError);
}

TEST_CASE("occupation and hamming density") {
    CHECK(occupation(0b0101, 0) == 1);
    CHECK(occupation(0b0101, 1) == 0);
    CHECK(occupation(0b0101, 2) == 1);
    CHECK(hamming_density(0b0101, 4) == Catch::Approx(0.5));
    // perfect checkerboard on 4x4 has density 1/2
    Config cb = 0;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            if ((r + c) % 2 == 0) cb |= Config{1} << (r * 4 + c);
    CHECK(hamming_density(cb, 16) == Catch::Approx(0.5));
}

TEST_CASE("statevector construction and normalization") {
    const auto basis = enumerate_basis(BasisConfig::full(3));
    auto s = StateVector::basis_state(basis, 0b101);
    CHECK(s.norm() == Catch::Approx(1.0));
    CHECK(s.amplitudes[*basis->lookup(0b101)] == Complex(1.0, 0.0));
    CHECK_THROWS_AS(StateVector::basis_state(enumerate_basis(BasisConfig::blockaded(
                                                 build_lattice(LatticeKind::square, 2, 1, 1.0))),
                                             0b11),
                    std::invalid_argument);
}

TEST_CASE("statevector binary snapshot round trip") {
    const auto lat = build_lattice(LatticeKind::square, 3, 2, 1.0);
    const auto basis = enumerate_basis(BasisConfig::blockaded(lat));
    StateVector s = StateVector::zero(basis);
    for (Eigen::Index k = 0; k < s.amplitudes.size(); ++k)
        s.amplitudes[k] = Complex(std::sin(0.1 * k), std::cos(0.2 * k));
    s.normalize();

    const auto path = std::filesystem::temp_directory_path() / "rydsim_sv_test.bin";
    save_statevector(path.string(), s);
    const StateVector back = load_statevector(path.string(), basis);
    REQUIRE(back.amplitudes.size() == s.amplitudes.size());
    for (Eigen::Index k = 0; k < s.amplitudes.size(); ++k)
        CHECK(std::abs(back.amplitudes[k] - s.amplitudes[k]) < 1e-15);

    // header mismatch: different basis
    const auto full = enumerate_basis(BasisConfig::full(6));
    CHECK_THROWS_AS(load_statevector(path.string(), full), BasisMismatchError);
    std::filesystem::remove(path);
}
