#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rydsim/errors.hpp"
#include "rydsim/lattice.hpp"

namespace rydsim {

using Config = std::uint64_t;  // bit i = n_i of site i
using Complex = std::complex<double>;

enum class BasisConstraint { full, nn_blockade };

inline const char* to_string(BasisConstraint c) {
    return c == BasisConstraint::full ? "full" : "nn_blockade";
}

inline constexpr int kFullBasisSiteCap = 24;
inline constexpr int kBlockadeBasisSiteCap = 36;  // 6x6 square

struct BasisConfig {
    int n_sites = 0;
    BasisConstraint constraint = BasisConstraint::full;
    std::vector<std::array<int, 2>> neighbor_pairs;  // used by nn_blockade only

    static BasisConfig full(int n_sites) { return {n_sites, BasisConstraint::full, {}}; }
    static BasisConfig blockaded(const Lattice& lat) {
        return {lat.n_sites(), BasisConstraint::nn_blockade, nearest_neighbor_pairs(lat)};
    }
};

inline int occupation(Config c, int site) { return static_cast<int>((c >> site) & 1u); }

inline double hamming_density(Config c, int n_sites) {
    if (n_sites <= 0) throw std::invalid_argument("hamming_density: n_sites must be > 0");
    return static_cast<double>(std::popcount(c)) / n_sites;
}

// Enumerated many-body basis in strictly increasing bit-pattern order.
class Basis {
  public:
    Basis(BasisConfig cfg, std::vector<Config> configs)
        : cfg_(std::move(cfg)), configs_(std::move(configs)) {}

    int n_sites() const { return cfg_.n_sites; }
    BasisConstraint constraint() const { return cfg_.constraint; }
    const BasisConfig& config() const { return cfg_; }
    std::size_t size() const { return configs_.size(); }
    Config at(std::size_t k) const { return configs_[k]; }
    const std::vector<Config>& configs() const { return configs_; }

    // Position of a bit pattern, or nullopt if not in the basis.
    std::optional<std::size_t> lookup(Config c) const {
        auto it = std::lower_bound(configs_.begin(), configs_.end(), c);
        if (it == configs_.end() || *it != c) return std::nullopt;
        return static_cast<std::size_t>(it - configs_.begin());
    }

  private:
    BasisConfig cfg_;
    std::vector<Config> configs_;
};

namespace detail {

// MSB-first decision tree: visiting the 0-branch before the 1-branch yields
// configs in ascending numeric order. When setting bit `site` only neighbors
// with higher index are already decided, which checks each edge exactly once.
inline void enumerate_blockaded(int site, Config acc,
                                const std::vector<Config>& neighbor_mask,
                                std::vector<Config>& out) {
    if (site < 0) {
        out.push_back(acc);
        return;
    }
    enumerate_blockaded(site - 1, acc, neighbor_mask, out);
    if ((acc & neighbor_mask[site]) == 0)
        enumerate_blockaded(site - 1, acc | (Config{1} << site), neighbor_mask, out);
}

}  // namespace detail

inline std::shared_ptr<const Basis> enumerate_basis(const BasisConfig& cfg) {
    if (cfg.n_sites < 1) throw std::invalid_argument("enumerate_basis: need >= 1 site");
    std::vector<Config> configs;
    if (cfg.constraint == BasisConstraint::full) {
        if (cfg.n_sites > kFullBasisSiteCap)
            throw SizeCapError("enumerate_basis: full basis capped at " +
                               std::to_string(kFullBasisSiteCap) + " sites, requested " +
                               std::to_string(cfg.n_sites));
        configs.resize(std::size_t{1} << cfg.n_sites);
        for (std::size_t k = 0; k < configs.size(); ++k) configs[k] = k;
    } else {
        if (cfg.n_sites > kBlockadeBasisSiteCap)
            throw SizeCapError("enumerate_basis: nn_blockade basis capped at " +
                               std::to_string(kBlockadeBasisSiteCap) + " sites (6x6), requested " +
                               std::to_string(cfg.n_sites));
        std::vector<Config> mask(cfg.n_sites, 0);
        for (const auto& [i, j] : cfg.neighbor_pairs) {
            if (i < 0 || j < 0 || i >= cfg.n_sites || j >= cfg.n_sites || i == j)
                throw std::invalid_argument("enumerate_basis: bad neighbor pair");
            mask[i] |= Config{1} << j;
            mask[j] |= Config{1} << i;
        }
        detail::enumerate_blockaded(cfg.n_sites - 1, 0, mask, configs);
    }
    return std::make_shared<Basis>(cfg, std::move(configs));
}

// Complex amplitudes over a basis. Single-writer, many-reader; operations
// that renormalize say so.
struct StateVector {
    std::shared_ptr<const Basis> basis;
    Eigen::VectorXcd amplitudes;

    static StateVector zero(std::shared_ptr<const Basis> b) {
        StateVector s;
        s.amplitudes = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(b->size()));
        s.basis = std::move(b);
        return s;
    }

    // Basis state |c>; throws if c is not in the basis.
    static StateVector basis_state(std::shared_ptr<const Basis> b, Config c) {
        auto idx = b->lookup(c);
        if (!idx) throw std::invalid_argument("basis_state: configuration not in basis");
        StateVector s = zero(std::move(b));
        s.amplitudes[static_cast<Eigen::Index>(*idx)] = 1.0;
        return s;
    }

    double norm() const { return amplitudes.norm(); }
    void normalize() { amplitudes /= amplitudes.norm(); }
};

// --- binary snapshot -------------------------------------------------------
// Layout (little-endian): u32 n_sites, u32 constraint, u64 n_configs,
// u32 bytes_per_amplitude (16 = complex128, 8 = complex64), then amplitudes.

inline void save_statevector(const std::string& path, const StateVector& state) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("save_statevector: cannot open " + path);
    const std::uint32_t n_sites = static_cast<std::uint32_t>(state.basis->n_sites());
    const std::uint32_t constraint =
        state.basis->constraint() == BasisConstraint::full ? 0u : 1u;
    const std::uint64_t n_configs = state.basis->size();
    const std::uint32_t amp_bytes = 16;
    std::fwrite(&n_sites, sizeof n_sites, 1, f);
    std::fwrite(&constraint, sizeof constraint, 1, f);
    std::fwrite(&n_configs, sizeof n_configs, 1, f);
    std::fwrite(&amp_bytes, sizeof amp_bytes, 1, f);
    std::fwrite(state.amplitudes.data(), sizeof(Complex),
                static_cast<std::size_t>(state.amplitudes.size()), f);
    std::fclose(f);
}

inline StateVector load_statevector(const std::string& path,
                                    std::shared_ptr<const Basis> basis) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("load_statevector: cannot open " + path);
    std::uint32_t n_sites = 0, constraint = 0, amp_bytes = 0;
    std::uint64_t n_configs = 0;
    bool ok = std::fread(&n_sites, sizeof n_sites, 1, f) == 1 &&
              std::fread(&constraint, sizeof constraint, 1, f) == 1 &&
              std::fread(&n_configs, sizeof n_configs, 1, f) == 1 &&
              std::fread(&amp_bytes, sizeof amp_bytes, 1, f) == 1;
    if (!ok) {
        std::fclose(f);
        throw std::runtime_error("load_statevector: truncated header in " + path);
    }
    if (static_cast<int>(n_sites) != basis->n_sites() || n_configs != basis->size() ||
        constraint != (basis->constraint() == BasisConstraint::full ? 0u : 1u)) {
        std::fclose(f);
        throw BasisMismatchError("load_statevector: snapshot header does not match basis");
    }
    StateVector s = StateVector::zero(std::move(basis));
    if (amp_bytes == 16) {
        ok = std::fread(s.amplitudes.data(), sizeof(Complex), n_configs, f) == n_configs;
    } else if (amp_bytes == 8) {
        std::vector<std::complex<float>> tmp(n_configs);
        ok = std::fread(tmp.data(), sizeof(std::complex<float>), n_configs, f) == n_configs;
        for (std::size_t k = 0; k < n_configs; ++k)
            s.amplitudes[static_cast<Eigen::Index>(k)] = tmp[k];
    } else {
        ok = false;
    }
    std::fclose(f);
    if (!ok) throw std::runtime_error("load_statevector: truncated or bad payload in " + path);
    return s;
}

}  // namespace rydsim
