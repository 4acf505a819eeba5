#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rydsim/version.hpp"

namespace rydsim {

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Hash of the canonical config dump plus the effective seed; embedded in every
// output file so reruns can be matched to their inputs.
inline std::string config_hash(const nlohmann::json& config, std::uint64_t seed) {
    return hex64(fnv1a64(config.dump() + "#" + std::to_string(seed)));
}

inline std::string provenance_comment(const std::string& hash) {
    return "config_hash=" + hash + " version=" + kVersion;
}

inline std::ofstream open_csv(const std::filesystem::path& path, const std::string& comment,
                              const std::string& header) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open output file " + path.string());
    f << "# " << comment << "\n" << header << "\n";
    return f;
}

inline void write_json_file(const std::filesystem::path& path, nlohmann::json j,
                            const std::string& hash) {
    j["config_hash"] = hash;
    j["version"] = kVersion;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open output file " + path.string());
    f << j.dump(2) << "\n";
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace rydsim
