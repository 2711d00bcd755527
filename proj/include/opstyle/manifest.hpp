#pragma once

// Run manifest: one JSON record per CLI invocation, written before any
// long-running work so interrupted runs still leave an audit trail.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "opstyle/common.hpp"

namespace opstyle {

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

inline std::string hash_hex(uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct RunManifest {
    std::string subcommand;
    nlohmann::json config;  // every resolved option, after file/flag merging
    uint64_t seed = 0;
    std::string checkpoint_hash;  // empty when no checkpoint is involved
    std::vector<std::string> output_paths;
    std::string started_at;
    std::string finished_at;  // filled by finish(); absent in the initial write

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["subcommand"] = subcommand;
        j["config"] = config;
        j["seed"] = seed;
        if (!checkpoint_hash.empty()) j["checkpoint_hash"] = checkpoint_hash;
        j["output_paths"] = output_paths;
        j["started_at"] = started_at;
        if (!finished_at.empty()) j["finished_at"] = finished_at;
        return j;
    }

    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        check(bool(out), "manifest: cannot open " + path);
        out << to_json().dump(2) << "\n";
        check(bool(out), "manifest: write failed for " + path);
    }

    // re-write with the completion timestamp once the run has succeeded
    void finish(const std::string& path) {
        finished_at = utc_timestamp();
        write(path);
    }
};

inline RunManifest start_manifest(const std::string& subcommand, nlohmann::json config,
                                  uint64_t seed) {
    RunManifest m;
    m.subcommand = subcommand;
    m.config = std::move(config);
    m.seed = seed;
    m.started_at = utc_timestamp();
    return m;
}

} // namespace opstyle
