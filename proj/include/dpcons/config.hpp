// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "dpcons/device.hpp"

// Kernel-configuration selection for consolidated children: a min-of-limits
// occupancy calculation plus the KC_X downgrade rule.

namespace dpcons {

struct Occupancy {
    std::int64_t blocksPerSM = 0;
    double occupancyFraction = 0.0;
    std::int64_t occupancyBlocks = 0; // B_occ = blocksPerSM * smCount
    std::int64_t threadsPerBlock = 0;
};

struct OccupancyResult {
    std::optional<Occupancy> value;
    std::string error;
    bool ok() const { return value.has_value(); }
};

inline OccupancyResult occupancy(const KernelResourceUsage& usage, const DeviceModel& device) {
    OccupancyResult res;
    const std::int64_t T = usage.threadsPerBlock;
    if (T < 1) {
        res.error = "threadsPerBlock must be >= 1";
        return res;
    }
    if (T > device.maxThreadsPerBlock) {
        res.error = "threadsPerBlock exceeds device limit";
        return res;
    }
    const std::int64_t warpsPerBlock = (T + kWarpSize - 1) / kWarpSize;
    std::int64_t blocks = device.maxBlocksPerSM;
    blocks = std::min(blocks, device.maxWarpsPerSM / warpsPerBlock);
    if (usage.sharedBytesPerBlock > 0)
        blocks = std::min(blocks, device.sharedBytesPerSM / usage.sharedBytesPerBlock);
    if (usage.registersPerThread > 0)
        blocks = std::min(blocks, device.regsPerSM / (T * usage.registersPerThread));
    if (blocks < 1) {
        res.error = "kernel is unlaunchable: resource limits allow zero blocks per SM";
        return res;
    }
    Occupancy occ;
    occ.blocksPerSM = blocks;
    occ.threadsPerBlock = T;
    occ.occupancyFraction = static_cast<double>(blocks * warpsPerBlock) /
                            static_cast<double>(device.maxWarpsPerSM);
    occ.occupancyBlocks = blocks * device.smCount;
    res.value = occ;
    return res;
}

// KC_X: downgrade the occupancy-maximizing (B, T) to (max(1, B/X), T) so X
// kernels can be active at once.
struct KernelConfig {
    std::int64_t blocks = 1;
    std::int64_t threadsPerBlock = 1;
    std::int64_t concurrencyTarget = 1; // X; 0 marks 1-1 mapping
};

inline KernelConfig kc_config(std::int64_t occupancyBlocks, std::int64_t threadsPerBlock,
                              std::int64_t concurrency) {
    KernelConfig cfg;
    cfg.threadsPerBlock = threadsPerBlock;
    cfg.concurrencyTarget = concurrency;
    cfg.blocks = std::max<std::int64_t>(1, occupancyBlocks / std::max<std::int64_t>(1, concurrency));
    return cfg;
}

inline std::int64_t default_concurrency(ast::Granularity g) {
    switch (g) {
        case ast::Granularity::Grid: return 1;   // KC_1
        case ast::Granularity::Block: return 16; // KC_16
        case ast::Granularity::Warp: return 32;  // KC_32
    }
    return 32;
}

// How the consolidated child's launch configuration is chosen.
enum class ConfigScheme {
    KcDefault,  // KC_X with X = default_concurrency(granularity)
    KcExplicit, // KC_X with a caller-chosen X
    OneToOne,   // blocks (or threads for thread-mapped children) = item count
    Explicit,   // caller-provided (B, T)
};

struct ConfigChoice {
    ConfigScheme scheme = ConfigScheme::KcDefault;
    std::int64_t concurrency = 0;       // KcExplicit
    std::int64_t explicitBlocks = 0;    // Explicit
    std::int64_t explicitThreads = 0;   // Explicit

    static ConfigChoice kc_default() { return {}; }
    static ConfigChoice kc(std::int64_t x) {
        ConfigChoice c;
        c.scheme = ConfigScheme::KcExplicit;
        c.concurrency = x;
        return c;
    }
    static ConfigChoice one_to_one() {
        ConfigChoice c;
        c.scheme = ConfigScheme::OneToOne;
        return c;
    }
    static ConfigChoice explicit_bt(std::int64_t b, std::int64_t t) {
        ConfigChoice c;
        c.scheme = ConfigScheme::Explicit;
        c.explicitBlocks = b;
        c.explicitThreads = t;
        return c;
    }

    std::string describe(ast::Granularity g) const {
        switch (scheme) {
            case ConfigScheme::KcDefault:
                return "KC_" + std::to_string(default_concurrency(g));
            case ConfigScheme::KcExplicit:
                return "KC_" + std::to_string(concurrency);
            case ConfigScheme::OneToOne:
                return "1-1";
            case ConfigScheme::Explicit:
                return "B=" + std::to_string(explicitBlocks) +
                       ",T=" + std::to_string(explicitThreads);
        }
        return "?";
    }
};

} // namespace dpcons
