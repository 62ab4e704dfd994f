// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "dpcons/diag.hpp"
#include "dpcons/memplan.hpp"

namespace dpcons {

// Simulated device limits. Defaults mirror a K20c-class part.
struct DeviceModel {
    std::int64_t smCount = 13;
    std::int64_t maxWarpsPerSM = 64;
    std::int64_t maxBlocksPerSM = 16;
    std::int64_t maxThreadsPerBlock = 1024;
    std::int64_t regsPerSM = 65536;
    std::int64_t sharedBytesPerSM = 49152;
    std::int64_t maxConcurrentKernels = 32;
    std::int64_t pendingFixedPoolCapacity = 2048;
    std::int64_t maxNestingDepth = 24;
    std::int64_t swapReservationBytesPerLevel = 150ll * 1024 * 1024;
    std::int64_t globalMemBytes = 5ll * 1024 * 1024 * 1024;

    std::int64_t resident_block_capacity() const { return smCount * maxBlocksPerSM; }
    std::int64_t resident_warp_capacity() const { return smCount * maxWarpsPerSM; }
};

// Cycle charges for the execution model. These are calibration constants:
// chosen to reproduce the qualitative orderings reported for launch,
// buffering and synchronization overheads, not absolute timings.
struct CostModel {
    std::int64_t instructionCycles = 1;
    std::int64_t dramTxCycles = 4;
    std::int64_t launchOverheadCycles = 5000;
    std::int64_t virtualPoolExtraCyclesPerKernel = 2000;
    std::int64_t insertionCycles = 20;
    std::int64_t blockBarrierCycles = 50;
    std::int64_t globalBarrierCyclesPerBlock = 100;
    std::int64_t swapCostCyclesPerLevel = 10000;
    AllocatorModel allocDefault = default_allocator_model(AllocatorKind::Default);
    AllocatorModel allocHalloc = default_allocator_model(AllocatorKind::Halloc);
    AllocatorModel allocPrealloc = default_allocator_model(AllocatorKind::Prealloc);

    const AllocatorModel& allocator(AllocatorKind k) const {
        switch (k) {
            case AllocatorKind::Default: return allocDefault;
            case AllocatorKind::Halloc: return allocHalloc;
            case AllocatorKind::Prealloc: return allocPrealloc;
        }
        return allocPrealloc;
    }
};

// Per-kernel resource usage. The DSL has no register allocator, so these are
// user-supplied stubs keyed by kernel name in the config file.
struct KernelResourceUsage {
    std::int64_t threadsPerBlock = 0;
    std::int64_t registersPerThread = 0;
    std::int64_t sharedBytesPerBlock = 0;
};

struct SimConfig {
    DeviceModel device;
    CostModel cost;
    std::map<std::string, std::int64_t> kernelRegs;    // regs.<kernel> = N
    std::map<std::string, std::int64_t> kernelShared;  // shared.<kernel> = N

    KernelResourceUsage usage_for(const std::string& kernel, std::int64_t threadsPerBlock) const {
        KernelResourceUsage u;
        u.threadsPerBlock = threadsPerBlock;
        auto r = kernelRegs.find(kernel);
        if (r != kernelRegs.end()) u.registersPerThread = r->second;
        auto s = kernelShared.find(kernel);
        if (s != kernelShared.end()) u.sharedBytesPerBlock = s->second;
        return u;
    }
};

struct ConfigLoadResult {
    std::optional<SimConfig> config;
    DiagList diags;
    bool ok() const { return config.has_value() && diags.empty(); }
};

// Parses the `key = value` simulator config format. Unknown keys are errors
// so typos do not silently fall back to defaults.
inline ConfigLoadResult parse_sim_config(const std::string& text) {
    ConfigLoadResult res;
    SimConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    DiagList diags;
    auto fail = [&](const std::string& msg) {
        diags.push_back(make_diag("config.parse", msg, SourceLoc{lineno, 1}));
    };
    while (std::getline(in, line)) {
        lineno++;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail("expected 'key = value'");
            continue;
        }
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            return s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string valText = trim(line.substr(eq + 1));
        std::int64_t val = 0;
        try {
            size_t used = 0;
            val = std::stoll(valText, &used);
            if (used != valText.size()) throw std::invalid_argument(valText);
        } catch (...) {
            fail("value for '" + key + "' is not an integer");
            continue;
        }

        DeviceModel& d = cfg.device;
        CostModel& c = cfg.cost;
        if (key == "smCount") d.smCount = val;
        else if (key == "maxWarpsPerSM") d.maxWarpsPerSM = val;
        else if (key == "maxBlocksPerSM") d.maxBlocksPerSM = val;
        else if (key == "maxThreadsPerBlock") d.maxThreadsPerBlock = val;
        else if (key == "regsPerSM") d.regsPerSM = val;
        else if (key == "sharedBytesPerSM") d.sharedBytesPerSM = val;
        else if (key == "maxConcurrentKernels") d.maxConcurrentKernels = val;
        else if (key == "pendingFixedPoolCapacity") d.pendingFixedPoolCapacity = val;
        else if (key == "maxNestingDepth") d.maxNestingDepth = val;
        else if (key == "swapReservationBytesPerLevel") d.swapReservationBytesPerLevel = val;
        else if (key == "globalMemBytes") d.globalMemBytes = val;
        else if (key == "instructionCycles") c.instructionCycles = val;
        else if (key == "dramTxCycles") c.dramTxCycles = val;
        else if (key == "launchOverheadCycles") c.launchOverheadCycles = val;
        else if (key == "virtualPoolExtraCyclesPerKernel") c.virtualPoolExtraCyclesPerKernel = val;
        else if (key == "insertionCycles") c.insertionCycles = val;
        else if (key == "blockBarrierCycles") c.blockBarrierCycles = val;
        else if (key == "globalBarrierCyclesPerBlock") c.globalBarrierCyclesPerBlock = val;
        else if (key == "swapCostCyclesPerLevel") c.swapCostCyclesPerLevel = val;
        else if (key == "allocDefaultCycles") c.allocDefault.perAllocCostCycles = val;
        else if (key == "allocHallocCycles") c.allocHalloc.perAllocCostCycles = val;
        else if (key == "allocPreallocCycles") c.allocPrealloc.perAllocCostCycles = val;
        else if (key == "freeDefaultCycles") c.allocDefault.perFreeCostCycles = val;
        else if (key == "freeHallocCycles") c.allocHalloc.perFreeCostCycles = val;
        else if (key == "freePreallocCycles") c.allocPrealloc.perFreeCostCycles = val;
        else if (key.rfind("regs.", 0) == 0) cfg.kernelRegs[key.substr(5)] = val;
        else if (key.rfind("shared.", 0) == 0) cfg.kernelShared[key.substr(7)] = val;
        else fail("unknown config key '" + key + "'");
    }
    res.diags = std::move(diags);
    if (res.diags.empty()) res.config = std::move(cfg);
    return res;
}

inline ConfigLoadResult load_sim_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        ConfigLoadResult res;
        res.diags.push_back(make_diag("config.io", "cannot open config file '" + path + "'"));
        return res;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_sim_config(ss.str());
}

} // namespace dpcons
