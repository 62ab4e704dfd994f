// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpcons/ast.hpp"

// Consolidation-buffer planning: the per-buffer sizing formula, the three
// allocator strategies, and pool accounting for the pre-allocated memory
// pool used by the custom allocator.

namespace dpcons {

inline constexpr std::int64_t kEntryBytes = 8;        // one 64-bit index/handle per slot
inline constexpr std::int64_t kDefaultSizeConst = 4;  // work items per thread estimate
inline constexpr int kWarpSize = 32;

enum class AllocatorKind { Default, Halloc, Prealloc };

inline AllocatorKind allocator_for(ast::BufferType t) {
    switch (t) {
        case ast::BufferType::Default: return AllocatorKind::Default;
        case ast::BufferType::Halloc: return AllocatorKind::Halloc;
        case ast::BufferType::Custom: return AllocatorKind::Prealloc;
    }
    return AllocatorKind::Prealloc;
}

inline const char* to_string(AllocatorKind k) {
    switch (k) {
        case AllocatorKind::Default: return "default";
        case AllocatorKind::Halloc: return "halloc";
        case AllocatorKind::Prealloc: return "prealloc";
    }
    return "?";
}

// Cycle costs charged by the simulator per allocation/free. The prealloc
// allocator is a bump pointer over the pool, so it is near-free; the other
// two model device-heap allocators. Values are calibration constants.
struct AllocatorModel {
    AllocatorKind kind = AllocatorKind::Prealloc;
    std::int64_t perAllocCostCycles = 10;
    std::int64_t perFreeCostCycles = 0;
};

inline AllocatorModel default_allocator_model(AllocatorKind k) {
    switch (k) {
        case AllocatorKind::Default: return {k, 1200, 800};
        case AllocatorKind::Halloc: return {k, 1000, 700};
        case AllocatorKind::Prealloc: return {k, 10, 0};
    }
    return {};
}

// perBufferSize prediction: totalThread * totalBuffVar * const.
inline std::int64_t per_buffer_size(std::int64_t totalThread, std::int64_t totalBuffVar,
                                    std::int64_t constFactor = kDefaultSizeConst) {
    if (totalThread < 1 || totalBuffVar < 1 || constFactor < 1)
        throw std::invalid_argument("per_buffer_size: all inputs must be >= 1");
    return totalThread * totalBuffVar * constFactor;
}

struct BufferSpec {
    ast::BufferType bufferType = ast::BufferType::Custom;
    std::int64_t perBufferSizeEntries = 0;
    std::int64_t totalSizeBytes = ast::Directive::kDefaultTotalSizeBytes;
    std::int64_t totalBuffVar = 1;
    std::int64_t entryBytes = kEntryBytes;
};

struct BufferPlan {
    ast::Granularity granularity = ast::Granularity::Warp;
    std::int64_t bufferCount = 0;       // #warps, #blocks, or 1
    std::int64_t capacityEntries = 0;   // per buffer, in work items
    BufferSpec spec;
    AllocatorKind allocator = AllocatorKind::Prealloc;

    std::int64_t bytes_per_buffer() const {
        return capacityEntries * spec.totalBuffVar * spec.entryBytes;
    }
    std::int64_t total_bytes() const { return bytes_per_buffer() * bufferCount; }
};

struct PlanError {
    std::string message;
};

struct PlanResult {
    std::optional<BufferPlan> plan;
    std::optional<PlanError> error;
    bool ok() const { return plan.has_value(); }
};

struct ParentGeometry {
    std::int64_t blocks = 1;
    std::int64_t threadsPerBlock = 1;
};

// Static buffer planning for one annotated launch site. Capacity resolution
// order: directive literal, then the evaluated runtime variable (when the
// caller can supply it), then the sizing formula. Grid granularity gets a
// single buffer spanning the whole pool; perBufferSize is ignored there.
inline PlanResult plan_buffers(const ast::Directive& directive, ast::Granularity granularity,
                               ParentGeometry geometry,
                               std::optional<std::int64_t> runtimeSizeValue = std::nullopt) {
    PlanResult res;
    if (geometry.blocks < 1 || geometry.threadsPerBlock < 1) {
        res.error = PlanError{"parent geometry must be positive"};
        return res;
    }
    BufferPlan plan;
    plan.granularity = granularity;
    plan.allocator = allocator_for(directive.bufferType);
    plan.spec.bufferType = directive.bufferType;
    plan.spec.totalSizeBytes = directive.totalSizeBytes;
    plan.spec.totalBuffVar = static_cast<std::int64_t>(directive.workVars.size());
    if (plan.spec.totalBuffVar < 1) {
        res.error = PlanError{"directive has no work variables"};
        return res;
    }

    const std::int64_t warpsPerBlock = (geometry.threadsPerBlock + kWarpSize - 1) / kWarpSize;
    std::int64_t ownerThreads = 0;
    switch (granularity) {
        case ast::Granularity::Warp:
            plan.bufferCount = geometry.blocks * warpsPerBlock;
            ownerThreads = kWarpSize;
            break;
        case ast::Granularity::Block:
            plan.bufferCount = geometry.blocks;
            ownerThreads = geometry.threadsPerBlock;
            break;
        case ast::Granularity::Grid:
            plan.bufferCount = 1;
            ownerThreads = geometry.blocks * geometry.threadsPerBlock;
            break;
    }

    if (granularity == ast::Granularity::Grid) {
        plan.capacityEntries = plan.spec.totalSizeBytes / (plan.spec.totalBuffVar * kEntryBytes);
    } else if (directive.perBufferSizeLit) {
        plan.capacityEntries = *directive.perBufferSizeLit;
    } else if (directive.perBufferSizeVar && runtimeSizeValue) {
        plan.capacityEntries = *runtimeSizeValue;
    } else {
        plan.capacityEntries = per_buffer_size(ownerThreads, plan.spec.totalBuffVar);
    }
    if (plan.capacityEntries < 1) {
        res.error = PlanError{"buffer capacity must be positive"};
        return res;
    }
    plan.spec.perBufferSizeEntries = plan.capacityEntries;

    if (plan.allocator == AllocatorKind::Prealloc && plan.total_bytes() > plan.spec.totalSizeBytes) {
        res.error = PlanError{"pool overflow: plan needs " + std::to_string(plan.total_bytes()) +
                              " bytes, pool holds " + std::to_string(plan.spec.totalSizeBytes) +
                              " (deficit " +
                              std::to_string(plan.total_bytes() - plan.spec.totalSizeBytes) + ")"};
        return res;
    }
    res.plan = plan;
    return res;
}

} // namespace dpcons
