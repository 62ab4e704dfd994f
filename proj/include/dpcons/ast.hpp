// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dpcons/diag.hpp"

// AST for the kernel DSL. Nodes are plain value types (deep copy by default)
// so the consolidation rewrite can freely build new programs from pieces of
// the input one.

namespace dpcons::ast {

enum class ScalarKind { Int, Float };

enum class ExprKind {
    IntLit,
    FloatLit,
    Name,       // scalar local/param or array handle (in arg position)
    ArrayIndex, // name[expr]
    Unary,      // op in {-, !}
    Binary,     // op in {+,-,*,/,%,<,<=,>,>=,==,!=,&&,||}
    Intrinsic,  // threadIdx, blockIdx, blockDim, gridDim (no args)
    MinMax,     // min(a,b) / max(a,b), name holds "min"/"max"
    AtomicAdd,  // atomicAdd(arr, idx, val) as an expression: returns old value
    BufCount,   // dp_buf_count(): items in the inherited buffer
    BufPending, // dp_buf_pending(): items in this thread's own buffer
    BufGet,     // dp_buf_get(idx, slot): slot-th buffered var of item idx
    BufCfgGrid, // dp_buf_cfg_grid(idx): recorded launch grid of item idx
    BufCfgBlock,// dp_buf_cfg_block(idx): recorded launch block of item idx
    GridLast,   // dp_grid_last(): 1 iff this block's counter decrement hit zero
};

struct Expr {
    ExprKind kind = ExprKind::IntLit;
    std::int64_t ival = 0;   // IntLit
    double fval = 0.0;       // FloatLit
    std::string name;        // Name / ArrayIndex base / Intrinsic name / op / min-max
    std::vector<Expr> args;  // children
    SourceLoc loc;

    bool operator==(const Expr& o) const {
        if (kind != o.kind || ival != o.ival || name != o.name) return false;
        if (kind == ExprKind::FloatLit && fval != o.fval) return false;
        return args == o.args;
    }
};

enum class StmtKind {
    Let,         // int|float name = expr;
    Assign,      // name = expr;
    ArrayStore,  // name[expr] = expr;
    AtomicAdd,   // atomicAdd(arr, idx, val);
    If,          // if (cond) {..} else {..}
    For,         // for (int v = a; v < b; v += c) {..}
    BlockBarrier,
    SyncDevice,
    Launch,      // [#pragma dp ...] name<<<g, b>>>(args);
    Return,
    BufDecl,     // dp_buffers(gran, alloc, nvars, perExpr, totalBytes);
    BufInsert,   // dp_insert(cfgG, cfgB, v0, ...);
    GridBarrier, // dp_grid_barrier;  (naive spin barrier, diagnostic mode)
};

enum class Granularity { Warp, Block, Grid };
enum class BufferType { Default, Halloc, Custom };

inline const char* to_string(Granularity g) {
    switch (g) {
        case Granularity::Warp: return "warp";
        case Granularity::Block: return "block";
        case Granularity::Grid: return "grid";
    }
    return "?";
}

inline const char* to_string(BufferType t) {
    switch (t) {
        case BufferType::Default: return "default";
        case BufferType::Halloc: return "halloc";
        case BufferType::Custom: return "custom";
    }
    return "?";
}

// Parsed `#pragma dp` directive (Table-style clause set).
struct Directive {
    Granularity granularity = Granularity::Warp;
    BufferType bufferType = BufferType::Custom;
    // perBufferSize: literal entry count or the name of an in-scope variable.
    std::optional<std::int64_t> perBufferSizeLit;
    std::optional<std::string> perBufferSizeVar;
    std::int64_t totalSizeBytes = kDefaultTotalSizeBytes;
    std::vector<std::string> workVars;
    std::optional<std::int64_t> threadsOverride;
    std::optional<std::int64_t> blocksOverride;
    SourceLoc loc;

    static constexpr std::int64_t kDefaultTotalSizeBytes = 500ll * 1024 * 1024;

    bool operator==(const Directive& o) const {
        return granularity == o.granularity && bufferType == o.bufferType &&
               perBufferSizeLit == o.perBufferSizeLit &&
               perBufferSizeVar == o.perBufferSizeVar &&
               totalSizeBytes == o.totalSizeBytes && workVars == o.workVars &&
               threadsOverride == o.threadsOverride && blocksOverride == o.blocksOverride;
    }
};

struct Stmt {
    StmtKind kind = StmtKind::Return;
    ScalarKind scalar = ScalarKind::Int; // Let type
    std::string name;                    // Let/Assign/ArrayStore/AtomicAdd/Launch target, For var
    std::vector<Expr> exprs;             // per-kind operand list, see notes below
    std::vector<Stmt> body;              // If-then / For body
    std::vector<Stmt> elseBody;          // If-else
    std::optional<Directive> directive;  // Launch only
    // BufDecl payload:
    Granularity gran = Granularity::Warp;
    BufferType bufType = BufferType::Custom;
    std::int64_t nvars = 0;
    std::int64_t totalBytes = 0;
    SourceLoc loc;

    // Operand layout:
    //   Let/Assign:  exprs[0] = value
    //   ArrayStore:  exprs[0] = index, exprs[1] = value
    //   AtomicAdd:   exprs[0] = index, exprs[1] = value (name = array)
    //   If:          exprs[0] = condition
    //   For:         exprs[0] = init, exprs[1] = limit, exprs[2] = step
    //   Launch:      exprs[0] = grid, exprs[1] = block, exprs[2..] = args (name = kernel)
    //   BufDecl:     exprs[0] = per-buffer entries
    //   BufInsert:   exprs[0] = cfg grid, exprs[1] = cfg block, exprs[2..] = values

    bool operator==(const Stmt& o) const {
        return kind == o.kind && scalar == o.scalar && name == o.name && exprs == o.exprs &&
               body == o.body && elseBody == o.elseBody && directive == o.directive &&
               gran == o.gran && bufType == o.bufType && nvars == o.nvars &&
               totalBytes == o.totalBytes;
    }
};

struct Param {
    std::string name;
    ScalarKind type = ScalarKind::Int;
    bool isArray = false;

    bool operator==(const Param& o) const {
        return name == o.name && type == o.type && isArray == o.isArray;
    }
};

struct KernelDef {
    std::string name;
    std::vector<Param> params;
    std::vector<Stmt> body;
    SourceLoc loc;

    bool operator==(const KernelDef& o) const {
        return name == o.name && params == o.params && body == o.body;
    }
};

struct GlobalArrayDecl {
    std::string name;
    ScalarKind type = ScalarKind::Int;
    Expr length; // evaluated over workload scalars at bind time
    SourceLoc loc;

    bool operator==(const GlobalArrayDecl& o) const {
        return name == o.name && type == o.type && length == o.length;
    }
};

struct EntryDecl {
    std::string kernel;
    Expr grid;
    Expr block;
    std::vector<Expr> args;
    SourceLoc loc;

    bool operator==(const EntryDecl& o) const {
        return kernel == o.kernel && grid == o.grid && block == o.block && args == o.args;
    }
};

struct Program {
    std::vector<GlobalArrayDecl> globals;
    std::vector<KernelDef> kernels;
    EntryDecl entry;
    // Static launch-graph annotation, filled in by the parser: kernels that
    // can reach themselves through launch statements (depth-unbounded).
    std::vector<std::string> recursiveKernels;

    bool operator==(const Program& o) const {
        return globals == o.globals && kernels == o.kernels && entry == o.entry;
    }

    const KernelDef* find_kernel(const std::string& n) const {
        for (const auto& k : kernels)
            if (k.name == n) return &k;
        return nullptr;
    }

    KernelDef* find_kernel(const std::string& n) {
        for (auto& k : kernels)
            if (k.name == n) return &k;
        return nullptr;
    }

    const GlobalArrayDecl* find_global(const std::string& n) const {
        for (const auto& g : globals)
            if (g.name == n) return &g;
        return nullptr;
    }

    bool is_recursive(const std::string& n) const {
        for (const auto& r : recursiveKernels)
            if (r == n) return true;
        return false;
    }
};

// ---- small construction helpers (used by the transform and by tests) ----

inline Expr int_lit(std::int64_t v) {
    Expr e;
    e.kind = ExprKind::IntLit;
    e.ival = v;
    return e;
}

inline Expr float_lit(double v) {
    Expr e;
    e.kind = ExprKind::FloatLit;
    e.fval = v;
    return e;
}

inline Expr name_ref(std::string n) {
    Expr e;
    e.kind = ExprKind::Name;
    e.name = std::move(n);
    return e;
}

inline Expr intrinsic(std::string n) {
    Expr e;
    e.kind = ExprKind::Intrinsic;
    e.name = std::move(n);
    return e;
}

inline Expr array_index(std::string base, Expr idx) {
    Expr e;
    e.kind = ExprKind::ArrayIndex;
    e.name = std::move(base);
    e.args.push_back(std::move(idx));
    return e;
}

inline Expr unary(std::string op, Expr a) {
    Expr e;
    e.kind = ExprKind::Unary;
    e.name = std::move(op);
    e.args.push_back(std::move(a));
    return e;
}

inline Expr binary(std::string op, Expr a, Expr b) {
    Expr e;
    e.kind = ExprKind::Binary;
    e.name = std::move(op);
    e.args.push_back(std::move(a));
    e.args.push_back(std::move(b));
    return e;
}

inline Expr call0(ExprKind kind) {
    Expr e;
    e.kind = kind;
    return e;
}

inline Expr buf_get(Expr idx, std::int64_t slot) {
    Expr e;
    e.kind = ExprKind::BufGet;
    e.args.push_back(std::move(idx));
    e.args.push_back(int_lit(slot));
    return e;
}

inline Stmt let_stmt(ScalarKind t, std::string n, Expr v) {
    Stmt s;
    s.kind = StmtKind::Let;
    s.scalar = t;
    s.name = std::move(n);
    s.exprs.push_back(std::move(v));
    return s;
}

inline Stmt assign_stmt(std::string n, Expr v) {
    Stmt s;
    s.kind = StmtKind::Assign;
    s.name = std::move(n);
    s.exprs.push_back(std::move(v));
    return s;
}

inline Stmt store_stmt(std::string arr, Expr idx, Expr v) {
    Stmt s;
    s.kind = StmtKind::ArrayStore;
    s.name = std::move(arr);
    s.exprs.push_back(std::move(idx));
    s.exprs.push_back(std::move(v));
    return s;
}

inline Stmt atomic_add_stmt(std::string arr, Expr idx, Expr v) {
    Stmt s;
    s.kind = StmtKind::AtomicAdd;
    s.name = std::move(arr);
    s.exprs.push_back(std::move(idx));
    s.exprs.push_back(std::move(v));
    return s;
}

inline Stmt if_stmt(Expr cond, std::vector<Stmt> then, std::vector<Stmt> els = {}) {
    Stmt s;
    s.kind = StmtKind::If;
    s.exprs.push_back(std::move(cond));
    s.body = std::move(then);
    s.elseBody = std::move(els);
    return s;
}

inline Stmt for_stmt(std::string var, Expr init, Expr limit, Expr step, std::vector<Stmt> body) {
    Stmt s;
    s.kind = StmtKind::For;
    s.name = std::move(var);
    s.exprs.push_back(std::move(init));
    s.exprs.push_back(std::move(limit));
    s.exprs.push_back(std::move(step));
    s.body = std::move(body);
    return s;
}

inline Stmt launch_stmt(std::string kernel, Expr grid, Expr block, std::vector<Expr> args,
                        std::optional<Directive> dir = std::nullopt) {
    Stmt s;
    s.kind = StmtKind::Launch;
    s.name = std::move(kernel);
    s.exprs.push_back(std::move(grid));
    s.exprs.push_back(std::move(block));
    for (auto& a : args) s.exprs.push_back(std::move(a));
    s.directive = std::move(dir);
    return s;
}

inline Stmt return_stmt() {
    Stmt s;
    s.kind = StmtKind::Return;
    return s;
}

inline Stmt bare_stmt(StmtKind kind) {
    Stmt s;
    s.kind = kind;
    return s;
}

} // namespace dpcons::ast
